"""Batch sampling: pairing, determinism, uniformity."""

import numpy as np
import pytest

from gvr.errors import ConfigurationError
from gvr.sampling import epoch_batches, sample_batch
from gvr.splits import SplitSpec

from util import build_bank


def split_over(bank):
    videos = bank.all_video_ids()
    return SplitSpec(regime="close", train=videos, val=[], test=[],
                     class_train_counts={}, seed=0)


class TestSampleBatch:
    def test_single_video_classes_forced_coverage(self):
        bank = build_bank(spec={0: (1, 2, 3), 1: (1, 2, 3)})
        batch = sample_batch(bank, split_over(bank), n=2, rng=np.random.default_rng(0))
        assert sorted(batch.video_ids) == ["c0v0", "c1v0"]
        for vid, srow in zip(batch.video_ids, batch.sentence_rows):
            assert bank.records[srow].class_id == bank.video_class(vid)

    def test_deterministic_given_seed(self):
        bank = build_bank(spec={0: (3, 2, 4), 1: (3, 2, 4)})
        split = split_over(bank)
        a = sample_batch(bank, split, 4, np.random.default_rng(123))
        b = sample_batch(bank, split, 4, np.random.default_rng(123))
        assert a.video_ids == b.video_ids
        assert a.sentence_rows == b.sentence_rows

    def test_never_pairs_across_classes(self):
        bank = build_bank(spec={0: (4, 2, 5), 1: (4, 2, 5), 2: (4, 2, 5)})
        split = split_over(bank)
        rng = np.random.default_rng(9)
        for _ in range(200):
            batch = sample_batch(bank, split, 6, rng)
            for vid, srow, label in zip(batch.video_ids, batch.sentence_rows, batch.labels):
                assert bank.video_class(vid) == label == bank.records[srow].class_id

    def test_uniform_within_binomial_bound(self):
        # 4 equal classes, 1e4 single-video draws: 3 sigma around p = 1/4
        bank = build_bank(spec={c: (2, 1, 1) for c in range(4)})
        split = split_over(bank)
        rng = np.random.default_rng(42)
        draws = 10_000
        hits = np.zeros(4)
        for _ in range(draws // 2):
            batch = sample_batch(bank, split, 2, rng)
            for label in batch.labels:
                hits[label] += 1
        p = 1 / 4
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(hits - draws * p) < 3 * sigma)

    def test_zero_sentence_class_rejected(self):
        bank = build_bank(spec={0: (2, 2, 0), 1: (2, 2, 1)})
        with pytest.raises(ConfigurationError, match="class 0"):
            sample_batch(bank, split_over(bank), 4, np.random.default_rng(0))

    def test_batch_larger_than_pool_rejected(self):
        bank = build_bank(spec={0: (1, 2, 1), 1: (1, 2, 1)})
        with pytest.raises(ConfigurationError):
            sample_batch(bank, split_over(bank), 3, np.random.default_rng(0))


class TestEpochBatches:
    def test_covers_every_video_once(self):
        bank = build_bank(spec={0: (5, 2, 2), 1: (5, 2, 2)})
        split = split_over(bank)
        seen = []
        for batch in epoch_batches(bank, split, 4, np.random.default_rng(1)):
            seen.extend(batch.video_ids)
        assert sorted(seen) == sorted(split.train)

    def test_drops_singleton_tail(self):
        bank = build_bank(spec={0: (3, 1, 1), 1: (2, 1, 1)})
        split = split_over(bank)
        batches = list(epoch_batches(bank, split, 2, np.random.default_rng(1)))
        assert [len(b.video_ids) for b in batches] == [2, 2]
