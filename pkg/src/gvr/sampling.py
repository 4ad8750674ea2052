"""Seeded batch assembly for the contrastive stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gvr.bank import EmbeddingBank
from gvr.errors import ConfigurationError, ContractViolation


@dataclass
class Batch:
    """N videos paired with same-class sentences."""

    video_ids: list[str]
    sentence_rows: list[int]
    labels: np.ndarray  # int64 [N]

    def __post_init__(self):
        if len(self.video_ids) < 2:
            raise ContractViolation("a batch needs at least 2 pairs")
        if not (len(self.video_ids) == len(self.sentence_rows) == len(self.labels)):
            raise ContractViolation("batch fields disagree in length")


def draw_sentence_for(bank: EmbeddingBank, class_id: int, rng) -> int:
    rows = bank.sentence_rows_of_class(class_id)
    if not rows:
        raise ConfigurationError(f"class {class_id} has no sentences in the bank")
    return int(rows[rng.integers(0, len(rows))])


def sample_batch(bank: EmbeddingBank, split, n: int, rng) -> Batch:
    """Uniformly draw n distinct train videos, each paired with one uniform
    sentence from its own class corpus."""
    pool = split.train
    if len(pool) < n:
        raise ConfigurationError(f"split has {len(pool)} train videos, batch needs {n}")
    idx = rng.choice(len(pool), size=n, replace=False)
    video_ids = [pool[i] for i in idx]
    labels = np.array([bank.video_class(v) for v in video_ids], dtype=np.int64)
    sentence_rows = [draw_sentence_for(bank, int(c), rng) for c in labels]
    return Batch(video_ids, sentence_rows, labels)


def epoch_batches(bank: EmbeddingBank, split, batch_size: int, rng):
    """One epoch: a seeded permutation of the train videos, chunked.

    The trailing chunk is dropped when smaller than 2 (a batch needs 2 pairs).
    """
    pool = list(split.train)
    order = rng.permutation(len(pool))
    for lo in range(0, len(pool), batch_size):
        chunk = order[lo:lo + batch_size]
        if len(chunk) < 2:
            continue
        video_ids = [pool[i] for i in chunk]
        labels = np.array([bank.video_class(v) for v in video_ids], dtype=np.int64)
        sentence_rows = [draw_sentence_for(bank, int(c), rng) for c in labels]
        yield Batch(video_ids, sentence_rows, labels)
