"""Regime-level evaluation flows on small synthetic banks."""

import numpy as np
import pytest

from gvr import evaluate as E
from gvr.head import Stage2Config, TSRConfig, run_stage2, select_salient_texts
from gvr.model import ModelConfig, ModelParams
from gvr.splits import (
    ParetoConfig,
    build_close_split,
    build_lt_split,
    build_open_split,
)
from gvr.synthetic import SyntheticConfig, make_synthetic


@pytest.fixture(scope="module")
def world():
    cfg = SyntheticConfig(classes=6, dim=16, frames=3, train_videos=14, test_videos=4,
                          salient_sentences=5, noise_sentences=3, prompt_sentences=1,
                          misalign=False, seed=7)
    bank, dataset = make_synthetic(cfg)
    params = ModelParams.init(ModelConfig(dim_base=16, layers=1, heads=2, f_max=4,
                                          dtype="float64"), seed=0)
    return bank, dataset, params


def train_head_for(bank, split, params, class_ids=None, epochs=20):
    salient = select_salient_texts(params, bank, split,
                                   TSRConfig(lambda_videos=10, m_sentences=4, seed=0),
                                   class_ids=class_ids)
    result = run_stage2(bank, split, salient,
                        Stage2Config(batch_size=64, epochs=epochs, seed=0), params)
    return salient, result.head


class TestCloseRegime:
    def test_separable_close_set_accuracy(self, world):
        bank, dataset, params = world
        split = build_close_split(dataset)
        salient, head = train_head_for(bank, split, params)
        report = E.evaluate_regime("close", bank, split, params, head=head, salient=salient)
        assert report.top1 >= 0.95
        assert report.top5 is not None
        assert report.n_test == len(split.test)

    def test_identical_inputs_identical_reports(self, world):
        bank, dataset, params = world
        split = build_close_split(dataset)
        salient, head = train_head_for(bank, split, params, epochs=4)
        a = E.evaluate_regime("close", bank, split, params, head=head, salient=salient)
        b = E.evaluate_regime("close", bank, split, params, head=head, salient=salient)
        assert a.to_json() == b.to_json()


class TestLTRegime:
    def test_subset_report_present_and_consistent(self, world):
        bank, dataset, params = world
        split = build_lt_split(dataset, ParetoConfig(max_per_class=14, min_per_class=2,
                                                     val_per_class=0), seed=1)
        salient, head = train_head_for(bank, split, params, epochs=10)
        report = E.evaluate_regime("lt", bank, split, params, head=head, salient=salient)
        assert set(report.subsets) == {"overall", "many", "medium", "few"}
        weighted, total = 0.0, 0
        y = [bank.video_class(v) for v in split.test]
        for name in ("many", "medium", "few"):
            classes = split.subsets[name]
            n = sum(1 for c in y if c in classes)
            if report.subsets[name] is not None:
                weighted += report.subsets[name] * n
                total += n
        assert report.subsets["overall"] == pytest.approx(weighted / total)


class TestFewshotRegime:
    def test_episode_bookkeeping_and_mean(self, world):
        bank, dataset, params = world
        cfg = E.EvalConfig(trials=3, way=3, shot=3, class_pool=[0, 1, 2, 3],
                           episode_seed=5, episode_epochs=8)
        report = E.evaluate_regime("fewshot5x5", bank, None, params, dataset=dataset, cfg=cfg)
        assert report.trials == 3
        assert len(report.episodes) == 3
        assert report.episode_mean == pytest.approx(np.mean(report.episodes))
        assert report.episode_std == pytest.approx(np.std(report.episodes))

    def test_episodes_reproduce(self, world):
        bank, dataset, params = world
        cfg = E.EvalConfig(trials=2, way=3, shot=3, class_pool=[0, 1, 2, 3],
                           episode_seed=9, episode_epochs=5)
        a = E.evaluate_regime("fewshot5x5", bank, None, params, dataset=dataset, cfg=cfg)
        b = E.evaluate_regime("fewshot5x5", bank, None, params, dataset=dataset, cfg=cfg)
        assert a.episodes == b.episodes

    def test_cway_uses_full_test_split(self, world):
        bank, dataset, params = world
        cfg = E.EvalConfig(trials=2, shot=3, episode_seed=2, episode_epochs=8)
        report = E.evaluate_regime("fewshotCway", bank, None, params, dataset=dataset, cfg=cfg)
        assert report.trials == 2
        assert len(report.episodes) == 2
        assert report.episode_mean > 1.0 / 6  # beats chance on separable data

    def test_linear_probe_path(self, world):
        bank, dataset, params = world
        from gvr.splits import build_cway_split

        support = build_cway_split(dataset, shot=5, seed=0)
        acc = E.evaluate_linear_probe(bank, support, support.test, params)
        assert acc > 0.8

    def test_protocol_trial_defaults(self):
        assert E.default_trials("fewshot5x5") == 200
        assert E.default_trials("fewshotCway") == 10


class TestOpenRegime:
    def test_threshold_sweep_and_counts(self, world):
        bank, dataset, params = world
        split = build_open_split(dataset, n_known=4, seed=3)
        salient, head = train_head_for(bank, split, params,
                                       class_ids=split.known_classes, epochs=10)
        cfg = E.EvalConfig(openmax_eta=5)
        report = E.evaluate_regime("open", bank, split, params, head=head,
                                   salient=salient, cfg=cfg)
        for post in ("threshold", "openmax"):
            assert len(report.fmeasures[post]) == 5
            counts = [report.known_counts[post][f"{t:g}"] for t in E.OPEN_THRESHOLDS]
            assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert report.n_test == len(split.test)

    def test_open_report_deterministic(self, world):
        bank, dataset, params = world
        split = build_open_split(dataset, n_known=4, seed=3)
        salient, head = train_head_for(bank, split, params,
                                       class_ids=split.known_classes, epochs=4)
        cfg = E.EvalConfig(openmax_eta=5)
        a = E.evaluate_regime("open", bank, split, params, head=head, salient=salient, cfg=cfg)
        b = E.evaluate_regime("open", bank, split, params, head=head, salient=salient, cfg=cfg)
        assert a.to_json() == b.to_json()


def test_report_round_trip_and_csv(tmp_path, world):
    bank, dataset, params = world
    split = build_close_split(dataset)
    salient, head = train_head_for(bank, split, params, epochs=4)
    report = E.evaluate_regime("close", bank, split, params, head=head, salient=salient)
    report.save(tmp_path / "r.json")
    loaded = E.EvalReport.load(tmp_path / "r.json")
    assert loaded.to_json() == report.to_json()
    E.write_report_csv(report, tmp_path / "r.csv")
    E.merge_reports([report], tmp_path / "summary.csv")
    assert (tmp_path / "r.csv").read_text().startswith("metric,value")
    assert "close" in (tmp_path / "summary.csv").read_text()
