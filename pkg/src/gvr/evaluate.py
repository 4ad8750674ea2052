"""Metrics and regime-specific evaluation.

Open-set decisions support two post-processes on the fused scores: a plain
confidence threshold on P/2 (P sums to 2), and OpenMax revision, which
attenuates the top-ranked activations by per-class Weibull tail CDFs of the
distance to the class's mean activation and routes the removed mass to an
unknown pseudo-class. The F-measure convention counts a sample as a true
positive only when it is predicted known AND correct.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import weibull_min

from gvr import autodiff as ad
from gvr.errors import ConfigurationError, ContractViolation, UsageError
from gvr.head import (
    SalientTextBank,
    Stage2Config,
    TSRConfig,
    classify,
    encode_videos_cached,
    linear_probe,
    run_stage2,
    select_salient_texts,
)
from gvr.splits import (
    REGIME_CLOSE,
    REGIME_FEWSHOT_5X5,
    REGIME_FEWSHOT_CWAY,
    REGIME_LT,
    REGIME_OPEN,
    build_fewshot_episode,
)

UNKNOWN = -1  # prediction/label marker for unseen-class samples

OPEN_THRESHOLDS = (0.1, 0.2, 0.3, 0.5, 0.7)


# --- accuracy metrics --------------------------------------------------------


def topk_accuracy(p_matrix, y, k: int) -> float:
    """Fraction of rows whose label ranks in the k best scores; equal scores
    rank lower-class-index first."""
    p = np.asarray(p_matrix, dtype=np.float64)
    y = np.asarray(y)
    if k > p.shape[1]:
        raise ConfigurationError(f"k={k} exceeds {p.shape[1]} classes")
    ranked = np.argsort(-p, axis=1, kind="stable")[:, :k]
    return float(np.mean([y[i] in ranked[i] for i in range(len(y))]))


def subset_accuracy(p_matrix, y, partition: dict[str, list[int]]) -> dict:
    """Top-1 accuracy restricted to samples whose label falls in each bucket.

    Buckets without samples are reported absent (None). The overall accuracy
    is always included and equals the count-weighted mean of the buckets.
    """
    p = np.asarray(p_matrix, dtype=np.float64)
    y = np.asarray(y)
    covered = sorted(c for bucket in partition.values() for c in bucket)
    if len(set(y) - set(covered)) > 0:
        raise ConfigurationError("partition does not cover all sample labels")
    preds = np.argmax(p, axis=1)
    out = {"overall": float((preds == y).mean())}
    for name, classes in partition.items():
        mask = np.isin(y, list(classes))
        out[name] = float((preds[mask] == y[mask]).mean()) if mask.any() else None
    return out


# --- open-set post-processing ------------------------------------------------


def threshold_postprocess(p_fused, thr: float) -> int:
    """Argmax if the rescaled confidence max(P)/2 clears thr, else unknown."""
    p = np.asarray(p_fused, dtype=np.float64)
    if p.max() / 2.0 >= thr:
        return int(np.argmax(p))
    return UNKNOWN


@dataclass
class OpenMaxModel:
    mavs: np.ndarray  # [C, C] per-class mean activation vectors
    weibull: list  # per class: (shape, scale, shift) or None when fallen back
    eta: int
    k_rev: int
    fallback_classes: list[int] = field(default_factory=list)

    def cdf(self, class_idx: int, distance: float) -> float:
        params = self.weibull[class_idx]
        if params is None:
            return 0.0
        shape, scale, shift = params
        return float(weibull_min.cdf(distance - shift, shape, loc=0.0, scale=scale))


def openmax_fit(activations, y_train, eta: int, k_rev: int | None = None) -> OpenMaxModel:
    """Per-class mean activation plus a Weibull MLE over the eta largest
    distances of correctly classified training samples.

    Classes with fewer than eta correct samples, or with a degenerate
    (zero-spread) tail, fall back to no attenuation and are flagged.
    """
    if eta < 2:
        raise ConfigurationError(f"weibull tail size must be >= 2, got {eta}")
    acts = np.asarray(activations, dtype=np.float64)
    y = np.asarray(y_train)
    n_classes = acts.shape[1]
    preds = np.argmax(acts, axis=1)
    mavs = np.zeros((n_classes, n_classes))
    weibull = []
    fallback = []
    for c in range(n_classes):
        correct = acts[(y == c) & (preds == c)]
        if len(correct) == 0:
            mavs[c] = 0.0
            weibull.append(None)
            fallback.append(c)
            continue
        mavs[c] = correct.mean(axis=0)
        dists = np.linalg.norm(correct - mavs[c], axis=1)
        if len(dists) < eta:
            weibull.append(None)
            fallback.append(c)
            continue
        tail = np.sort(dists)[-eta:]
        if np.ptp(tail) == 0.0:
            weibull.append(None)
            fallback.append(c)
            continue
        shape, _, scale = weibull_min.fit(tail, floc=0.0)
        weibull.append((float(shape), float(scale), 0.0))
    return OpenMaxModel(mavs=mavs, weibull=weibull, eta=eta,
                        k_rev=k_rev if k_rev is not None else min(10, n_classes),
                        fallback_classes=fallback)


def openmax_revise(model: OpenMaxModel, activation_vec) -> tuple[np.ndarray, float]:
    """Attenuated activations and the unknown pseudo-score.

    The top k_rev classes (score-ranked, ties to the lower index) lose
    rank-weighted Weibull mass; the removed mass becomes the unknown score.
    """
    v = np.asarray(activation_vec, dtype=np.float64)
    order = np.argsort(-v, kind="stable")
    alpha = model.k_rev
    revised = v.copy()
    unknown = 0.0
    for rank, c in enumerate(order[:alpha], start=1):
        w = (alpha + 1 - rank) / alpha
        dist = float(np.linalg.norm(v - model.mavs[c]))
        attenuation = w * model.cdf(c, dist)
        revised[c] = v[c] * (1.0 - attenuation)
        unknown += v[c] * attenuation
    return revised, unknown


def openmax_probabilities(model: OpenMaxModel, activation_vec) -> np.ndarray:
    revised, unknown = openmax_revise(model, activation_vec)
    scores = np.append(revised, unknown)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def openmax_postprocess(model: OpenMaxModel, activation_vec, thr: float | None = None) -> int:
    """Argmax over C+1 revised scores.

    The unknown pseudo-class competes only when it actually absorbed mass
    (unknown > 0); with every Weibull CDF at zero this reduces to a plain
    argmax. An optional threshold on the winning openmax probability
    additionally rejects low-confidence predictions.
    """
    revised, unknown = openmax_revise(model, activation_vec)
    probs = openmax_probabilities(model, activation_vec)
    if unknown > 0.0 and unknown > revised.max():
        return UNKNOWN
    best = int(np.argmax(revised))
    if thr is not None and probs[best] < thr:
        return UNKNOWN
    return best


def f_measure(predictions, y_with_unknown) -> float:
    """Harmonic mean of precision and recall where a true positive is a
    known-class sample predicted as its own class; F = 0 when P + R = 0."""
    preds = np.asarray(predictions)
    y = np.asarray(y_with_unknown)
    if preds.shape != y.shape:
        raise ContractViolation("predictions and labels differ in length")
    tp = int(((y != UNKNOWN) & (preds == y)).sum())
    predicted_known = int((preds != UNKNOWN).sum())
    true_known = int((y != UNKNOWN).sum())
    precision = tp / predicted_known if predicted_known else 0.0
    recall = tp / true_known if true_known else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# --- regime evaluation --------------------------------------------------------


@dataclass
class EvalConfig:
    thresholds: tuple = OPEN_THRESHOLDS
    trials: int | None = None  # regime default: 200 (5-way) / 10 (C-way)
    way: int = 5
    shot: int = 5
    class_pool: list[int] | None = None  # 5-way episode pool
    episode_seed: int = 0
    episode_epochs: int = 30
    tsr: TSRConfig | None = None
    stage2: Stage2Config | None = None
    openmax_eta: int = 20
    openmax_k_rev: int | None = None
    seed: int = 0


@dataclass
class EvalReport:
    regime: str
    n_test: int
    seed: int
    top1: float | None = None
    top5: float | None = None
    subsets: dict | None = None
    fmeasures: dict | None = None  # {post_process: {thr: F}}
    known_counts: dict | None = None  # {post_process: {thr: count}}
    episodes: list[float] | None = None
    episode_mean: float | None = None
    episode_std: float | None = None
    trials: int | None = None
    config_digest: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        doc = {
            "regime": self.regime,
            "n_test": self.n_test,
            "seed": self.seed,
            "top1": self.top1,
            "top5": self.top5,
            "subsets": self.subsets,
            "fmeasures": self.fmeasures,
            "known_counts": self.known_counts,
            "episodes": self.episodes,
            "episode_mean": self.episode_mean,
            "episode_std": self.episode_std,
            "trials": self.trials,
            "config_digest": self.config_digest,
            "extra": self.extra,
        }
        return doc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True,
                                         separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**doc)


def _predict_matrices(params, head, salient, bank, video_ids):
    """Fused scores for a list of videos. Returns (P, activations)."""
    embs = encode_videos_cached(params, bank, video_ids)
    with ad.no_grad():
        out = classify(head, embs, salient)
    return out["P"].data, out["activation"].data


def _close_lt_report(regime, bank, split, params, head, salient, cfg) -> EvalReport:
    idx_of = {c: i for i, c in enumerate(salient.class_ids)}
    test_ids = split.test
    y = np.asarray([idx_of[bank.video_class(v)] for v in test_ids])
    p, _ = _predict_matrices(params, head, salient, bank, test_ids)
    c = p.shape[1]
    report = EvalReport(regime=regime, n_test=len(test_ids), seed=cfg.seed)
    report.top1 = topk_accuracy(p, y, 1)
    report.top5 = topk_accuracy(p, y, min(5, c))
    if regime == REGIME_LT:
        if not split.subsets:
            raise ConfigurationError("lt split is missing its subset partition")
        partition = {name: [idx_of[cid] for cid in cids if cid in idx_of]
                     for name, cids in split.subsets.items()}
        report.subsets = subset_accuracy(p, y, partition)
    return report


def _episode_top1(bank, dataset, episode, params, cfg) -> float:
    """Train the head on an episode's support set, score its query set."""
    classes = episode.config["episode_classes"]
    tsr_cfg = cfg.tsr or TSRConfig(lambda_videos=cfg.shot, m_sentences=8, seed=cfg.seed)
    salient = select_salient_texts(params, bank, episode, tsr_cfg, class_ids=classes)
    s2 = cfg.stage2 or Stage2Config(batch_size=max(2, len(episode.train)),
                                    epochs=cfg.episode_epochs, seed=cfg.seed)
    head = run_stage2(bank, episode, salient, s2, params).head
    idx_of = {c: i for i, c in enumerate(salient.class_ids)}
    y = np.asarray([idx_of[bank.video_class(v)] for v in episode.test])
    p, _ = _predict_matrices(params, head, salient, bank, episode.test)
    return topk_accuracy(p, y, 1)


def default_trials(regime: str) -> int:
    """Canonical trial counts: 200 for 5-way episodes, 10 for C-way."""
    return 200 if regime == REGIME_FEWSHOT_5X5 else 10


def _fewshot_report(regime, bank, dataset, split, params, cfg) -> EvalReport:
    if dataset is None:
        raise ConfigurationError("few-shot evaluation needs the dataset index")
    trials = cfg.trials if cfg.trials is not None else default_trials(regime)
    if regime == REGIME_FEWSHOT_5X5:
        pool = cfg.class_pool or (split.config.get("class_pool") if split else None)
        if not pool:
            raise ConfigurationError("5-way evaluation needs a class pool")
    else:
        pool = None

    scores = []
    for trial in range(trials):
        seed = cfg.episode_seed + trial
        if regime == REGIME_FEWSHOT_5X5:
            episode = build_fewshot_episode(dataset, cfg.way, cfg.shot, pool, seed)
        else:
            from gvr.splits import build_cway_split  # noqa: PLC0415

            episode = build_cway_split(dataset, cfg.shot, seed)
            episode.config["episode_classes"] = sorted(dataset.class_ids)
        if not episode.test:
            raise ConfigurationError(f"episode {trial} has an empty query set")
        scores.append(_episode_top1(bank, dataset, episode, params, cfg))
    report = EvalReport(regime=regime, n_test=len(scores), seed=cfg.seed)
    report.episodes = scores
    report.trials = trials
    report.episode_mean = float(np.mean(scores))
    report.episode_std = float(np.std(scores))
    report.top1 = report.episode_mean
    return report


def _open_report(bank, split, params, head, salient, cfg) -> EvalReport:
    known = list(salient.class_ids)
    idx_of = {c: i for i, c in enumerate(known)}
    train_p, train_act = _predict_matrices(params, head, salient, bank, split.train)
    y_train = np.asarray([idx_of[bank.video_class(v)] for v in split.train])
    model = openmax_fit(train_act, y_train, cfg.openmax_eta, cfg.openmax_k_rev)

    test_ids = split.test
    y = np.asarray([idx_of.get(bank.video_class(v), UNKNOWN) for v in test_ids])
    p, acts = _predict_matrices(params, head, salient, bank, test_ids)

    fmeasures = {"threshold": {}, "openmax": {}}
    known_counts = {"threshold": {}, "openmax": {}}
    for thr in cfg.thresholds:
        thr_preds = np.asarray([threshold_postprocess(row, thr) for row in p])
        om_preds = np.asarray([openmax_postprocess(model, row, thr) for row in acts])
        key = f"{thr:g}"
        fmeasures["threshold"][key] = f_measure(thr_preds, y)
        fmeasures["openmax"][key] = f_measure(om_preds, y)
        known_counts["threshold"][key] = int((thr_preds != UNKNOWN).sum())
        known_counts["openmax"][key] = int((om_preds != UNKNOWN).sum())

    report = EvalReport(regime=REGIME_OPEN, n_test=len(test_ids), seed=cfg.seed)
    report.fmeasures = fmeasures
    report.known_counts = known_counts
    report.extra = {"openmax_fallback_classes": model.fallback_classes,
                    "known_classes": known}
    known_mask = y != UNKNOWN
    if known_mask.any():
        report.top1 = topk_accuracy(p[known_mask], y[known_mask], 1)
    return report


def evaluate_regime(regime: str, bank, split, params, head=None,
                    salient: SalientTextBank | None = None, dataset=None,
                    cfg: EvalConfig | None = None) -> EvalReport:
    """Dispatch to the regime-specific evaluation path."""
    cfg = cfg or EvalConfig()
    if regime in (REGIME_CLOSE, REGIME_LT):
        if head is None or salient is None:
            raise ConfigurationError(f"{regime} evaluation needs a trained head and salient bank")
        return _close_lt_report(regime, bank, split, params, head, salient, cfg)
    if regime in (REGIME_FEWSHOT_5X5, REGIME_FEWSHOT_CWAY):
        return _fewshot_report(regime, bank, dataset, split, params, cfg)
    if regime == REGIME_OPEN:
        if head is None or salient is None:
            raise ConfigurationError("open evaluation needs a trained head and salient bank")
        return _open_report(bank, split, params, head, salient, cfg)
    raise UsageError(f"unknown regime {regime!r}")


def evaluate_linear_probe(bank, support_split, query_ids, params, probe_cfg=None) -> float:
    """Linear-probe top-1 on the query videos (the VLG-L baseline path)."""
    from gvr.head import ProbeConfig  # noqa: PLC0415

    probe = linear_probe(bank, support_split, params, probe_cfg or ProbeConfig())
    embs = encode_videos_cached(params, bank, query_ids)
    y = np.asarray([bank.video_class(v) for v in query_ids])
    return float((probe.predict(embs) == y).mean())


def write_report_csv(report: EvalReport, path):
    """Flat key,value rows for the report's scalar metrics."""
    rows = [("regime", report.regime), ("n_test", report.n_test), ("seed", report.seed)]
    for name in ("top1", "top5", "episode_mean", "episode_std", "trials"):
        value = getattr(report, name)
        if value is not None:
            rows.append((name, value))
    if report.subsets:
        for bucket, acc in sorted(report.subsets.items()):
            rows.append((f"acc_{bucket}", acc if acc is not None else ""))
    if report.fmeasures:
        for post, curve in sorted(report.fmeasures.items()):
            for thr, f in sorted(curve.items(), key=lambda kv: float(kv[0])):
                rows.append((f"f_{post}_thr{thr}", f))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("metric", "value"))
        writer.writerows(rows)


def merge_reports(reports: list[EvalReport], path):
    """One summary row per regime: the radar-chart "headline" metric."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("regime", "headline_metric", "value"))
        for r in reports:
            if r.regime == REGIME_OPEN and r.fmeasures:
                best = max(v for curve in r.fmeasures.values() for v in curve.values())
                writer.writerow((r.regime, "best_f_measure", best))
            elif r.episode_mean is not None:
                writer.writerow((r.regime, "episode_mean_top1", r.episode_mean))
            else:
                writer.writerow((r.regime, "top1", r.top1))
