"""Benchmark regime construction: long-tail, few-shot and open-set splits.

Every builder is a pure function of (dataset, config, seed); the emitted
SplitSpec serializes to JSON with its generating config embedded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvr.errors import ConfigurationError, UsageError

REGIME_CLOSE = "close"
REGIME_LT = "lt"
REGIME_FEWSHOT_5X5 = "fewshot5x5"
REGIME_FEWSHOT_CWAY = "fewshotCway"
REGIME_OPEN = "open"

MANY_SHOT_MIN = 101  # strictly more than 100 train videos
FEW_SHOT_MAX = 19  # strictly fewer than 20


@dataclass
class DatasetIndex:
    """Original labeled dataset: per-class train/test video ids."""

    class_names: dict[int, str]
    train_by_class: dict[int, list[str]]
    test_by_class: dict[int, list[str]]

    @property
    def class_ids(self):
        return sorted(self.class_names)

    def save(self, path):
        doc = {
            "classes": [{"class_id": c, "name": self.class_names[c]} for c in self.class_ids],
            "videos": (
                [{"id": v, "class_id": c, "split": "train"}
                 for c in self.class_ids for v in self.train_by_class.get(c, [])]
                + [{"id": v, "class_id": c, "split": "test"}
                   for c in self.class_ids for v in self.test_by_class.get(c, [])]
            ),
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        names = {int(c["class_id"]): c["name"] for c in doc["classes"]}
        train = {c: [] for c in names}
        test = {c: [] for c in names}
        for v in doc["videos"]:
            target = train if v["split"] == "train" else test
            target[int(v["class_id"])].append(v["id"])
        return cls(names, train, test)


@dataclass
class SplitSpec:
    """Membership lists and per-class counts for one benchmark regime."""

    regime: str
    train: list[str]
    val: list[str]
    test: list[str]
    class_train_counts: dict[int, int]
    seed: int
    config: dict = field(default_factory=dict)
    subsets: dict[str, list[int]] | None = None  # lt only
    known_classes: list[int] | None = None  # open only
    unknown_classes: list[int] | None = None
    config_digest: str | None = None

    def validate(self):
        train, val, test = set(self.train), set(self.val), set(self.test)
        if train & val or train & test or val & test:
            raise ConfigurationError(f"{self.regime}: train/val/test overlap")
        if self.known_classes is not None:
            known, unknown = set(self.known_classes), set(self.unknown_classes or [])
            if known & unknown:
                raise ConfigurationError("open split: known and unknown classes overlap")

    def to_json(self):
        return {
            "regime": self.regime,
            "train": self.train,
            "val": self.val,
            "test": self.test,
            "class_train_counts": {str(k): v for k, v in sorted(self.class_train_counts.items())},
            "seed": self.seed,
            "config": self.config,
            "subsets": self.subsets,
            "known_classes": self.known_classes,
            "unknown_classes": self.unknown_classes,
            "config_digest": self.config_digest,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True,
                                         separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, doc):
        return cls(
            regime=doc["regime"],
            train=list(doc["train"]),
            val=list(doc["val"]),
            test=list(doc["test"]),
            class_train_counts={int(k): v for k, v in doc["class_train_counts"].items()},
            seed=int(doc["seed"]),
            config=doc.get("config", {}),
            subsets=doc.get("subsets"),
            known_classes=doc.get("known_classes"),
            unknown_classes=doc.get("unknown_classes"),
            config_digest=doc.get("config_digest"),
        )

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ParetoConfig:
    max_per_class: int
    min_per_class: int
    shape: float = 6.0
    val_per_class: int = 20

    def __post_init__(self):
        if not self.max_per_class >= self.min_per_class >= 1:
            raise ConfigurationError(
                f"need max >= min >= 1, got [{self.min_per_class}, {self.max_per_class}]")


def pareto_profile(n_classes: int, cfg: ParetoConfig) -> np.ndarray:
    """Target count per head-to-tail rank from the Pareto density.

    Ranks map onto [1, (max/min)^(1/(shape+1))] where the density
    x^-(shape+1), scaled to hit max at rank 0, decays to exactly min at the
    last rank. Counts are rounded then clamped to the configured bounds, so
    the sequence is nonincreasing in rank.
    """
    if n_classes == 1:
        return np.array([cfg.max_per_class], dtype=np.int64)
    beta = (cfg.max_per_class / cfg.min_per_class) ** (1.0 / (cfg.shape + 1.0))
    x = 1.0 + (np.arange(n_classes) / (n_classes - 1)) * (beta - 1.0)
    counts = np.rint(cfg.max_per_class * x ** -(cfg.shape + 1.0)).astype(np.int64)
    return np.clip(counts, cfg.min_per_class, cfg.max_per_class)


def build_lt_split(dataset: DatasetIndex, cfg: ParetoConfig, seed: int) -> SplitSpec:
    """Long-tail subsample of the train set; the original test set is kept."""
    classes = dataset.class_ids
    too_small = [c for c in classes if len(dataset.train_by_class[c]) < cfg.min_per_class]
    if too_small:
        raise ConfigurationError(
            f"classes with fewer than {cfg.min_per_class} train videos: {too_small}")
    rng = np.random.default_rng(seed)
    rank_of = {c: r for r, c in zip(np.argsort(rng.permutation(len(classes))), classes)}
    targets = pareto_profile(len(classes), cfg)

    train, val = [], []
    counts = {}
    for c in classes:
        pool = sorted(dataset.train_by_class[c])
        want = min(int(targets[rank_of[c]]), len(pool))
        picked = rng.choice(len(pool), size=want, replace=False)
        chosen = [pool[i] for i in sorted(picked)]
        train.extend(chosen)
        counts[c] = want
        remaining = [v for v in pool if v not in set(chosen)]
        n_val = min(cfg.val_per_class, len(remaining))
        if n_val:
            vpick = rng.choice(len(remaining), size=n_val, replace=False)
            val.extend(remaining[i] for i in sorted(vpick))

    test = [v for c in classes for v in sorted(dataset.test_by_class.get(c, []))]
    split = SplitSpec(
        regime=REGIME_LT, train=train, val=val, test=test,
        class_train_counts=counts, seed=seed,
        config={"max_per_class": cfg.max_per_class, "min_per_class": cfg.min_per_class,
                "shape": cfg.shape, "val_per_class": cfg.val_per_class},
    )
    split.subsets = partition_shot_subsets(split)
    split.validate()
    return split


def partition_shot_subsets(split: SplitSpec) -> dict[str, list[int]]:
    """Disjoint many/medium/few class buckets by train count.

    many: > 100 videos; medium: 20..100 inclusive; few: < 20.
    """
    if split.regime != REGIME_LT:
        raise UsageError(f"subset partition applies to lt splits, not {split.regime!r}")
    buckets = {"many": [], "medium": [], "few": []}
    for c, n in sorted(split.class_train_counts.items()):
        if n >= MANY_SHOT_MIN:
            buckets["many"].append(c)
        elif n <= FEW_SHOT_MAX:
            buckets["few"].append(c)
        else:
            buckets["medium"].append(c)
    return buckets


def build_close_split(dataset: DatasetIndex) -> SplitSpec:
    classes = dataset.class_ids
    train = [v for c in classes for v in sorted(dataset.train_by_class.get(c, []))]
    test = [v for c in classes for v in sorted(dataset.test_by_class.get(c, []))]
    counts = {c: len(dataset.train_by_class.get(c, [])) for c in classes}
    split = SplitSpec(regime=REGIME_CLOSE, train=train, val=[], test=test,
                      class_train_counts=counts, seed=0)
    split.validate()
    return split


def build_fewshot_episode(dataset: DatasetIndex, way: int, shot: int,
                          class_pool: list[int], seed: int) -> SplitSpec:
    """One N-way K-shot episode: sampled support, remaining videos as query."""
    if len(class_pool) < way:
        raise ConfigurationError(f"class pool of {len(class_pool)} cannot host {way}-way episodes")
    rng = np.random.default_rng(seed)
    pool = sorted(class_pool)
    picked = rng.choice(len(pool), size=way, replace=False)
    episode_classes = [pool[i] for i in sorted(picked)]

    support, query = [], []
    counts = {}
    for c in episode_classes:
        videos = sorted(dataset.train_by_class[c])
        if len(videos) < shot:
            raise ConfigurationError(f"class {c} has {len(videos)} videos, needs {shot} for support")
        spick = set(rng.choice(len(videos), size=shot, replace=False))
        support.extend(videos[i] for i in sorted(spick))
        query.extend(videos[i] for i in range(len(videos)) if i not in spick)
        counts[c] = shot

    split = SplitSpec(
        regime=REGIME_FEWSHOT_5X5, train=support, val=[], test=query,
        class_train_counts=counts, seed=seed,
        config={"way": way, "shot": shot, "class_pool": pool,
                "episode_classes": episode_classes, "empty_query": not query},
    )
    split.validate()
    return split


def build_cway_split(dataset: DatasetIndex, shot: int, seed: int) -> SplitSpec:
    """Shot videos per class over all classes; original test split as query."""
    rng = np.random.default_rng(seed)
    classes = dataset.class_ids
    support = []
    for c in classes:
        videos = sorted(dataset.train_by_class[c])
        if len(videos) < shot:
            raise ConfigurationError(f"class {c} has {len(videos)} videos, needs {shot} for support")
        spick = rng.choice(len(videos), size=shot, replace=False)
        support.extend(videos[i] for i in sorted(spick))
    test = [v for c in classes for v in sorted(dataset.test_by_class.get(c, []))]
    split = SplitSpec(
        regime=REGIME_FEWSHOT_CWAY, train=support, val=[], test=test,
        class_train_counts=dict.fromkeys(classes, shot), seed=seed,
        config={"shot": shot},
    )
    split.validate()
    return split


def build_open_split(dataset: DatasetIndex, n_known: int, seed: int) -> SplitSpec:
    """Random class bipartition; test keeps videos of both halves."""
    classes = dataset.class_ids
    if n_known <= 0 or n_known >= len(classes):
        raise ConfigurationError(
            f"n_known must be strictly between 0 and {len(classes)}, got {n_known}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(classes))
    known = sorted(classes[i] for i in order[:n_known])
    unknown = sorted(classes[i] for i in order[n_known:])
    train = [v for c in known for v in sorted(dataset.train_by_class.get(c, []))]
    test = [v for c in classes for v in sorted(dataset.test_by_class.get(c, []))]
    split = SplitSpec(
        regime=REGIME_OPEN, train=train, val=[], test=test,
        class_train_counts={c: len(dataset.train_by_class.get(c, [])) for c in known},
        seed=seed, config={"n_known": n_known},
        known_classes=known, unknown_classes=unknown,
    )
    split.validate()
    return split


def split_fewshot_classes(class_ids, fractions=(64, 12, 24), seed=0):
    """Partition classes into train/val/test pools proportional to the
    canonical 64/12/24 protocol."""
    classes = sorted(class_ids)
    total = sum(fractions)
    n_train = round(len(classes) * fractions[0] / total)
    n_val = round(len(classes) * fractions[1] / total)
    if n_train + n_val >= len(classes):
        raise ConfigurationError(f"cannot carve {fractions} pools out of {len(classes)} classes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(classes))
    train = sorted(classes[i] for i in order[:n_train])
    val = sorted(classes[i] for i in order[n_train:n_train + n_val])
    test = sorted(classes[i] for i in order[n_train + n_val:])
    return {"train": train, "val": val, "test": test}
