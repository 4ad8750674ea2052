"""Synthetic embedding banks with controllable structure.

Classes are Gaussian clusters: each class owns a text centroid; video
centroids live in a (optionally rotated) copy of the text space, so the
adapters have real alignment work to do. The sentence corpus mixes on-topic
sentences, generic prompt sentences sharing a boilerplate direction, and
off-topic noise, which is what the text selection stage has to sort out.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from gvr.bank import PROMPT_PREFIX, ClassInfo, EmbeddingBank, RowRecord
from gvr.splits import DatasetIndex


@dataclass
class SyntheticConfig:
    classes: int = 20
    dim: int = 32
    frames: int = 8
    train_videos: int = 50
    test_videos: int = 10
    salient_sentences: int = 12
    noise_sentences: int = 8
    prompt_sentences: int = 4
    video_noise: float = 0.15
    frame_noise: float = 0.10
    sentence_noise: float = 0.10
    prompt_boost: float = 1.5
    prompt_signal: float = 1.0  # class-mean weight in prompts; templates are generic when < 1
    noise_topicality: float = 0.0  # 0 = pure junk, > 0 = weakly on-topic crawl noise
    misalign: bool = True
    temporal_drift: float = 0.0
    mirror_pairs: bool = False
    seed: int = 0

    def to_json(self):
        return asdict(self)


def _unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _rotation(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def make_synthetic(cfg: SyntheticConfig) -> tuple[EmbeddingBank, DatasetIndex]:
    rng = np.random.default_rng(cfg.seed)
    c, d, f = cfg.classes, cfg.dim, cfg.frames

    text_means = np.stack([_unit(rng, d) for _ in range(c)])
    rot = _rotation(rng, d) if cfg.misalign else np.eye(d)
    boilerplate = _unit(rng, d)

    if cfg.mirror_pairs:
        # paired classes share a video centroid and differ only in the sign
        # of a position-dependent drift; mean pooling cannot tell them apart
        video_means = np.stack([text_means[(i // 2) * 2] @ rot.T for i in range(c)])
        drift_dirs = np.stack([_unit(rng, d) for _ in range((c + 1) // 2)])
    else:
        video_means = text_means @ rot.T
        drift_dirs = np.zeros(((c + 1) // 2, d))

    positions = np.linspace(-1.0, 1.0, f) if f > 1 else np.zeros(1)

    rows, records = [], []
    classes = []
    train_by_class, test_by_class = {}, {}
    for cid in range(c):
        n_videos = cfg.train_videos + cfg.test_videos
        vids = []
        for v in range(n_videos):
            gid = f"v{cid}_{v}"
            vids.append(gid)
            center = video_means[cid] + cfg.video_noise * rng.normal(size=d)
            drift_sign = 1.0 if cid % 2 == 0 else -1.0
            for fi in range(f):
                frame = center + cfg.frame_noise * rng.normal(size=d)
                if cfg.temporal_drift:
                    frame = frame + drift_sign * cfg.temporal_drift * positions[fi] * drift_dirs[cid // 2]
                records.append(RowRecord(len(records), cid, "frame", gid, fi))
                rows.append(frame)
        train_by_class[cid] = vids[:cfg.train_videos]
        test_by_class[cid] = vids[cfg.train_videos:]

        pos = 0
        for s in range(cfg.salient_sentences):
            vec = text_means[cid] + cfg.sentence_noise * rng.normal(size=d)
            records.append(RowRecord(len(records), cid, "sentence", f"text/c{cid}s{s}", pos,
                                     word_count=int(rng.integers(8, 40))))
            rows.append(vec)
            pos += 1
        for s in range(cfg.prompt_sentences):
            vec = (cfg.prompt_signal * text_means[cid] + cfg.prompt_boost * boilerplate
                   + 0.25 * cfg.sentence_noise * rng.normal(size=d))
            records.append(RowRecord(len(records), cid, "sentence", f"{PROMPT_PREFIX}c{cid}s{s}", pos,
                                     word_count=int(rng.integers(4, 9))))
            rows.append(vec)
            pos += 1
        for s in range(cfg.noise_sentences):
            vec = (cfg.noise_topicality * text_means[cid]
                   + _unit(rng, d) * (1.0 + 0.1 * rng.normal()))
            records.append(RowRecord(len(records), cid, "sentence", f"text/c{cid}n{s}", pos,
                                     word_count=int(rng.integers(8, 40))))
            rows.append(vec)
            pos += 1

        n_sent = cfg.salient_sentences + cfg.prompt_sentences + cfg.noise_sentences
        classes.append(ClassInfo(cid, f"class-{cid}", n_sent, n_videos))

    blob = np.asarray(rows, dtype=np.float32)
    bank = EmbeddingBank(d, blob, records, classes)
    dataset = DatasetIndex({c_.class_id: c_.name for c_ in classes}, train_by_class, test_by_class)
    return bank, dataset
