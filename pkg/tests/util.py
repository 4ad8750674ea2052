"""Hand-built fixtures shared across test modules."""

import numpy as np

from gvr.bank import ClassInfo, EmbeddingBank, RowRecord
from gvr.splits import DatasetIndex


def build_bank(dim=4, spec=None, seed=0, word_counts=False):
    """Construct a small bank from {class_id: (n_videos, frames_per_video, n_sentences)}."""
    spec = spec or {0: (2, 3, 2), 1: (1, 3, 1)}
    rng = np.random.default_rng(seed)
    rows, records = [], []
    classes = []
    for cid, (n_videos, frames, n_sent) in sorted(spec.items()):
        for v in range(n_videos):
            gid = f"c{cid}v{v}"
            for f in range(frames):
                records.append(RowRecord(len(records), cid, "frame", gid, f))
                rows.append(rng.normal(size=dim))
        for s in range(n_sent):
            wc = int(rng.integers(3, 30)) if word_counts else None
            records.append(RowRecord(len(records), cid, "sentence", f"c{cid}s{s}", s, word_count=wc))
            rows.append(rng.normal(size=dim))
        classes.append(ClassInfo(cid, f"class-{cid}", n_sent, n_videos))
    blob = np.asarray(rows, dtype=np.float32)
    return EmbeddingBank(dim, blob, records, classes)


def toy_dataset(n_classes=4, train_per_class=10, test_per_class=3):
    names = {c: f"class-{c}" for c in range(n_classes)}
    train = {c: [f"c{c}tr{i}" for i in range(train_per_class)] for c in range(n_classes)}
    test = {c: [f"c{c}te{i}" for i in range(test_per_class)] for c in range(n_classes)}
    return DatasetIndex(names, train, test)
