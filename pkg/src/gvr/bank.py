"""Embedding bank: the on-disk store of base frame/sentence embeddings.

Binary layout (little-endian): magic ``GVRE``, u32 version (1), u32 dtype
code (0 = float32), u64 row count, u32 dim, then the row-major float32 blob.
The row manifest and class table live in a sibling UTF-8 JSON file so the
blob stays a plain matrix. Banks are immutable after load.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvr.errors import CorruptBankError, FormatError

MAGIC = b"GVRE"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIIQI")

KIND_FRAME = "frame"
KIND_SENTENCE = "sentence"

# group_id prefix marking template-generated prompt sentences; the BASIC
# selection strategy keys off it
PROMPT_PREFIX = "prompt/"


def manifest_path_for(bank_path) -> Path:
    p = Path(bank_path)
    if p.suffix == ".gvre":
        return p.with_suffix(".manifest.json")
    return Path(str(p) + ".manifest.json")


@dataclass
class RowRecord:
    row_id: int
    class_id: int
    kind: str  # "frame" | "sentence"
    group_id: str  # video id for frames, sentence id for sentences
    position: int  # frame index within video / sentence index within class
    word_count: int | None = None  # sentences only, optional

    def to_json(self):
        out = {
            "row_id": self.row_id,
            "class_id": self.class_id,
            "kind": self.kind,
            "group_id": self.group_id,
            "position": self.position,
        }
        if self.word_count is not None:
            out["word_count"] = self.word_count
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(
            row_id=int(obj["row_id"]),
            class_id=int(obj["class_id"]),
            kind=obj["kind"],
            group_id=obj["group_id"],
            position=int(obj["position"]),
            word_count=obj.get("word_count"),
        )


@dataclass
class ClassInfo:
    class_id: int
    name: str
    sentence_count: int
    video_count: int


class EmbeddingBank:
    """Validated, indexed view over one blob of embeddings."""

    def __init__(self, dim, blob, records, classes, config_digest=None):
        self.dim = int(dim)
        self.blob = np.ascontiguousarray(blob, dtype=np.float32).reshape(-1, self.dim)
        self.records = list(records)
        self.classes = {c.class_id: c for c in classes}
        self.config_digest = config_digest
        self._index()
        self.validate()

    @property
    def rows(self):
        return self.blob.shape[0]

    @property
    def num_classes(self):
        return len(self.classes)

    def _index(self):
        self._group_rows: dict[str, list[int]] = {}
        self._group_class: dict[str, int] = {}
        self._group_kind: dict[str, str] = {}
        self._class_sentence_rows: dict[int, list[int]] = {c: [] for c in self.classes}
        self._class_videos: dict[int, list[str]] = {c: [] for c in self.classes}
        for rec in self.records:
            rows = self._group_rows.setdefault(rec.group_id, [])
            if not rows:
                self._group_class[rec.group_id] = rec.class_id
                self._group_kind[rec.group_id] = rec.kind
                if rec.kind == KIND_FRAME and rec.class_id in self._class_videos:
                    self._class_videos[rec.class_id].append(rec.group_id)
            rows.append(rec.row_id)
            if rec.kind == KIND_SENTENCE and rec.class_id in self._class_sentence_rows:
                self._class_sentence_rows[rec.class_id].append(rec.row_id)

    def validate(self):
        if len(self.records) != self.rows:
            raise CorruptBankError(
                f"manifest lists {len(self.records)} rows, blob holds {self.rows}")
        class_ids = sorted(self.classes)
        if class_ids != list(range(len(class_ids))):
            raise CorruptBankError("class ids are not dense 0..C-1")
        sent_tally = dict.fromkeys(self.classes, 0)
        for i, rec in enumerate(self.records):
            if rec.row_id != i:
                raise CorruptBankError(f"row {i}: manifest row_id {rec.row_id} out of order")
            if rec.kind not in (KIND_FRAME, KIND_SENTENCE):
                raise CorruptBankError(f"row {i}: unknown kind {rec.kind!r}")
            if rec.class_id not in self.classes:
                raise CorruptBankError(f"row {i}: class {rec.class_id} missing from class table")
            if rec.kind == KIND_SENTENCE:
                sent_tally[rec.class_id] += 1
        for gid, rows in self._group_rows.items():
            kinds = {self.records[r].kind for r in rows}
            cls = {self.records[r].class_id for r in rows}
            if len(kinds) > 1 or len(cls) > 1:
                raise CorruptBankError(f"group {gid!r}: mixed kind or class across rows")
            if kinds == {KIND_FRAME}:
                positions = sorted(self.records[r].position for r in rows)
                if positions != list(range(len(rows))):
                    raise CorruptBankError(
                        f"group {gid!r}: frame positions {positions} are not 0..F-1")
        for cid, rows in self._class_sentence_rows.items():
            positions = [self.records[r].position for r in rows]
            if len(set(positions)) != len(positions):
                raise CorruptBankError(f"class {cid}: duplicate sentence positions")
        for cid, info in self.classes.items():
            if info.sentence_count != sent_tally[cid]:
                raise CorruptBankError(
                    f"class {cid}: table says {info.sentence_count} sentences, "
                    f"manifest has {sent_tally[cid]}")
            videos = self._class_videos.get(cid, [])
            if info.video_count != len(videos):
                raise CorruptBankError(
                    f"class {cid}: table says {info.video_count} videos, "
                    f"manifest has {len(videos)}")

    # --- accessors -------------------------------------------------------

    def video_frames(self, group_id) -> np.ndarray:
        """[F, D] frame matrix for one video, ordered by frame position."""
        rows = self._group_rows[group_id]
        order = sorted(rows, key=lambda r: self.records[r].position)
        return self.blob[order]

    def video_class(self, group_id) -> int:
        return self._group_class[group_id]

    def videos_of_class(self, class_id):
        return list(self._class_videos.get(class_id, []))

    def all_video_ids(self):
        return [g for g, k in self._group_kind.items() if k == KIND_FRAME]

    def sentence_rows_of_class(self, class_id):
        return list(self._class_sentence_rows.get(class_id, []))

    def sentence_vec(self, row_id) -> np.ndarray:
        return self.blob[row_id]


def save_bank(bank: EmbeddingBank, path) -> None:
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, bank.rows, bank.dim)
    path.write_bytes(header + bank.blob.tobytes())
    manifest = {
        "version": VERSION,
        "dim": bank.dim,
        "config_digest": bank.config_digest,
        "rows": [r.to_json() for r in bank.records],
        "classes": [
            {
                "class_id": c.class_id,
                "name": c.name,
                "sentence_count": c.sentence_count,
                "video_count": c.video_count,
            }
            for c in sorted(bank.classes.values(), key=lambda c: c.class_id)
        ],
    }
    manifest_path_for(path).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_bank(path) -> EmbeddingBank:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the fixed header")
    magic, version, dtype, rows, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    blob_bytes = raw[_HEADER.size:]
    expected = rows * dim * 4
    if len(blob_bytes) != expected:
        raise CorruptBankError(
            f"{path}: blob holds {len(blob_bytes)} bytes, header implies {expected}")
    blob = np.frombuffer(blob_bytes, dtype="<f4").reshape(rows, dim)

    mpath = manifest_path_for(path)
    if not mpath.exists():
        raise FormatError(f"{path}: manifest {mpath} is missing")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("dim") != dim:
        raise CorruptBankError(f"{path}: manifest dim {manifest.get('dim')} != header dim {dim}")
    records = [RowRecord.from_json(o) for o in manifest["rows"]]
    classes = [
        ClassInfo(int(o["class_id"]), o["name"], int(o["sentence_count"]), int(o["video_count"]))
        for o in manifest["classes"]
    ]
    return EmbeddingBank(dim, blob, records, classes,
                         config_digest=manifest.get("config_digest"))


@dataclass
class CorpusStats:
    """Per-class text corpus statistics derived from a bank manifest."""

    sentence_counts: dict[int, int]
    sentences_min: int
    sentences_max: int
    sentences_mean: float
    sentences_median: float
    words_min: int | None = None
    words_max: int | None = None
    words_mean: float | None = None
    words_median: float | None = None
    word_counts: dict[int, int] = field(default_factory=dict)

    def to_json(self):
        return {
            "sentence_counts": {str(k): v for k, v in sorted(self.sentence_counts.items())},
            "sentences": {
                "min": self.sentences_min,
                "max": self.sentences_max,
                "mean": self.sentences_mean,
                "median": self.sentences_median,
            },
            "words": None if self.words_mean is None else {
                "min": self.words_min,
                "max": self.words_max,
                "mean": self.words_mean,
                "median": self.words_median,
                "per_class": {str(k): v for k, v in sorted(self.word_counts.items())},
            },
        }


def corpus_stats(bank: EmbeddingBank) -> CorpusStats:
    counts = {cid: len(bank.sentence_rows_of_class(cid)) for cid in sorted(bank.classes)}
    vals = np.array(list(counts.values()), dtype=np.int64)
    stats = CorpusStats(
        sentence_counts=counts,
        sentences_min=int(vals.min()),
        sentences_max=int(vals.max()),
        sentences_mean=float(vals.mean()),
        sentences_median=float(np.median(vals)),
    )
    words = {}
    for cid in sorted(bank.classes):
        rows = bank.sentence_rows_of_class(cid)
        wc = [bank.records[r].word_count for r in rows]
        if any(w is None for w in wc) or not wc:
            return stats  # word counts absent; sentence stats only
        words[cid] = int(sum(wc))
    wvals = np.array(list(words.values()), dtype=np.int64)
    stats.word_counts = words
    stats.words_min = int(wvals.min())
    stats.words_max = int(wvals.max())
    stats.words_mean = float(wvals.mean())
    stats.words_median = float(np.median(wvals))
    return stats
