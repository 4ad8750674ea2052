"""Stage II: text selection, the bi-modal attention head, and baselines.

The text selection ruler (TSR) is training-free: each sentence of a class is
scored by its contrastive text loss against a probe batch of videos (its own
class's probe videos are the positives, every probe video is in the
denominator), and the M lowest-loss sentences are kept. The head then fuses
two class distributions: an MLP over the video embedding, and cosine
similarities against attention-gathered per-class text embeddings.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvr import autodiff as ad
from gvr import checkpoint as ckpt
from gvr.autodiff import Tensor
from gvr.bank import DTYPE_F32, MAGIC, PROMPT_PREFIX, VERSION, EmbeddingBank
from gvr.errors import (
    ConfigurationError,
    ContractViolation,
    TrainingDiverged,
)
from gvr.model import ModelParams, encode_text, encode_videos
from gvr.optim import OptimizerState, ParamGroup, adamw_step, cosine_lr

_ENCODE_CHUNK = 64  # videos per inference batch


@dataclass
class TSRConfig:
    lambda_videos: int = 50
    m_sentences: int = 64
    seed: int = 0
    strategy: str = "tsr"  # tsr | rand | basic (rand/basic are ablation rulers)

    def __post_init__(self):
        if self.lambda_videos < 1 or self.m_sentences < 1:
            raise ConfigurationError("lambda and M must both be at least 1")
        if self.strategy not in ("tsr", "rand", "basic"):
            raise ConfigurationError(f"unknown selection strategy {self.strategy!r}")


@dataclass
class SalientTextBank:
    """Per-class selected sentence embeddings with provenance."""

    class_ids: list[int]
    embeddings: np.ndarray  # [C, M, D], unit rows
    sentence_rows: np.ndarray  # [C, M] bank row ids
    scores: np.ndarray  # [C, M] selection losses
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.embeddings.shape[1]

    @property
    def dim(self):
        return self.embeddings.shape[2]

    def save(self, path):
        path = Path(path)
        c, m, d = self.embeddings.shape
        blob = np.ascontiguousarray(self.embeddings.reshape(c * m, d), dtype="<f4")
        header = struct.Struct("<4sIIQI").pack(MAGIC, VERSION, DTYPE_F32, c * m, d)
        path.write_bytes(header + blob.tobytes())
        doc = {
            "class_ids": self.class_ids,
            "m": m,
            "dim": d,
            "sentence_rows": self.sentence_rows.tolist(),
            "scores": self.scores.tolist(),
            "config": self.config,
            "provenance": self.provenance,
        }
        Path(str(path) + ".json").write_text(
            json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        raw = path.read_bytes()
        hdr = struct.Struct("<4sIIQI")
        magic, _, _, rows, dim = hdr.unpack_from(raw)
        if magic != MAGIC:
            raise ConfigurationError(f"{path}: not a salient-text bank")
        doc = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        m = int(doc["m"])
        embs = np.frombuffer(raw[hdr.size:], dtype="<f4").reshape(rows // m, m, dim)
        return cls(
            class_ids=[int(c) for c in doc["class_ids"]],
            embeddings=embs.astype(np.float64),
            sentence_rows=np.asarray(doc["sentence_rows"], dtype=np.int64),
            scores=np.asarray(doc["scores"], dtype=np.float64),
            config=doc.get("config", {}),
            provenance=doc.get("provenance", {}),
        )


def encode_videos_cached(params: ModelParams, bank: EmbeddingBank, video_ids):
    """Frozen-encoder embeddings for many videos, chunked, no graph."""
    out = []
    with ad.no_grad():
        for lo in range(0, len(video_ids), _ENCODE_CHUNK):
            chunk = video_ids[lo:lo + _ENCODE_CHUNK]
            frames = [bank.video_frames(g) for g in chunk]
            out.append(encode_videos(params, frames).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.config.dim))


def sentence_scores(params: ModelParams, bank: EmbeddingBank, class_id: int,
                    probe_embs: np.ndarray, probe_labels: np.ndarray) -> np.ndarray:
    """Contrastive text loss of every sentence of one class against the probe
    batch: the sentence is the anchor, its class's probe videos are the
    positives, all probe videos form the denominator."""
    rows = bank.sentence_rows_of_class(class_id)
    with ad.no_grad():
        et = encode_text(params, bank.blob[rows]).data
    logits = (et @ probe_embs.T) / params.tau_value()
    shifted = logits - logits.max(axis=1, keepdims=True)
    lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    pos = probe_labels == class_id
    if not pos.any():
        raise ConfigurationError(f"class {class_id} has no probe videos")
    return -lsm[:, pos].mean(axis=1)


def _probe_videos(bank, split, class_ids, cfg, rng):
    in_split = set(split.train)
    probe_ids, probe_labels = [], []
    for c in class_ids:
        pool = [v for v in bank.videos_of_class(c) if v in in_split]
        if not pool:
            raise ConfigurationError(
                f"class {c} has no train videos in the split; restrict class_ids")
        pool = sorted(pool)
        take = min(cfg.lambda_videos, len(pool))
        picked = rng.choice(len(pool), size=take, replace=False)
        probe_ids.extend(pool[i] for i in sorted(picked))
        probe_labels.extend([c] * take)
    return probe_ids, np.asarray(probe_labels)


def select_salient_texts(params: ModelParams, bank: EmbeddingBank, split,
                         cfg: TSRConfig, class_ids=None) -> SalientTextBank:
    """Keep the M smallest-loss sentences per class (ties by row id).

    Classes with fewer than M sentences are padded by sampling the kept set
    with replacement, keeping the bank rectangular. Runs once per stage; the
    probe pass is read-only over frozen params.
    """
    class_ids = sorted(bank.classes) if class_ids is None else sorted(class_ids)
    rng = np.random.default_rng(cfg.seed)
    probe_ids, probe_labels = _probe_videos(bank, split, class_ids, cfg, rng)
    probe_embs = encode_videos_cached(params, bank, probe_ids)

    m = cfg.m_sentences
    all_embs, all_rows, all_scores = [], [], []
    for c in class_ids:
        rows = np.asarray(bank.sentence_rows_of_class(c), dtype=np.int64)
        if rows.size == 0:
            raise ConfigurationError(f"class {c} has no sentences")
        losses = sentence_scores(params, bank, c, probe_embs, probe_labels)

        if cfg.strategy == "tsr":
            order = np.lexsort((rows, losses))
            keep = order[:m]
        elif cfg.strategy == "rand":
            keep = rng.choice(rows.size, size=min(m, rows.size), replace=False)
        else:  # basic: template prompts only
            is_prompt = np.array([bank.records[r].group_id.startswith(PROMPT_PREFIX)
                                  for r in rows])
            if not is_prompt.any():
                raise ConfigurationError(f"class {c} has no prompt sentences for BASIC selection")
            keep = np.flatnonzero(is_prompt)[:m]
        if keep.size < m:
            pad = rng.choice(keep, size=m - keep.size, replace=True)
            keep = np.concatenate([keep, pad])

        with ad.no_grad():
            embs = encode_text(params, bank.blob[rows[keep]]).data
        all_embs.append(embs)
        all_rows.append(rows[keep])
        all_scores.append(losses[keep])

    return SalientTextBank(
        class_ids=class_ids,
        embeddings=np.stack(all_embs),
        sentence_rows=np.stack(all_rows),
        scores=np.stack(all_scores),
        config={"lambda": cfg.lambda_videos, "m": m, "seed": cfg.seed,
                "strategy": cfg.strategy},
        provenance={"tau": params.tau_value(), "probe_size": len(probe_ids)},
    )


# --- head ------------------------------------------------------------------


@dataclass
class HeadConfig:
    dim: int
    classes: int
    tau_init: float = 0.07
    ln_eps: float = 1e-5
    dtype: str = "float64"

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


class HeadParams:
    """Query/key projections, scoring MLP and the head temperature."""

    def __init__(self, config: HeadConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: HeadConfig, seed: int = 0) -> "HeadParams":
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        d, c = config.dim, config.classes
        eye = np.eye(d, dtype=dt)
        p = {
            "q_ln.g": np.ones(d, dtype=dt), "q_ln.b": np.zeros(d, dtype=dt),
            "q_lin.w": eye.copy(), "q_lin.b": np.zeros(d, dtype=dt),
            "k_ln.g": np.ones(d, dtype=dt), "k_ln.b": np.zeros(d, dtype=dt),
            "k_lin.w": eye.copy(), "k_lin.b": np.zeros(d, dtype=dt),
            "mlp.w1": rng.normal(0, 1 / math.sqrt(d), size=(d, d)).astype(dt),
            "mlp.b1": np.zeros(d, dtype=dt),
            "mlp.w2": np.zeros((d, c), dtype=dt),
            "mlp.b2": np.zeros(c, dtype=dt),
            "log_tau_head": np.array([math.log(config.tau_init)], dtype=dt),
        }
        return cls(config, {k: ad.tensor(v, requires_grad=True) for k, v in p.items()})

    def __getitem__(self, name):
        return self.params[name]

    def tau(self) -> Tensor:
        return ad.reshape(ad.exp(self.params["log_tau_head"]), ())

    def as_numpy(self):
        return {k: t.data for k, t in self.params.items()}

    def save(self, path, extra: dict | None = None):
        header = {"kind": "head", "config": {
            "dim": self.config.dim, "classes": self.config.classes,
            "tau_init": self.config.tau_init, "ln_eps": self.config.ln_eps,
            "dtype": self.config.dtype}}
        if extra:
            header.update(extra)
        ckpt.save_tensors(path, self.as_numpy(), header)

    @classmethod
    def load(cls, path):
        arrays, header = ckpt.load_tensors(path)
        config = HeadConfig(**header["config"])
        tensors = {k: ad.tensor(np.asarray(v, dtype=config.np_dtype), requires_grad=True)
                   for k, v in arrays.items()}
        return cls(config, tensors), header


def _as_embedding_tensor(e_v, dtype):
    if isinstance(e_v, Tensor):
        t = e_v
    else:
        t = ad.tensor(np.ascontiguousarray(e_v, dtype=dtype))
    squeezed = t.ndim == 1
    if squeezed:
        t = ad.reshape(t, (1, t.shape[0]))
    return t, squeezed


def bimodal_attend(head: HeadParams, e_v, class_texts: np.ndarray) -> Tensor:
    """Attention-gathered embedding for one class: softmax(q k^T / sqrt(D))
    over the class's M text embeddings, values taken raw."""
    if class_texts.ndim != 2 or class_texts.shape[0] == 0:
        raise ContractViolation("class_texts must be a nonempty [M, D] matrix")
    out = _gather(head, e_v, class_texts[None, :, :])
    return ad.reshape(out, (out.shape[1],)) if out.shape[0] == 1 else out


def _gather(head: HeadParams, e_v, texts3d: np.ndarray) -> Tensor:
    """G for every (video, class) pair: [B*C, D]."""
    cfg = head.config
    ev, _ = _as_embedding_tensor(e_v, cfg.np_dtype)
    texts3d = np.ascontiguousarray(texts3d, dtype=cfg.np_dtype)
    c, m, d = texts3d.shape
    q = ad.linear(ad.layer_norm(ev, head["q_ln.g"], head["q_ln.b"], cfg.ln_eps),
                  head["q_lin.w"], head["q_lin.b"])
    kn = ad.layer_norm(ad.tensor(texts3d.reshape(c * m, d)),
                       head["k_ln.g"], head["k_ln.b"], cfg.ln_eps)
    k = ad.linear(kn, head["k_lin.w"], head["k_lin.b"])
    scores = ad.mul_const(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d))
    weights = ad.softmax(ad.reshape(scores, (ev.shape[0] * c, m)))
    return ad.attend_texts(weights, texts3d)


def classify(head: HeadParams, e_v, salient: SalientTextBank) -> dict[str, Tensor]:
    """Both class distributions and their sum for a batch of embeddings.

    P_V is the MLP softmax; P_T softmaxes cosine(E_V, G_c)/tau over classes;
    P = P_V + P_T sums to 2 and its argmax is the prediction.
    """
    cfg = head.config
    if len(salient.class_ids) != cfg.classes or salient.dim != cfg.dim:
        raise ContractViolation(
            f"salient bank [{len(salient.class_ids)}, {salient.dim}] does not match "
            f"head [{cfg.classes}, {cfg.dim}]")
    ev, squeezed = _as_embedding_tensor(e_v, cfg.np_dtype)
    b = ev.shape[0]
    c = cfg.classes

    g = _gather(head, ev, salient.embeddings)
    ev_rep = ad.repeat_interleave_rows(ev, c)
    cos = ad.reshape(ad.cosine_rows(ev_rep, g), (b, c))
    logits_t = ad.div(cos, head.tau())
    p_t = ad.softmax(logits_t)

    h = ad.gelu(ad.linear(ev, head["mlp.w1"], head["mlp.b1"]))
    logits_v = ad.linear(h, head["mlp.w2"], head["mlp.b2"])
    p_v = ad.softmax(logits_v)

    p = ad.add(p_v, p_t)
    activation = ad.add(logits_v, logits_t)  # fused pre-softmax scores
    out = {"P_V": p_v, "P_T": p_t, "P": p,
           "logits_V": logits_v, "logits_T": logits_t, "activation": activation}
    if squeezed:
        out = {k: ad.reshape(x, (c,)) for k, x in out.items()}
    return out


def cls_loss(p_v: Tensor, p_t: Tensor, y) -> Tensor:
    """Sum of the two cross-entropies on already-softmaxed probabilities,
    averaged over the batch."""
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    pv = p_v if p_v.ndim == 2 else ad.reshape(p_v, (1, p_v.shape[0]))
    pt = p_t if p_t.ndim == 2 else ad.reshape(p_t, (1, p_t.shape[0]))
    b, c = pv.shape
    if y.shape[0] != b or y.min() < 0 or y.max() >= c:
        raise ContractViolation(f"labels {y} invalid for {b}x{c} probabilities")
    w = np.zeros((b, c))
    w[np.arange(b), y] = 1.0 / b
    return ad.add(ad.neglog_weighted(pv, w), ad.neglog_weighted(pt, w))


@dataclass
class Stage2Config:
    batch_size: int = 128
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 5e-2
    seed: int = 0


CURVE2_COLUMNS = ("step", "l_cls", "lr")


@dataclass
class Stage2Result:
    head: HeadParams
    curve: list[dict] = field(repr=False, default_factory=list)


def run_stage2(bank: EmbeddingBank, split, salient: SalientTextBank,
               cfg: Stage2Config, stage1_params: ModelParams,
               out_dir=None) -> Stage2Result:
    """Train the head on frozen encoder outputs with AdamW + cosine decay."""
    class_ids = salient.class_ids
    idx_of = {c: i for i, c in enumerate(class_ids)}
    labels_all = []
    for v in split.train:
        c = bank.video_class(v)
        if c not in idx_of:
            raise ConfigurationError(f"train video {v} has class {c} outside the salient bank")
        labels_all.append(idx_of[c])
    labels_all = np.asarray(labels_all, dtype=np.int64)
    embs_all = encode_videos_cached(stage1_params, bank, split.train)

    head_cfg = HeadConfig(dim=stage1_params.config.dim, classes=len(class_ids),
                          tau_init=stage1_params.tau_value(),
                          dtype=stage1_params.config.dtype)
    head = HeadParams.init(head_cfg, seed=cfg.seed)

    decayed = {k: t for k, t in head.params.items() if t.data.ndim >= 2}
    plain = {k: t for k, t in head.params.items() if t.data.ndim < 2}
    groups = []
    for tensors, wd in ((decayed, cfg.weight_decay), (plain, 0.0)):
        if tensors:
            g = ParamGroup(tensors)
            groups.append((g, OptimizerState.for_group(g, base_lr=cfg.lr, weight_decay=wd)))

    n = len(split.train)
    per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = per_epoch * cfg.epochs
    rng = np.random.default_rng(cfg.seed)
    curve = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            take = order[lo:lo + cfg.batch_size]
            out = classify(head, embs_all[take], salient)
            loss = cls_loss(out["P_V"], out["P_T"], labels_all[take])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite classification loss at step {step}")
            ad.zero_grads(head.params.values())
            loss.backward()
            decay = cosine_lr(step, total_steps, 1.0)
            for group, state in groups:
                adamw_step(group, state, state.base_lr * decay)
            curve.append({"step": step, "l_cls": value, "lr": cfg.lr * decay})
            step += 1

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        head.save(out_dir / "head.ckpt", extra={"seed": cfg.seed, "step": step})
        with open(out_dir / "stage2_curve.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CURVE2_COLUMNS)
            writer.writeheader()
            writer.writerows(curve)
    return Stage2Result(head=head, curve=curve)


# --- linear probe baseline ---------------------------------------------------


@dataclass
class ProbeConfig:
    l2: float = 1e-3
    lr: float = 0.5
    max_iters: int = 500
    tol: float = 1e-7


@dataclass
class LinearProbe:
    class_ids: list[int]
    weights: np.ndarray  # [D, C]
    bias: np.ndarray  # [C]
    converged: bool
    iters: int

    def scores(self, embs: np.ndarray) -> np.ndarray:
        return embs @ self.weights + self.bias

    def predict(self, embs: np.ndarray) -> np.ndarray:
        idx = np.argmax(self.scores(embs), axis=1)
        lookup = np.asarray(self.class_ids)
        return lookup[idx]


def linear_probe(bank: EmbeddingBank, support_split, params: ModelParams,
                 cfg: ProbeConfig = ProbeConfig()) -> LinearProbe:
    """L2-regularized multinomial regression on frozen video embeddings,
    solved by full-batch gradient descent from zero init."""
    embs = encode_videos_cached(params, bank, support_split.train)
    raw_labels = np.asarray([bank.video_class(v) for v in support_split.train])
    class_ids = sorted(set(int(c) for c in raw_labels))
    idx_of = {c: i for i, c in enumerate(class_ids)}
    y = np.asarray([idx_of[int(c)] for c in raw_labels])
    n, d = embs.shape
    c = len(class_ids)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0

    w = np.zeros((d, c))
    b = np.zeros(c)
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        logits = embs @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        delta = (probs - onehot) / n
        gw = embs.T @ delta + cfg.l2 * w
        gb = delta.sum(axis=0)
        w -= cfg.lr * gw
        b -= cfg.lr * gb
        if max(np.abs(gw).max(), np.abs(gb).max()) < cfg.tol:
            converged = True
            break
    return LinearProbe(class_ids=class_ids, weights=w, bias=b,
                       converged=converged, iters=it)
