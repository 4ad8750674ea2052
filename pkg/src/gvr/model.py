"""Student and teacher encoders over base embeddings.

The student is the trainable part: linear modality adapters, a pre-norm
transformer over frame tokens with learnable temporal positional encoding,
mean pooling and L2 normalization, plus the learned logit temperature (kept
in log domain so it stays positive). The teacher is parameter-free: it
replaces the temporal module with average pooling over the raw base
embeddings and uses a fixed, sharper temperature.

At desk scale the CLIP-style towers are frozen inputs: the base frame and
sentence embeddings arrive precomputed in a bank, and the adapters stand in
for encoder finetuning. Every loss and the student/teacher relationship is
preserved under this reduction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from gvr import autodiff as ad
from gvr import checkpoint as ckpt
from gvr.autodiff import Tensor
from gvr.errors import CapacityError, ConfigurationError, DegenerateInputError

_MASK_NEG = -1e30


@dataclass
class ModelConfig:
    dim_base: int
    dim: int | None = None
    layers: int = 6
    heads: int = 8
    f_max: int = 64
    ffn_mult: int = 4
    ln_eps: float = 1e-5
    tau_init: float = 0.07
    teacher_tau: float = 0.01
    dtype: str = "float32"

    def __post_init__(self):
        if self.dim is None:
            self.dim = self.dim_base
        if self.dim % self.heads != 0:
            raise ConfigurationError(f"dim {self.dim} not divisible by {self.heads} heads")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


class ModelParams:
    """Flat named parameter store for the student."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """Teacher-equivalent start: identity adapters, zero positional
        encoding, zero residual out-projections. Inner projections are
        random so gradients have somewhere to go on step one."""
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        d_base, d = config.dim_base, config.dim
        scale = 1.0 / math.sqrt(d)

        def rand(*shape):
            return rng.normal(0.0, scale, size=shape).astype(dt)

        def eye(rows, cols):
            out = np.zeros((rows, cols), dtype=dt)
            np.fill_diagonal(out, 1.0)
            return out

        p = {
            "video_adapter.w": eye(d_base, d),
            "video_adapter.b": np.zeros(d, dtype=dt),
            "text_adapter.w": eye(d_base, d),
            "text_adapter.b": np.zeros(d, dtype=dt),
            "pos_enc": np.zeros((config.f_max, d), dtype=dt),
            "log_tau": np.array([math.log(config.tau_init)], dtype=dt),
        }
        for i in range(config.layers):
            pre = f"temporal.{i}"
            p[f"{pre}.ln1.g"] = np.ones(d, dtype=dt)
            p[f"{pre}.ln1.b"] = np.zeros(d, dtype=dt)
            p[f"{pre}.attn.wq"] = rand(d, d)
            p[f"{pre}.attn.bq"] = np.zeros(d, dtype=dt)
            p[f"{pre}.attn.wk"] = rand(d, d)
            p[f"{pre}.attn.bk"] = np.zeros(d, dtype=dt)
            p[f"{pre}.attn.wv"] = rand(d, d)
            p[f"{pre}.attn.bv"] = np.zeros(d, dtype=dt)
            p[f"{pre}.attn.wo"] = np.zeros((d, d), dtype=dt)
            p[f"{pre}.attn.bo"] = np.zeros(d, dtype=dt)
            p[f"{pre}.ln2.g"] = np.ones(d, dtype=dt)
            p[f"{pre}.ln2.b"] = np.zeros(d, dtype=dt)
            p[f"{pre}.ffn.w1"] = rand(d, config.ffn_mult * d)
            p[f"{pre}.ffn.b1"] = np.zeros(config.ffn_mult * d, dtype=dt)
            p[f"{pre}.ffn.w2"] = np.zeros((config.ffn_mult * d, d), dtype=dt)
            p[f"{pre}.ffn.b2"] = np.zeros(d, dtype=dt)
        tensors = {k: ad.tensor(v, requires_grad=True) for k, v in p.items()}
        return cls(config, tensors)

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def tau(self) -> Tensor:
        """Positive temperature, differentiable through log_tau."""
        return ad.reshape(ad.exp(self.params["log_tau"]), ())

    def tau_value(self) -> float:
        return float(np.exp(self.params["log_tau"].data[0]))

    def as_numpy(self):
        return {k: t.data for k, t in self.params.items()}

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, {
            k: ad.tensor(t.data.copy(), requires_grad=True) for k, t in self.params.items()})


def _cast(arr, config):
    return np.ascontiguousarray(arr, dtype=config.np_dtype)


def encode_text(params: ModelParams, base_sentences) -> Tensor:
    """Adapter then L2 normalization. Accepts [D_base] or [S, D_base]."""
    base = _cast(np.atleast_2d(base_sentences), params.config)
    if not np.all(np.isfinite(base)):
        raise DegenerateInputError("non-finite base sentence embedding")
    x = ad.linear(ad.tensor(base), params["text_adapter.w"], params["text_adapter.b"])
    out = ad.l2_normalize_rows(x)
    if np.asarray(base_sentences).ndim == 1:
        return ad.reshape(out, (out.shape[1],))
    return out


def _attention_mask(batch: int, frames: int, dtype):
    """Additive mask confining attention to each video's own frame block."""
    n = batch * frames
    mask = np.full((n, n), _MASK_NEG, dtype=dtype)
    for b in range(batch):
        mask[b * frames:(b + 1) * frames, b * frames:(b + 1) * frames] = 0.0
    return mask


def _transformer(params: ModelParams, x: Tensor, mask) -> Tensor:
    cfg = params.config
    d, h = cfg.dim, cfg.heads
    dh = d // h
    inv_sqrt_dh = 1.0 / math.sqrt(dh)
    for i in range(cfg.layers):
        pre = f"temporal.{i}"
        hn = ad.layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"], cfg.ln_eps)
        q = ad.linear(hn, params[f"{pre}.attn.wq"], params[f"{pre}.attn.bq"])
        k = ad.linear(hn, params[f"{pre}.attn.wk"], params[f"{pre}.attn.bk"])
        v = ad.linear(hn, params[f"{pre}.attn.wv"], params[f"{pre}.attn.bv"])
        heads_out = []
        for j in range(h):
            qh = ad.slice_cols(q, j * dh, (j + 1) * dh)
            kh = ad.slice_cols(k, j * dh, (j + 1) * dh)
            vh = ad.slice_cols(v, j * dh, (j + 1) * dh)
            scores = ad.mul_const(ad.matmul(qh, ad.transpose(kh)), inv_sqrt_dh)
            if mask is not None:
                scores = ad.add_const(scores, mask)
            heads_out.append(ad.matmul(ad.softmax(scores), vh))
        attn = heads_out[0] if h == 1 else ad.concat_cols(heads_out)
        x = ad.add(x, ad.linear(attn, params[f"{pre}.attn.wo"], params[f"{pre}.attn.bo"]))
        hn2 = ad.layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"], cfg.ln_eps)
        ff = ad.linear(hn2, params[f"{pre}.ffn.w1"], params[f"{pre}.ffn.b1"])
        ff = ad.gelu(ff)
        ff = ad.linear(ff, params[f"{pre}.ffn.w2"], params[f"{pre}.ffn.b2"])
        x = ad.add(x, ff)
    return x


def encode_video_batch(params: ModelParams, frames, batch: int) -> Tensor:
    """Encode `batch` videos of a uniform frame count.

    frames: [batch*F, D_base] with each video's frames contiguous and in
    temporal order. Returns unit-norm video embeddings [batch, D].
    """
    cfg = params.config
    frames = _cast(frames, cfg)
    if frames.shape[0] % batch != 0:
        raise ConfigurationError(f"{frames.shape[0]} frame rows do not tile into {batch} videos")
    f = frames.shape[0] // batch
    if f < 1:
        raise ConfigurationError("a video needs at least one frame")
    if f > cfg.f_max:
        raise CapacityError(f"video has {f} frames, positional table holds {cfg.f_max}")

    x = ad.linear(ad.tensor(frames), params["video_adapter.w"], params["video_adapter.b"])
    pe = ad.slice_rows(params["pos_enc"], 0, f)
    x = ad.add(x, ad.repeat_rows(pe, batch))
    mask = None if batch == 1 else _attention_mask(batch, f, cfg.np_dtype)
    x = _transformer(params, x, mask)
    pool = np.zeros((batch, batch * f), dtype=cfg.np_dtype)
    for b in range(batch):
        pool[b, b * f:(b + 1) * f] = 1.0 / f
    pooled = ad.matmul(ad.tensor(pool), x)
    return ad.l2_normalize_rows(pooled)


def encode_video(params: ModelParams, frames) -> Tensor:
    """Single video [F, D_base] -> unit embedding [D]."""
    out = encode_video_batch(params, frames, batch=1)
    return ad.reshape(out, (out.shape[1],))


def encode_videos(params: ModelParams, frame_list) -> Tensor:
    """Encode videos of possibly mixed frame counts; rows follow input order."""
    n = len(frame_list)
    by_f: dict[int, list[int]] = {}
    for i, fr in enumerate(frame_list):
        by_f.setdefault(fr.shape[0], []).append(i)
    parts = []
    order = []
    for f in sorted(by_f):
        idxs = by_f[f]
        stacked = np.concatenate([_cast(frame_list[i], params.config) for i in idxs], axis=0)
        parts.append(encode_video_batch(params, stacked, batch=len(idxs)))
        order.extend(idxs)
    embs = parts[0] if len(parts) == 1 else ad.concat_rows(parts)
    if order == list(range(n)):
        return embs
    perm = np.zeros((n, n), dtype=params.config.np_dtype)
    for row, src in enumerate(order):
        perm[src, row] = 1.0
    return ad.matmul(ad.tensor(perm), embs)


# --- frozen teacher --------------------------------------------------------


def _l2(vec):
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateInputError("teacher cannot normalize a zero vector")
    return (vec / norm).astype(np.float64)


def teacher_encode_video(base_frames) -> np.ndarray:
    """Average pooling over raw base frames, then L2 normalization.

    Each column is summed over sorted values so the result is bitwise
    invariant to frame order.
    """
    frames = np.asarray(base_frames, dtype=np.float64)
    mean = np.sort(frames, axis=0).sum(axis=0) / frames.shape[0]
    return _l2(mean)


def teacher_encode_text(base_sentence_vec) -> np.ndarray:
    return _l2(np.asarray(base_sentence_vec, dtype=np.float64))


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(params: ModelParams, path, step: int = 0, seed: int = 0,
                    extra: dict | None = None) -> None:
    header = {
        "kind": "model",
        "config": asdict(params.config),
        "step": step,
        "seed": seed,
    }
    if extra:
        header.update(extra)
    ckpt.save_tensors(path, params.as_numpy(), header)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    arrays, header = ckpt.load_tensors(path)
    cfg = ModelConfig(**header["config"])
    tensors = {k: ad.tensor(np.asarray(v, dtype=cfg.np_dtype), requires_grad=True)
               for k, v in arrays.items()}
    return ModelParams(cfg, tensors), header
