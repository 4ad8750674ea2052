"""Stage I: contrastive video-language pretraining with teacher distillation.

Both NCE losses use multi-positive averaging over same-class batch entries;
the denominator runs over the whole batch. The distillation target is the
frozen teacher's similarity distribution at its own (sharper) temperature,
applied row-wise in both directions and averaged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvr import autodiff as ad
from gvr.autodiff import Tensor
from gvr.bank import EmbeddingBank
from gvr.errors import ConfigurationError, ContractViolation, TrainingDiverged
from gvr.model import (
    ModelConfig,
    ModelParams,
    encode_text,
    encode_videos,
    save_checkpoint,
    teacher_encode_text,
    teacher_encode_video,
)
from gvr.optim import OptimizerState, ParamGroup, adamw_step, cosine_lr
from gvr.sampling import Batch, epoch_batches


@dataclass
class PretrainConfig:
    alpha: float = 0.5
    batch_size: int = 16
    epochs: int = 50
    lr_temporal: float = 1e-3
    lr_adapter: float = 1e-5
    weight_decay: float = 5e-2
    seed: int = 0
    checkpoint_every: int = 1  # epochs; 0 disables intermediate checkpoints

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be at least 2")


@dataclass
class SimilarityMatrix:
    """Temperature-scaled cosine logits for one batch, both orientations."""

    video_rows: Tensor  # [N, N], row i: video i against every text
    text_rows: Tensor  # [N, N], row i: text i against every video
    tau: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.video_rows.data)):
            raise ContractViolation("similarity matrix contains non-finite entries")


def student_similarities(video_embs: Tensor, text_embs: Tensor, tau: Tensor) -> SimilarityMatrix:
    """Cosine logits between unit-norm embedding rows, divided by tau."""
    sims = ad.matmul(video_embs, ad.transpose(text_embs))
    video_rows = ad.div(sims, tau)
    return SimilarityMatrix(video_rows=video_rows,
                            text_rows=ad.transpose(video_rows),
                            tau=float(tau.data))


def _positive_weights(labels: np.ndarray) -> np.ndarray:
    n = len(labels)
    pos = (labels[:, None] == labels[None, :]).astype(np.float64)
    counts = pos.sum(axis=1)
    if np.any(counts == 0):
        raise ContractViolation("a batch item has no positives")
    return pos / (n * counts[:, None])


def nce_text_loss(sm: SimilarityMatrix, labels: np.ndarray) -> Tensor:
    """Text-anchored NCE: same-class videos are positives, whole batch is the
    denominator; positives averaged per anchor, then over the batch."""
    lsm = ad.log_softmax(sm.text_rows)
    return ad.mul_const(ad.weighted_sum(lsm, _positive_weights(labels)), -1.0)


def nce_video_loss(sm: SimilarityMatrix, labels: np.ndarray) -> Tensor:
    """Video-anchored NCE, symmetric to nce_text_loss."""
    lsm = ad.log_softmax(sm.video_rows)
    return ad.mul_const(ad.weighted_sum(lsm, _positive_weights(labels)), -1.0)


def teacher_similarities(bank: EmbeddingBank, batch: Batch, teacher_tau: float):
    """Teacher soft targets: row-softmaxed base-embedding similarities.

    Returns (over_videos, over_texts): the text-anchored rows (distributions
    over the batch videos) and the video-anchored rows (over the batch
    texts). Computed fresh per batch from the raw bank embeddings.
    """
    v = np.stack([teacher_encode_video(bank.video_frames(g)) for g in batch.video_ids])
    t = np.stack([teacher_encode_text(bank.sentence_vec(r)) for r in batch.sentence_rows])
    logits = (v @ t.T) / teacher_tau  # rows: videos, cols: texts

    def rows_softmax(x):
        m = x.max(axis=1, keepdims=True)
        e = np.exp(x - m)
        return e / e.sum(axis=1, keepdims=True)

    return rows_softmax(logits.T), rows_softmax(logits)


def distill_loss(sm: SimilarityMatrix, teacher_over_videos, teacher_over_texts) -> Tensor:
    """Soft cross-entropy from teacher rows onto the matching student rows
    (text-anchored with text-anchored, video-anchored with video-anchored),
    both directions averaged; gradient reaches the student only."""
    for name, rows in (("over-videos", teacher_over_videos), ("over-texts", teacher_over_texts)):
        sums = np.asarray(rows).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ContractViolation(f"teacher {name} rows are not softmax-normalized")
    n = sm.video_rows.shape[0]
    ce_videos = ad.mul_const(ad.weighted_sum(ad.log_softmax(sm.text_rows),
                                             np.asarray(teacher_over_videos) / n), -1.0)
    ce_texts = ad.mul_const(ad.weighted_sum(ad.log_softmax(sm.video_rows),
                                            np.asarray(teacher_over_texts) / n), -1.0)
    return ad.mul_const(ad.add(ce_videos, ce_texts), 0.5)


def pretrain_loss(l_video: Tensor, l_text: Tensor, l_dist: Tensor, alpha: float) -> Tensor:
    contrastive = ad.mul_const(ad.add(l_video, l_text), alpha)
    return ad.add(contrastive, ad.mul_const(l_dist, 1.0 - alpha))


def build_param_groups(params: ModelParams, cfg: PretrainConfig):
    """Adapters at their own learning rate; temporal module, positional table
    and temperature at the fast rate; no weight decay on 1-D parameters."""
    buckets = {
        ("adapter", True): {}, ("adapter", False): {},
        ("temporal", True): {}, ("temporal", False): {},
    }
    for name, t in params.params.items():
        module = "adapter" if name.endswith("adapter.w") or name.endswith("adapter.b") else "temporal"
        decayed = t.data.ndim >= 2
        buckets[(module, decayed)][name] = t
    out = []
    for (module, decayed), tensors in buckets.items():
        if not tensors:
            continue
        lr = cfg.lr_adapter if module == "adapter" else cfg.lr_temporal
        wd = cfg.weight_decay if decayed else 0.0
        group = ParamGroup(tensors)
        out.append((group, OptimizerState.for_group(group, base_lr=lr, weight_decay=wd)))
    return out


def batch_losses(params: ModelParams, bank: EmbeddingBank, batch: Batch, alpha: float):
    """Forward pass for one batch; returns the four loss tensors."""
    frames = [bank.video_frames(g) for g in batch.video_ids]
    sentences = np.stack([bank.sentence_vec(r) for r in batch.sentence_rows])
    ev = encode_videos(params, frames)
    et = encode_text(params, sentences)
    sm = student_similarities(ev, et, params.tau())
    t_over_videos, t_over_texts = teacher_similarities(bank, batch, params.config.teacher_tau)
    l_text = nce_text_loss(sm, batch.labels)
    l_video = nce_video_loss(sm, batch.labels)
    l_dist = distill_loss(sm, t_over_videos, t_over_texts)
    return l_text, l_video, l_dist, pretrain_loss(l_video, l_text, l_dist, alpha)


CURVE_COLUMNS = ("step", "l_text", "l_video", "l_dist", "l_pre", "lr", "tau")


@dataclass
class Stage1Result:
    params: ModelParams
    curve: list[dict] = field(repr=False, default_factory=list)
    checkpoint_path: str | None = None


def write_curve(curve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        writer.writerows(curve)


def run_stage1(bank: EmbeddingBank, split, cfg: PretrainConfig,
               model_config: ModelConfig | None = None,
               params: ModelParams | None = None,
               out_dir=None, ckpt_extra: dict | None = None) -> Stage1Result:
    """Seeded epochs of contrastive + distillation training."""
    if params is None:
        model_config = model_config or ModelConfig(dim_base=bank.dim)
        params = ModelParams.init(model_config, seed=cfg.seed)
    groups = build_param_groups(params, cfg)

    n_train = len(split.train)
    per_epoch = n_train // cfg.batch_size + (1 if n_train % cfg.batch_size >= 2 else 0)
    total_steps = max(1, per_epoch * cfg.epochs)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    curve = []
    step = 0
    ckpt_path = None
    for epoch in range(cfg.epochs):
        for batch in epoch_batches(bank, split, cfg.batch_size, rng):
            l_text, l_video, l_dist, l_pre = batch_losses(params, bank, batch, cfg.alpha)
            value = l_pre.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite pretrain loss at step {step}: "
                    f"l_text={l_text.item()}, l_video={l_video.item()}, l_dist={l_dist.item()}")
            ad.zero_grads(params.params.values())
            l_pre.backward()
            decay = cosine_lr(step, total_steps, 1.0)
            for group, state in groups:
                adamw_step(group, state, state.base_lr * decay)
            curve.append({
                "step": step,
                "l_text": l_text.item(),
                "l_video": l_video.item(),
                "l_dist": l_dist.item(),
                "l_pre": value,
                "lr": decay,
                "tau": params.tau_value(),
            })
            step += 1
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            ckpt_path = out_dir / f"stage1_epoch{epoch + 1:04d}.ckpt"
            save_checkpoint(params, ckpt_path, step=step, seed=cfg.seed, extra=ckpt_extra)

    if out_dir is not None:
        ckpt_path = out_dir / "stage1.ckpt"
        save_checkpoint(params, ckpt_path, step=step, seed=cfg.seed, extra=ckpt_extra)
        write_curve(curve, out_dir / "stage1_curve.csv")
    return Stage1Result(params=params, curve=curve,
                        checkpoint_path=str(ckpt_path) if ckpt_path else None)
