"""Reverse-mode differentiation over dense tensors.

A Tensor wraps a float32/float64 numpy array and records, when gradients are
enabled, the parents and a backward closure for each produced value. The hot
row-wise kernels dispatch through `gvr.kernels`; everything else is plain
numpy. Broadcasting is restricted to leading batch dimensions: a right
operand must match a trailing suffix of the left operand's shape, which keeps
every backward rule a sum over leading axes.

Gradients accumulate additively into zero-initialized buffers; callers zero
them explicitly between steps (see `zero_grads`).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from gvr import kernels as K
from gvr.errors import (
    ContractViolation,
    DegenerateInputError,
    DimensionError,
    UsageError,
)

_FLOAT_DTYPES = (np.float32, np.float64)
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _bwd=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse pass from a scalar value."""
        if self.data.size != 1:
            raise UsageError(f"backward() requires a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar; python scalars go through the *_const paths
    def __add__(self, other):
        return add_const(self, other) if _is_scalar(other) else add(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        return add_const(self, -other) if _is_scalar(other) else sub(self, other)

    def __mul__(self, other):
        return mul_const(self, other) if _is_scalar(other) else mul(self, other)

    def __rmul__(self, other):
        return mul_const(self, other)

    def __truediv__(self, other):
        return mul_const(self, 1.0 / other) if _is_scalar(other) else div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _is_scalar(x):
    return isinstance(x, (int, float)) or (isinstance(x, np.generic) and np.isscalar(x))


def _make(data, parents, bwd):
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _bwd=bwd)


def _check_same_dtype(*tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ContractViolation(f"mixed dtypes in one op: {dt} vs {t.dtype}")


def _suffix_ok(a_shape, b_shape):
    k = len(b_shape)
    return k <= len(a_shape) and tuple(a_shape[len(a_shape) - k:]) == tuple(b_shape)


def _reduce_to(g, shape):
    """Sum g over the leading axes it gained relative to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _binary_shapes(a, b, op):
    _check_same_dtype(a, b)
    if a.shape == b.shape:
        return
    if not _suffix_ok(a.shape, b.shape):
        raise DimensionError(f"{op}: shape {b.shape} does not broadcast against {a.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-_reduce_to(g, b.shape))

    return _make(a.data - b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "div")
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            b._accumulate(_reduce_to(-g * out_data / b.data, b.shape))

    return _make(out_data, (a, b), bwd)


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.dtype)

    def bwd(g):
        a._accumulate(g)

    return _make(a.data + c, (a,), bwd)


def mul_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.dtype)

    def bwd(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(g / a.data)

    with np.errstate(divide="ignore"):
        return _make(np.log(a.data), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(np.full_like(a.data, float(g)))

    return _make(a.data.sum(), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        a._accumulate(np.full_like(a.data, float(g) / n))

    return _make(a.data.mean(), (a,), bwd)


def weighted_sum(a: Tensor, w) -> Tensor:
    """sum(a * w) for a constant weight array of the same shape."""
    w = np.asarray(w, dtype=a.dtype)
    if w.shape != a.shape:
        raise DimensionError(f"weighted_sum: weights {w.shape} vs data {a.shape}")

    def bwd(g):
        a._accumulate(float(g) * w)

    return _make((a.data * w).sum(), (a,), bwd)


def neglog_weighted(p: Tensor, w) -> Tensor:
    """-sum(w * log p) over entries where w != 0.

    Entries with zero weight contribute nothing even if p is 0 there, which is
    what soft cross-entropies need.
    """
    w = np.asarray(w, dtype=p.dtype)
    if w.shape != p.shape:
        raise DimensionError(f"neglog_weighted: weights {w.shape} vs data {p.shape}")
    mask = w != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(mask, np.log(p.data), 0.0)
    out = -(w * logs).sum()

    def bwd(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            gp = np.where(mask, -w / p.data, 0.0)
        p._accumulate(float(g) * gp)

    return _make(out, (p,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")

    def bwd(g):
        g = np.ascontiguousarray(g)
        if a.requires_grad:
            a._accumulate(K.matmul(g, np.ascontiguousarray(b.data.T)))
        if b.requires_grad:
            b._accumulate(K.matmul(np.ascontiguousarray(a.data.T), g))

    return _make(K.matmul(a.data, b.data), (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.shape}")

    def bwd(g):
        a._accumulate(np.ascontiguousarray(g.T))

    return _make(np.ascontiguousarray(a.data.T), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"slice_rows needs a 2-D tensor, got {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a._accumulate(full)

    return _make(a.data[start:stop].copy(), (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"slice_cols needs a 2-D tensor, got {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._accumulate(full)

    return _make(np.ascontiguousarray(a.data[:, start:stop]), (a,), bwd)


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[0] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, bwd)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[1] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                p._accumulate(np.ascontiguousarray(g[:, lo:hi]))

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, bwd)


def stack_rows(vectors) -> Tensor:
    return concat_rows([reshape(v, (1, v.shape[0])) for v in vectors])


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """Tile the whole row block k times: [R, D] -> [k*R, D]."""
    if a.ndim != 2:
        raise DimensionError(f"repeat_rows needs a 2-D tensor, got {a.shape}")
    r = a.shape[0]

    def bwd(g):
        a._accumulate(g.reshape(k, r, -1).sum(axis=0))

    return _make(np.tile(a.data, (k, 1)), (a,), bwd)


def repeat_interleave_rows(a: Tensor, k: int) -> Tensor:
    """Repeat each row k consecutive times: [R, D] -> [R*k, D]."""
    if a.ndim != 2:
        raise DimensionError(f"repeat_interleave_rows needs a 2-D tensor, got {a.shape}")
    r = a.shape[0]

    def bwd(g):
        a._accumulate(g.reshape(r, k, -1).sum(axis=1))

    return _make(np.repeat(a.data, k, axis=0), (a,), bwd)


def _as_rows(t: Tensor):
    """View a 1-D tensor as one row; passthrough for 2-D."""
    if t.ndim == 1:
        return t.data.reshape(1, -1), True
    if t.ndim == 2:
        return t.data, False
    raise DimensionError(f"expected 1-D or 2-D tensor, got {t.shape}")


def softmax(a: Tensor) -> Tensor:
    """Row-wise stable softmax over the last axis."""
    x2, squeezed = _as_rows(a)
    y2 = K.softmax(np.ascontiguousarray(x2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(y2.shape))
        a._accumulate(K.softmax_bwd(y2, g2).reshape(a.shape))

    return _make(y2[0] if squeezed else y2, (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    x2, squeezed = _as_rows(a)
    y2 = K.log_softmax(np.ascontiguousarray(x2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(y2.shape))
        a._accumulate(K.log_softmax_bwd(y2, g2).reshape(a.shape))

    return _make(y2[0] if squeezed else y2, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization over the last axis, then affine."""
    _check_same_dtype(x, gain, bias)
    x2, squeezed = _as_rows(x)
    d = x2.shape[1]
    if d == 0:
        raise DimensionError("layer_norm over an empty last dimension")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    y2, xhat, rstd = K.layer_norm_fwd(np.ascontiguousarray(x2), gain.data, bias.data, eps)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(y2.shape))
        gx, dgain, dbias = K.layer_norm_bwd(xhat, rstd, gain.data, g2)
        if x.requires_grad:
            x._accumulate(gx.reshape(x.shape))
        if gain.requires_grad:
            gain._accumulate(dgain)
        if bias.requires_grad:
            bias._accumulate(dbias)

    return _make(y2[0] if squeezed else y2, (x, gain, bias), bwd)


def gelu(a: Tensor) -> Tensor:
    flat = np.ascontiguousarray(a.data.reshape(-1))
    y = K.gelu(flat).reshape(a.shape)

    def bwd(g):
        gflat = np.ascontiguousarray(g.reshape(-1))
        a._accumulate(K.gelu_bwd(flat, gflat).reshape(a.shape))

    return _make(y, (a,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b). A 1-D x is treated as a single row and squeezed back."""
    if x.ndim == 1:
        out = linear(reshape(x, (1, x.shape[0])), w, b)
        return reshape(out, (out.shape[1],))
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def l2_normalize_rows(x: Tensor) -> Tensor:
    x2, squeezed = _as_rows(x)
    y2, norms = K.l2norm_rows(np.ascontiguousarray(x2))
    if not np.all(norms > 0.0):
        raise DegenerateInputError("cannot normalize a zero-norm row")

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(y2.shape))
        x._accumulate(K.l2norm_rows_bwd(y2, norms, g2).reshape(x.shape))

    return _make(y2[0] if squeezed else y2, (x,), bwd)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two [R, D] tensors -> [R]."""
    _check_same_dtype(a, b)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"cosine_rows: shapes {a.shape} and {b.shape} must be equal 2-D")
    ahat, na = K.l2norm_rows(np.ascontiguousarray(a.data))
    bhat, nb = K.l2norm_rows(np.ascontiguousarray(b.data))
    if not (np.all(na > 0.0) and np.all(nb > 0.0)):
        raise DegenerateInputError("cosine similarity of a zero-norm row")
    c = (ahat * bhat).sum(axis=1)

    def bwd(g):
        gc = g[:, None]
        if a.requires_grad:
            a._accumulate(gc * (bhat - c[:, None] * ahat) / na[:, None])
        if b.requires_grad:
            b._accumulate(gc * (ahat - c[:, None] * bhat) / nb[:, None])

    return _make(c, (a, b), bwd)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors as a scalar tensor."""
    if u.ndim != 1 or v.ndim != 1:
        raise DimensionError(f"cosine_similarity expects vectors, got {u.shape} and {v.shape}")
    c = cosine_rows(reshape(u, (1, u.shape[0])), reshape(v, (1, v.shape[0])))
    return reshape(c, ())


def cross_entropy_soft(pred: Tensor, target) -> Tensor:
    """-sum(target * log pred) for two probability vectors.

    `target` is a constant distribution; gradient flows into pred only.
    """
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    p = pred.data
    if p.shape != t.shape or p.ndim != 1:
        raise DimensionError(f"cross_entropy_soft: shapes {p.shape} vs {t.shape}")
    for name, vec in (("pred", p), ("target", t)):
        if abs(float(vec.sum()) - 1.0) > 1e-6 or np.any(vec < -1e-12):
            raise ContractViolation(f"cross_entropy_soft: {name} is not a probability vector")
    return neglog_weighted(pred, t)


def attend_texts(weights: Tensor, texts: np.ndarray) -> Tensor:
    """Per-class convex combination of constant text embeddings.

    weights: [B*C, M] attention rows; texts: [C, M, D] constant bank.
    Returns [B*C, D], where row b*C + c is weights[b*C+c] @ texts[c].
    """
    c_classes, m, d = texts.shape
    rows = weights.shape[0]
    if weights.ndim != 2 or weights.shape[1] != m or rows % c_classes != 0:
        raise DimensionError(f"attend_texts: weights {weights.shape} vs texts {texts.shape}")
    b = rows // c_classes
    t = np.asarray(texts, dtype=weights.dtype)
    w3 = weights.data.reshape(b, c_classes, m)
    out = np.einsum("bcm,cmd->bcd", w3, t).reshape(rows, d)

    def bwd(g):
        g3 = g.reshape(b, c_classes, d)
        weights._accumulate(np.einsum("bcd,cmd->bcm", g3, t).reshape(rows, m))

    return _make(out, (weights,), bwd)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckEntry:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: GradCheckEntry | None
    entries: list[GradCheckEntry] = field(repr=False, default_factory=list)

    def ok(self, tol):
        return self.max_rel_err < tol


def _rel_err(a, n, zero_floor=1e-7):
    scale = max(abs(a), abs(n))
    if scale < zero_floor:
        return 0.0
    return abs(a - n) / scale


def grad_check(f, params: dict[str, Tensor], eps: float = 1e-5,
               max_coords_per_param: int | None = None, rng=None) -> GradCheckReport:
    """Compare analytic gradients of scalar f() against central differences.

    f is re-evaluated with each coordinate perturbed by +/- eps; coordinates
    may be subsampled for large parameters. Failures are report entries, not
    exceptions. Both-near-zero pairs count as exact agreement.
    """
    if eps <= 0:
        raise ContractViolation("grad_check: eps must be positive")
    zero_grads(params.values())
    loss = f()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    zero_grads(params.values())

    entries = []
    rng = rng or np.random.default_rng(0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = f().item()
            flat[i] = orig - eps
            with no_grad():
                f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[i])
            entries.append(GradCheckEntry(name, int(i), a, numeric, _rel_err(a, numeric)))

    worst = max(entries, key=lambda e: e.rel_err, default=None)
    return GradCheckReport(worst.rel_err if worst else 0.0, worst, entries)
