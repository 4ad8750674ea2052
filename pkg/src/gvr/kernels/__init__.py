"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist: a compiled
Cython extension (`gvr.kernels._fast`) and a numpy reference
(`gvr.kernels.numpy_backend`). `benchmarks/bench_kernels.py` compares them;
at desk-scale shapes the compiled path wins on the fused row kernels
(layer norm, gelu, row normalization) while numpy's SIMD exp and threaded
BLAS win on wide softmax and matmul. The default ``auto`` mode therefore
mixes per kernel; ``GVR_KERNELS=numpy|cython|auto`` overrides.
"""

import os

from gvr.kernels import numpy_backend

# kernels the compiled backend is measured faster on (see the benchmark)
_FUSED_WINS = ("layer_norm_fwd", "layer_norm_bwd", "gelu", "gelu_bwd",
               "l2norm_rows", "l2norm_rows_bwd")
_ALL_KERNELS = ("matmul", "softmax", "softmax_bwd", "log_softmax", "log_softmax_bwd",
                "adamw_update") + _FUSED_WINS


def _load_cython():
    from gvr.kernels import _fast  # noqa: PLC0415

    return _fast


def available_backends():
    """Name -> module for every importable backend."""
    out = {"numpy": numpy_backend}
    try:
        out["cython"] = _load_cython()
    except ImportError:
        pass
    return out


def _select():
    requested = os.environ.get("GVR_KERNELS", "auto").strip().lower() or "auto"
    if requested == "numpy":
        return "numpy", {k: getattr(numpy_backend, k) for k in _ALL_KERNELS}
    if requested == "cython":
        fast = _load_cython()
        return "cython", {k: getattr(fast, k) for k in _ALL_KERNELS}
    if requested != "auto":
        raise RuntimeError(f"GVR_KERNELS must be 'numpy', 'cython' or 'auto', got {requested!r}")
    try:
        fast = _load_cython()
    except ImportError:
        return "numpy", {k: getattr(numpy_backend, k) for k in _ALL_KERNELS}
    table = {k: getattr(numpy_backend, k) for k in _ALL_KERNELS}
    table.update({k: getattr(fast, k) for k in _FUSED_WINS})
    return "auto", table


backend_name, _table = _select()

matmul = _table["matmul"]
softmax = _table["softmax"]
softmax_bwd = _table["softmax_bwd"]
log_softmax = _table["log_softmax"]
log_softmax_bwd = _table["log_softmax_bwd"]
layer_norm_fwd = _table["layer_norm_fwd"]
layer_norm_bwd = _table["layer_norm_bwd"]
gelu = _table["gelu"]
gelu_bwd = _table["gelu_bwd"]
l2norm_rows = _table["l2norm_rows"]
l2norm_rows_bwd = _table["l2norm_rows_bwd"]
adamw_update = _table["adamw_update"]
