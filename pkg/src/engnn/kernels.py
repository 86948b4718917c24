"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``ENGNN_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("ENGNN_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def csr_rowsum(indptr, indices, x, backend=None):
    """out[i] = sum of x[indices[k]] for k in indptr[i]:indptr[i+1]."""
    impl = _pick(backend)
    x = np.ascontiguousarray(x, dtype=np.float64)
    return impl.csr_rowsum(_as_i64(indptr), _as_i64(indices), x)


def walk_counts(indptr, indices, k, closed, backend=None):
    """Per-node number of simple k-vertex paths (closed=False) or k-cycles (closed=True)."""
    impl = _pick(backend)
    return impl.walk_counts(_as_i64(indptr), _as_i64(indices), int(k), bool(closed))


def available_backends():
    out = ["python"]
    if BACKEND == "cython":
        out.append("cython")
    return out


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not built")
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")


def _as_i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)
