"""Backend selection for the blade-product hot loop.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback. Set ``GLGENN_PURE_PYTHON=1`` to force the fallback.

Both backends compute, for ``x, y`` of shape ``[N, C, D]`` and a weight table
of shape ``[C, D, D]`` (or ``[1, D, D]``, shared across channels)::

    out[n, c, a ^ b] += table[c, a, b] * x[n, c, a] * y[n, c, b]
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("GLGENN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _prep(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def _check(x, y, table):
    if x.ndim != 3 or x.shape != y.shape:
        raise ValueError(f"operands must share a [N, C, D] shape, got {x.shape} and {y.shape}")
    d = x.shape[2]
    if table.ndim != 3 or table.shape[1:] != (d, d) or table.shape[0] not in (1, x.shape[1]):
        raise ValueError(f"table shape {table.shape} incompatible with operands {x.shape}")


def xor_bilinear(x, y, table, backend=None):
    x, y, table = _prep(x), _prep(y), _prep(table)
    _check(x, y, table)
    impl = _pick(backend)
    return impl.xor_bilinear(x, y, table)


def xor_bilinear_table_grad(g, x, y, table_channels, backend=None):
    """Gradient of ``sum(g * xor_bilinear(x, y, table))`` with respect to ``table``."""
    g, x, y = _prep(g), _prep(x), _prep(y)
    if g.shape != x.shape or x.shape != y.shape:
        raise ValueError("g, x, y must share a shape")
    impl = _pick(backend)
    return impl.xor_bilinear_table_grad(g, x, y, int(table_channels))


def permute_for_left(table):
    """Table ``t'`` with ``xor_bilinear(g, y, t')`` equal to the gradient in ``x``."""
    d = table.shape[-1]
    idx = np.arange(d)
    grid = idx[:, None] ^ idx[None, :]
    # t'[c, k, b] = t[c, k ^ b, b]
    return table[:, grid, idx[None, :]]


def permute_for_right(table):
    """Table ``t''`` with ``xor_bilinear(x, g, t'')`` equal to the gradient in ``y``."""
    d = table.shape[-1]
    idx = np.arange(d)
    grid = idx[:, None] ^ idx[None, :]
    # t''[c, a, k] = t[c, a, a ^ k]
    return table[:, idx[:, None], grid]


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")
