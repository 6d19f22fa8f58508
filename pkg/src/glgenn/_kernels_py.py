"""Pure numpy implementation of the blade-product kernels.

Same contract as the compiled ``_ckernels`` module. Used when the extension
is missing or when ``GLGENN_PURE_PYTHON=1``.
"""
import numpy as np

# cap on the size of the gathered [N, C, D, D] operand
_CHUNK_ELEMS = 1 << 22


def _xor_grid(dim):
    idx = np.arange(dim)
    return idx[:, None] ^ idx[None, :]


def _chunks(n_rows, per_row):
    step = max(1, _CHUNK_ELEMS // max(per_row, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(n_rows, start + step))


def xor_bilinear(x, y, table):
    n, c, d = x.shape
    grid = _xor_grid(d)
    # permuted[t, a, m] = table[t, a, a ^ m]
    permuted = table[:, np.arange(d)[:, None], grid]
    out = np.empty((n, c, d))
    spec = "nca,am,ncam->ncm" if table.shape[0] == 1 else "nca,cam,ncam->ncm"
    perm = permuted[0] if table.shape[0] == 1 else permuted
    for sl in _chunks(n, c * d * d):
        out[sl] = np.einsum(spec, x[sl], perm, y[sl][..., grid])
    return out


def xor_bilinear_table_grad(g, x, y, table_channels):
    n, c, d = x.shape
    grid = _xor_grid(d)
    acc = np.zeros((c, d, d))
    for sl in _chunks(n, c * d * d):
        acc += np.einsum("nca,ncb,ncab->cab", x[sl], y[sl], g[sl][..., grid])
    if table_channels == 1:
        return acc.sum(axis=0, keepdims=True)
    return acc
