"""Independent reference implementations used only by the tests.

Nothing here imports the package's product code: products are computed by
reducing generator words with adjacent swaps, and multivectors are plain dicts
from sorted index tuples to coefficients.
"""
from __future__ import annotations

import itertools

import numpy as np


def metric(p: int, q: int, r: int) -> list[float]:
    return [1.0] * p + [-1.0] * q + [0.0] * r


def reduce_word(word, eta) -> tuple[float, tuple]:
    """Bubble-sort a word of 1-based generator indices, cancelling equal neighbours."""
    word = list(word)
    sign = 1.0
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(word) - 1:
            a, b = word[i], word[i + 1]
            if a == b:
                sign *= eta[a - 1]
                del word[i:i + 2]
                changed = True
                if sign == 0.0:
                    return 0.0, ()
                continue
            if a > b:
                word[i], word[i + 1] = b, a
                sign = -sign
                changed = True
            i += 1
    return sign, tuple(word)


def product(x: dict, y: dict, eta) -> dict:
    out: dict = {}
    for bx, cx in x.items():
        for by, cy in y.items():
            s, blade = reduce_word(bx + by, eta)
            if s != 0.0:
                out[blade] = out.get(blade, 0.0) + s * cx * cy
    return {k: v for k, v in out.items() if v != 0.0}


def all_blades(n: int) -> list[tuple]:
    return [c for k in range(n + 1) for c in itertools.combinations(range(1, n + 1), k)]


def to_dense(x: dict, n: int) -> np.ndarray:
    arr = np.zeros(1 << n)
    for blade, c in x.items():
        mask = 0
        for i in blade:
            mask |= 1 << (i - 1)
        arr[mask] += c
    return arr


def from_dense(arr, n: int) -> dict:
    out = {}
    for mask, c in enumerate(arr):
        if c != 0.0:
            out[tuple(i + 1 for i in range(n) if (mask >> i) & 1)] = float(c)
    return out


def finite_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function over every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        grad[idx] = (hi - lo) / (2 * eps)
    return grad


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def random_multivector(rng, n: int) -> np.ndarray:
    return rng.normal(size=1 << n)
