"""Dense multivector arithmetic over real Clifford algebras Cl(p, q, r).

Basis blades are indexed by bit masks: bit ``a - 1`` is set iff generator
``e_a`` occurs in the blade. Generators ``1..p`` square to +1, ``p+1..p+q``
to -1 and the remaining ``r`` generators square to 0.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from numbers import Real
from typing import Iterable, Sequence

import numpy as np

from . import kernels

MAX_DIM = 12
TABLE_DIM = 8


class SignatureMismatch(ValueError):
    pass


def _popcount(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.int64)
    count = np.zeros_like(arr)
    for bit in range(MAX_DIM):
        count += (arr >> bit) & 1
    return count


@dataclass(frozen=True)
class Signature:
    p: int
    q: int = 0
    r: int = 0

    def __post_init__(self):
        if min(self.p, self.q, self.r) < 0:
            raise ValueError(f"negative signature entry in {self}")
        if not 1 <= self.n <= MAX_DIM:
            raise ValueError(f"need 1 <= p+q+r <= {MAX_DIM}, got {self.n}")

    def __str__(self) -> str:
        return f"Cl({self.p},{self.q},{self.r})"

    @property
    def n(self) -> int:
        return self.p + self.q + self.r

    @property
    def dim(self) -> int:
        return 1 << self.n

    @cached_property
    def metric(self) -> np.ndarray:
        """Diagonal of the bilinear form, one entry per generator."""
        eta = np.array([1.0] * self.p + [-1.0] * self.q + [0.0] * self.r)
        eta.flags.writeable = False
        return eta

    @cached_property
    def grades(self) -> np.ndarray:
        g = _popcount(np.arange(self.dim))
        g.flags.writeable = False
        return g

    @cached_property
    def xor_index(self) -> np.ndarray:
        idx = np.arange(self.dim)
        x = idx[:, None] ^ idx[None, :]
        x.flags.writeable = False
        return x

    @cached_property
    def sign_table(self) -> np.ndarray | None:
        """``sign_table[a, b]`` is the coefficient of ``e_{a^b}`` in ``e_a e_b``.

        Only materialised for ``n <= 8``; larger algebras compute signs on the fly.
        """
        if self.n > TABLE_DIM:
            return None
        idx = np.arange(self.dim)
        table = blade_signs(self, idx[:, None], idx[None, :]).astype(np.float64)
        table.flags.writeable = False
        return table

    def blade_mask(self, indices: Iterable[int]) -> int:
        mask = 0
        for a in indices:
            if not 1 <= a <= self.n:
                raise ValueError(f"generator index {a} out of range for {self}")
            if mask & (1 << (a - 1)):
                raise ValueError(f"repeated generator e_{a}; use blade_product")
            mask |= 1 << (a - 1)
        return mask

    def e(self, *indices: int) -> "Multivector":
        """Basis blade ``e_{indices}``; ``sig.e()`` is the identity.

        Indices must be increasing; an out-of-order word is reduced with its sign.
        """
        coeffs = np.zeros(self.dim)
        sign, mask = 1, 0
        for a in indices:
            s, mask = blade_product(self, mask, self.blade_mask([a]))
            sign *= s
        coeffs[mask] = sign
        return Multivector(self, coeffs)

    def scalar(self, c: float) -> "Multivector":
        coeffs = np.zeros(self.dim)
        coeffs[0] = c
        return Multivector(self, coeffs)

    def vector(self, v: Sequence[float]) -> "Multivector":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"expected {self.n} vector components, got {v.shape}")
        coeffs = np.zeros(self.dim)
        coeffs[1 << np.arange(self.n)] = v
        return Multivector(self, coeffs)

    def zero(self) -> "Multivector":
        return Multivector(self, np.zeros(self.dim))


def blade_product(sig: Signature, a: int, b: int) -> tuple[int, int]:
    """Product of two basis blades as ``(sign, mask)`` with exact integer sign."""
    if not (0 <= a < sig.dim and 0 <= b < sig.dim):
        raise ValueError(f"blade mask out of range for {sig}")
    swaps = 0
    rest = a >> 1
    while rest:
        swaps += bin(rest & b).count("1")
        rest >>= 1
    sign = -1 if swaps & 1 else 1
    common = a & b
    bit = 0
    while common:
        if common & 1:
            if bit >= sig.p + sig.q:
                return 0, a ^ b
            if bit >= sig.p:
                sign = -sign
        common >>= 1
        bit += 1
    return sign, a ^ b


def blade_signs(sig: Signature, a, b) -> np.ndarray:
    """Vectorised :func:`blade_product` sign for broadcastable mask arrays."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    swaps = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.int64)
    for j in range(sig.n):
        bj = (b >> j) & 1
        swaps += bj * _popcount(a >> (j + 1))
    sign = 1 - 2 * (swaps & 1)
    common = a & b
    for j in range(sig.n):
        hit = (common >> j) & 1
        eta = int(sig.metric[j])
        if eta == 0:
            sign = np.where(hit == 1, 0, sign)
        elif eta < 0:
            sign = np.where(hit == 1, -sign, sign)
    return sign


class Multivector:
    """Immutable dense multivector: ``2**n`` coefficients over a fixed signature."""

    __slots__ = ("sig", "coeffs")

    def __init__(self, sig: Signature, coeffs):
        arr = np.array(coeffs, dtype=np.float64)
        if arr.shape != (sig.dim,):
            raise ValueError(f"{sig} needs {sig.dim} coefficients, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "sig", sig)
        object.__setattr__(self, "coeffs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Multivector is immutable")

    def _check(self, other: "Multivector"):
        if not isinstance(other, Multivector):
            return NotImplemented
        if other.sig != self.sig:
            raise SignatureMismatch(f"{self.sig} vs {other.sig}")
        return None

    def __add__(self, other):
        if isinstance(other, Real):
            return self + self.sig.scalar(float(other))
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Multivector(self.sig, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return Multivector(self.sig, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Real):
            return scale(self, float(other))
        if self._check(other) is NotImplemented:
            return NotImplemented
        return geometric_product(self, other)

    def __rmul__(self, other):
        if isinstance(other, Real):
            return scale(self, float(other))
        return NotImplemented

    def __truediv__(self, c):
        if not isinstance(c, Real):
            return NotImplemented
        return scale(self, 1.0 / float(c))

    def __repr__(self) -> str:
        return f"Multivector({self.sig}, {format_multivector(self)!r})"

    def __str__(self) -> str:
        return format_multivector(self)

    def allclose(self, other: "Multivector", rtol: float = 1e-9, atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=rtol, atol=atol))

    def norm(self) -> float:
        """Euclidean norm of the coefficient array (not a metric norm)."""
        return float(np.linalg.norm(self.coeffs))


def _same_sig(x: Multivector, y: Multivector) -> None:
    if x.sig != y.sig:
        raise SignatureMismatch(f"{x.sig} vs {y.sig}")


def add(x: Multivector, y: Multivector) -> Multivector:
    _same_sig(x, y)
    return Multivector(x.sig, x.coeffs + y.coeffs)


def scale(x: Multivector, c: float) -> Multivector:
    return Multivector(x.sig, x.coeffs * c)


def scalar_part(x: Multivector) -> float:
    return float(x.coeffs[0])


def geometric_product(x: Multivector, y: Multivector) -> Multivector:
    _same_sig(x, y)
    sig = x.sig
    table = sig.sign_table
    if table is not None:
        out = kernels.xor_bilinear(
            x.coeffs.reshape(1, 1, -1), y.coeffs.reshape(1, 1, -1), table.reshape(1, sig.dim, sig.dim)
        )
        return Multivector(sig, out.reshape(-1))
    # large algebras: loop over the nonzero blades of x, vectorised over y
    out = np.zeros(sig.dim)
    ys = np.flatnonzero(y.coeffs)
    for a in np.flatnonzero(x.coeffs):
        signs = blade_signs(sig, a, ys)
        np.add.at(out, a ^ ys, signs * x.coeffs[a] * y.coeffs[ys])
    return Multivector(sig, out)


def left_multiplication_matrix(x: Multivector) -> np.ndarray:
    """Matrix ``L`` with ``L @ y.coeffs == (x * y).coeffs``."""
    sig = x.sig
    table = sig.sign_table
    if table is not None:
        grid = sig.xor_index
        idx = np.arange(sig.dim)
        # L[m, b] = sign(m ^ b, b) * x[m ^ b]
        return table[grid, idx[None, :]] * x.coeffs[grid]
    return np.stack([geometric_product(x, _basis(sig, b)).coeffs for b in range(sig.dim)], axis=1)


def right_multiplication_matrix(x: Multivector) -> np.ndarray:
    """Matrix ``R`` with ``R @ y.coeffs == (y * x).coeffs``."""
    sig = x.sig
    table = sig.sign_table
    if table is not None:
        grid = sig.xor_index
        idx = np.arange(sig.dim)
        # R[m, a] = sign(a, a ^ m) * x[a ^ m]
        return table[idx[None, :], grid.T] * x.coeffs[grid.T]
    return np.stack([geometric_product(_basis(sig, a), x).coeffs for a in range(sig.dim)], axis=1)


def _basis(sig: Signature, mask: int) -> Multivector:
    coeffs = np.zeros(sig.dim)
    coeffs[mask] = 1.0
    return Multivector(sig, coeffs)


def basis_blades(sig: Signature) -> list[Multivector]:
    return [_basis(sig, m) for m in range(sig.dim)]


# --- text serialisation -------------------------------------------------------

def _blade_name(sig: Signature, mask: int) -> str:
    if mask == 0:
        return "e"
    idx = [str(a + 1) for a in range(sig.n) if mask >> a & 1]
    sep = "," if sig.n >= 10 else ""
    return "e_" + sep.join(idx)


def format_multivector(x: Multivector) -> str:
    """``1*e + 2*e_1 + -4*e_234``; the zero multivector is written ``0``."""
    terms = [f"{float(c)!r}*{_blade_name(x.sig, m)}" for m, c in enumerate(x.coeffs) if c != 0.0]
    return " + ".join(terms) if terms else "0"


_TERM = re.compile(r"^([-+]?[^*\s]+)\s*\*\s*e(?:_([0-9,]+))?$")
_BARE = re.compile(r"^([-+]?)e(?:_([0-9,]+))?$")


def parse_multivector(sig: Signature, text: str) -> Multivector:
    """Inverse of :func:`format_multivector`; also accepts `` - `` separators and bare blades."""
    coeffs = np.zeros(sig.dim)
    text = text.strip()
    if text in ("", "0"):
        return Multivector(sig, coeffs)
    parts = re.split(r"\s+([+-])\s+", text)
    terms = [(1.0, parts[0])] + [(-1.0 if op == "-" else 1.0, t) for op, t in zip(parts[1::2], parts[2::2])]
    for sign, raw in terms:
        raw = raw.strip()
        m = _TERM.match(raw)
        if m:
            coef = float(m.group(1))
        else:
            m = _BARE.match(raw)
            if not m:
                raise ValueError(f"cannot parse multivector term {raw!r}")
            coef = -1.0 if m.group(1) == "-" else 1.0
        digits = m.group(2)
        if digits is None:
            indices: list[int] = []
        elif "," in digits or sig.n >= 10:
            indices = [int(t) for t in digits.split(",") if t]
        else:
            indices = [int(ch) for ch in digits]
        coeffs += sign * coef * sig.e(*indices).coeffs
    return Multivector(sig, coeffs)
