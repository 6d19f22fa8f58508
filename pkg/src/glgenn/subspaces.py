"""Grade, parity and quaternion-type projections and the conjugation involutions.

Quaternion type ``m`` collects the grades ``k`` with ``k % 4 == m``; these are
the joint sign-eigenspaces of grade involution and reversion.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .algebra import Multivector, Signature

# (grade involution, reversion, Clifford conjugation) sign per quaternion type
QT_SIGNS = {
    "grade_involution": (1, -1, 1, -1),
    "reversion": (1, 1, -1, -1),
    "clifford_conjugation": (1, -1, -1, 1),
}


@lru_cache(maxsize=None)
def _blade_sign_vectors(sig: Signature) -> dict[str, np.ndarray]:
    k = sig.grades
    inv = (-1.0) ** k
    rev = (-1.0) ** (k * (k - 1) // 2)
    out = {"grade_involution": inv, "reversion": rev, "clifford_conjugation": inv * rev}
    for arr in out.values():
        arr.flags.writeable = False
    return out


def involution_signs(sig: Signature, name: str) -> np.ndarray:
    """Per-blade sign vector (length ``2**n``) of a named involution."""
    return _blade_sign_vectors(sig)[name]


@lru_cache(maxsize=None)
def qt_indicator(sig: Signature) -> np.ndarray:
    """``[4, 2**n]`` 0/1 matrix; row ``m`` selects the blades of quaternion type ``m``."""
    ind = (sig.grades[None, :] % 4 == np.arange(4)[:, None]).astype(np.float64)
    ind.flags.writeable = False
    return ind


@lru_cache(maxsize=None)
def grade_indicator(sig: Signature) -> np.ndarray:
    """``[n+1, 2**n]`` 0/1 matrix; row ``k`` selects the blades of grade ``k``."""
    ind = (sig.grades[None, :] == np.arange(sig.n + 1)[:, None]).astype(np.float64)
    ind.flags.writeable = False
    return ind


def qt_type(sig: Signature) -> np.ndarray:
    return sig.grades % 4


def _masked(x: Multivector, keep: np.ndarray) -> Multivector:
    return Multivector(x.sig, np.where(keep, x.coeffs, 0.0))


def grade_project(x: Multivector, k: int) -> Multivector:
    if not 0 <= k <= x.sig.n:
        raise ValueError(f"grade {k} out of range for {x.sig}")
    return _masked(x, x.sig.grades == k)


def parity_project(x: Multivector, l: int) -> Multivector:
    if l not in (0, 1):
        raise ValueError("parity must be 0 or 1")
    return _masked(x, x.sig.grades % 2 == l)


def qt_project(x: Multivector, m: int) -> Multivector:
    if m not in (0, 1, 2, 3):
        raise ValueError("quaternion type must be 0, 1, 2 or 3")
    return _masked(x, x.sig.grades % 4 == m)


def grade_involution(x: Multivector) -> Multivector:
    return Multivector(x.sig, x.coeffs * involution_signs(x.sig, "grade_involution"))


def reversion(x: Multivector) -> Multivector:
    return Multivector(x.sig, x.coeffs * involution_signs(x.sig, "reversion"))


def clifford_conjugation(x: Multivector) -> Multivector:
    return Multivector(x.sig, x.coeffs * involution_signs(x.sig, "clifford_conjugation"))


def expand_grade_signs(sig: Signature, lam: Sequence[float]) -> np.ndarray:
    """Expand a per-grade sign vector (length ``n+1``) to a per-blade one."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (sig.n + 1,):
        raise ValueError(f"need {sig.n + 1} grade signs, got shape {lam.shape}")
    if not np.all(np.abs(lam) == 1.0):
        raise ValueError("conjugation signs must be exactly +1 or -1")
    return lam[sig.grades]


def conjugation_op(x: Multivector, lam: Sequence[float]) -> Multivector:
    """``sum_k lam[k] <x>_k`` for a sign vector ``lam`` in ``{-1, +1}^(n+1)``."""
    return Multivector(x.sig, x.coeffs * expand_grade_signs(x.sig, lam))
