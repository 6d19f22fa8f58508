"""Versors, adjoint representations and the Lipschitz group / orthogonal group link.

A :class:`Versor` is stored as an ordered list of simple factors whose inverses
are known in closed form, so no general multivector inversion is needed:

* an invertible non-degenerate vector ``v`` with inverse ``v / q(v)``;
* a radical shear ``e + m e_a e_b`` (``e_b`` radical) with inverse ``e - m e_a e_b``.

Matrices act on column vectors: column ``a`` of an orthogonal matrix holds the
image of the generator ``e_{a+1}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.linalg

from .algebra import (
    Multivector,
    Signature,
    geometric_product,
    left_multiplication_matrix,
    right_multiplication_matrix,
)
from .subspaces import clifford_conjugation, grade_involution, parity_project, reversion

DEFAULT_TOL = 1e-9


class NotOrthogonalError(ValueError):
    pass


class NotLipschitzError(ValueError):
    pass


def quadratic_form(sig: Signature, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum(sig.metric * v * v))


def _vector_coeffs(x: Multivector) -> np.ndarray:
    return x.coeffs[1 << np.arange(x.sig.n)]


def _product(sig: Signature, items) -> Multivector:
    return reduce(geometric_product, items, sig.scalar(1.0))


def _classify_factor(f: Multivector) -> Multivector:
    """Return the closed-form inverse of an admissible factor or raise."""
    sig = f.sig
    nondeg = sig.p + sig.q
    nz = np.flatnonzero(f.coeffs)
    vec_masks = {1 << a for a in range(nondeg)}
    if nz.size and all(int(m) in vec_masks for m in nz):
        v = _vector_coeffs(f)
        qv = quadratic_form(sig, v)
        if abs(qv) <= 1e-12 * float(v @ v):
            raise NotLipschitzError(f"null vector factor {f} has no inverse")
        return f / qv
    if f.coeffs[0] == 1.0 and nz.size == 2:
        mask = int(nz[1])
        bits = [a for a in range(sig.n) if mask >> a & 1]
        if len(bits) == 2 and bits[0] < nondeg <= bits[1]:
            coeffs = np.array(f.coeffs)
            coeffs[mask] = -coeffs[mask]
            return Multivector(sig, coeffs)
    raise NotLipschitzError(f"factor {f} is neither a non-degenerate vector nor a radical shear")


@dataclass(frozen=True)
class Versor:
    sig: Signature
    factors: tuple[Multivector, ...] = ()
    factor_inverses: tuple[Multivector, ...] = field(default=(), repr=False)
    product: Multivector = field(default=None, repr=False)
    inverse: Multivector = field(default=None, repr=False)

    @classmethod
    def from_factors(cls, sig: Signature, factors: Sequence[Multivector]) -> "Versor":
        factors = tuple(factors)
        for f in factors:
            if f.sig != sig:
                raise ValueError(f"factor over {f.sig} in a versor over {sig}")
        inverses = tuple(_classify_factor(f) for f in factors)
        product = _product(sig, factors)
        inverse = _product(sig, reversed(inverses))
        return cls(sig, factors, inverses, product, inverse)

    @classmethod
    def identity(cls, sig: Signature) -> "Versor":
        return cls.from_factors(sig, ())

    def __mul__(self, other: "Versor") -> "Versor":
        if not isinstance(other, Versor):
            return NotImplemented
        return Versor.from_factors(self.sig, self.factors + other.factors)

    def __len__(self) -> int:
        return len(self.factors)


@dataclass(frozen=True)
class InvertibleElement:
    """A general invertible multivector paired with a numerically solved inverse.

    Only for probing group membership of elements that are not versors.
    """

    sig: Signature
    product: Multivector
    inverse: Multivector

    @classmethod
    def solve(cls, x: Multivector, cond_limit: float = 1e10) -> "InvertibleElement":
        mat = left_multiplication_matrix(x)
        if np.linalg.cond(mat) > cond_limit:
            raise np.linalg.LinAlgError(f"{x} is (numerically) not invertible")
        rhs = np.zeros(x.sig.dim)
        rhs[0] = 1.0
        return cls(x.sig, x, Multivector(x.sig, np.linalg.solve(mat, rhs)))


def reflection(sig: Signature, v: Sequence[float]) -> Multivector:
    """Vector factor from components on the non-degenerate generators."""
    v = np.asarray(v, dtype=np.float64)
    full = np.zeros(sig.n)
    full[: v.size] = v
    if np.any(full[sig.p + sig.q:] != 0):
        raise ValueError("reflection vectors live in the non-degenerate subspace")
    return sig.vector(full)


def radical_shear(sig: Signature, a: int, b: int, m: float) -> Multivector:
    """``e + m e_a e_b`` for a non-degenerate generator ``a`` and radical ``b`` (1-based)."""
    if not (1 <= a <= sig.p + sig.q < b <= sig.n):
        raise ValueError(f"need a non-degenerate a and radical b, got a={a}, b={b} in {sig}")
    return sig.scalar(1.0) + m * sig.e(a, b)


def _check_sig(T, x: Multivector) -> None:
    if T.sig != x.sig:
        raise ValueError(f"signature mismatch {T.sig} vs {x.sig}")


def adjoint(T, x: Multivector) -> Multivector:
    _check_sig(T, x)
    return T.product * x * T.inverse


def twisted_adjoint_check(T, x: Multivector) -> Multivector:
    _check_sig(T, x)
    return grade_involution(T.product) * x * T.inverse


def twisted_adjoint(T, x: Multivector) -> Multivector:
    _check_sig(T, x)
    even = T.product * parity_project(x, 0) * T.inverse
    odd = grade_involution(T.product) * parity_project(x, 1) * T.inverse
    return even + odd


def twisted_adjoint_matrix(T) -> np.ndarray:
    """``D x D`` matrix of the linear map ``x -> twisted_adjoint(T, x)``."""
    sig = T.sig
    odd = (sig.grades % 2).astype(bool)
    right = right_multiplication_matrix(T.inverse)
    left_even = left_multiplication_matrix(T.product)
    left_odd = left_multiplication_matrix(grade_involution(T.product))
    mat = left_even @ right
    mat[:, odd] = (left_odd @ right)[:, odd]
    return mat


def psi(x: Multivector) -> Multivector:
    return reversion(x) * x


def chi(x: Multivector) -> Multivector:
    return clifford_conjugation(x) * x


def sample_lipschitz(
    sig: Signature,
    seed,
    k_vector_factors: int = 2,
    k_radical_factors: int = 0,
    min_q: float = 0.1,
) -> Versor:
    """Random element of the Lipschitz group built from simple factors.

    ``seed`` may be an int or a ``numpy.random.Generator``. Vector factors are
    drawn from a standard normal on the non-degenerate generators, resampled
    while ``|q(v)| < min_q`` or ``|q(v)| < min_q * |v|^2``, then rescaled to
    ``|q(v)| = 1``. Factor order is shuffled.
    """
    nondeg = sig.p + sig.q
    if k_vector_factors < 0 or k_radical_factors < 0:
        raise ValueError("factor counts must be non-negative")
    if k_vector_factors and nondeg == 0:
        raise ValueError(f"{sig} has no non-degenerate generators for vector factors")
    if k_radical_factors and (sig.r == 0 or nondeg == 0):
        raise ValueError(f"{sig} admits no radical shear factors")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    factors = []
    for _ in range(k_vector_factors):
        while True:
            v = rng.standard_normal(nondeg)
            qv = float(np.sum(sig.metric[:nondeg] * v * v))
            if abs(qv) >= min_q and abs(qv) >= min_q * float(v @ v):
                break
        factors.append(reflection(sig, v / np.sqrt(abs(qv))))
    for _ in range(k_radical_factors):
        a = int(rng.integers(1, nondeg + 1))
        b = int(rng.integers(nondeg + 1, sig.n + 1))
        factors.append(radical_shear(sig, a, b, float(rng.uniform(-1.0, 1.0))))
    order = rng.permutation(len(factors))
    return Versor.from_factors(sig, [factors[i] for i in order])


def preserves_qt_subspace(T, m: int, tol: float = DEFAULT_TOL) -> bool:
    """Does the twisted adjoint action of ``T`` map quaternion type ``m`` into itself?"""
    sig = T.sig
    mat = twisted_adjoint_matrix(T)
    qt = sig.grades % 4
    cols = mat[:, qt == m]
    if cols.size == 0:
        return True
    inside = cols[qt == m]
    outside = cols[qt != m]
    scale = max(float(np.abs(inside).max(initial=0.0)), float(np.abs(cols).max()))
    return bool(np.abs(outside).max(initial=0.0) <= tol * scale)


def twisted_centralizer_residual(X: Multivector) -> float:
    """``max_a |hat(X) e_a - e_a X|`` relative to the largest coefficient of ``X``."""
    sig = X.sig
    hx = grade_involution(X)
    scale = max(1.0, float(np.abs(X.coeffs).max()))
    worst = 0.0
    for a in range(1, sig.n + 1):
        ea = sig.e(a)
        worst = max(worst, float(np.abs((hx * ea - ea * X).coeffs).max()))
    return worst / scale


def in_twisted_centralizer_grade1(X: Multivector, tol: float = DEFAULT_TOL) -> bool:
    """``hat(X) e_a == e_a X`` for every generator, i.e. ``X`` lies in the Grassmann part."""
    return twisted_centralizer_residual(X) <= tol


def in_grassmann_subalgebra(X: Multivector, tol: float = DEFAULT_TOL) -> bool:
    """Coefficients vanish on every blade touching a non-degenerate generator."""
    sig = X.sig
    nondeg_bits = (1 << (sig.p + sig.q)) - 1
    touches = (np.arange(sig.dim) & nondeg_bits) != 0
    scale = max(1.0, float(np.abs(X.coeffs).max()))
    return bool(np.abs(X.coeffs[touches]).max(initial=0.0) <= tol * scale)


# --- orthogonal matrices --------------------------------------------------------

def _eta(sig: Signature) -> np.ndarray:
    return np.diag(sig.metric)


def orthogonality_violation(sig: Signature, mat: np.ndarray) -> tuple[float, tuple[int, int]]:
    """Max |M^T eta M - eta| entry and its position, including the restricted block form."""
    mat = np.asarray(mat, dtype=np.float64)
    resid = np.abs(mat.T @ _eta(sig) @ mat - _eta(sig))
    nondeg = sig.p + sig.q
    block = np.zeros_like(resid)
    block[:nondeg, nondeg:] = np.abs(mat[:nondeg, nondeg:])
    block[nondeg:, nondeg:] = np.abs(mat[nondeg:, nondeg:] - np.eye(sig.r))
    worst = np.maximum(resid, block)
    pos = np.unravel_index(int(np.argmax(worst)), worst.shape)
    return float(worst[pos]), (int(pos[0]), int(pos[1]))


@dataclass(frozen=True)
class OrthogonalMatrix:
    sig: Signature
    entries: np.ndarray
    tol: float = field(default=DEFAULT_TOL, repr=False, compare=False)

    def __post_init__(self):
        mat = np.array(self.entries, dtype=np.float64)
        n = self.sig.n
        if mat.shape != (n, n):
            raise ValueError(f"need a {n}x{n} matrix for {self.sig}, got {mat.shape}")
        worst, pos = orthogonality_violation(self.sig, mat)
        if not worst <= self.tol:
            raise NotOrthogonalError(
                f"matrix violates M^T eta M = eta / restricted block form by {worst:.3e} at entry {pos}"
            )
        mat.flags.writeable = False
        object.__setattr__(self, "entries", mat)

    @property
    def nondegenerate_block(self) -> np.ndarray:
        k = self.sig.p + self.sig.q
        return self.entries[:k, :k]

    @property
    def radical_coupling(self) -> np.ndarray:
        k = self.sig.p + self.sig.q
        return self.entries[k:, :k]


def versor_to_orthogonal(T, tol: float = DEFAULT_TOL) -> OrthogonalMatrix:
    sig = T.sig
    cols = []
    vec_masks = 1 << np.arange(sig.n)
    for a in range(1, sig.n + 1):
        img = twisted_adjoint(T, sig.e(a)).coeffs
        col = img[vec_masks]
        rest = np.delete(img, vec_masks)
        if np.abs(rest).max(initial=0.0) > tol * max(1.0, float(np.abs(col).max())):
            raise NotLipschitzError(f"twisted adjoint of {T} does not preserve grade 1")
        cols.append(col)
    return OrthogonalMatrix(sig, np.stack(cols, axis=1), tol=max(tol, DEFAULT_TOL))


def _reflection_matrix(eta: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.eye(w.size) - 2.0 * np.outer(w, w @ eta) / (w @ eta @ w)


def decompose_reflections(eta_diag: np.ndarray, A: np.ndarray) -> list[np.ndarray]:
    """Vectors ``w_1..w_s`` whose reflections compose to ``A`` (``A = H_1 ... H_s``).

    Column ``i`` of the running matrix is sent back to ``e_i`` with ``w = x - y``
    unless that vector is close to null (``|q(w)| < 0.1 |w|^2``, where the
    reflection would amplify rounding); then ``w = x + y`` followed by a
    reflection along ``e_i`` is used if it is better conditioned. Since
    ``q(x - y) + q(x + y) = 4 q(e_i)`` the two cannot both be null. For a
    definite metric ``x - y`` is always taken, so at most ``k`` reflections are
    produced. Once ``k - 1`` columns are fixed the last one is ``+-e_k`` by
    orthogonality and is settled by its sign alone.
    """
    k = A.shape[0]
    eta = np.diag(eta_diag)
    B = np.array(A, dtype=np.float64)
    ws: list[np.ndarray] = []

    def apply(w):
        nonlocal B
        B = _reflection_matrix(eta, w) @ B
        ws.append(w)

    for i in range(k):
        x = B[:, i].copy()
        y = np.zeros(k)
        y[i] = 1.0
        if i == k - 1:
            if x[i] < 0:
                apply(y)
            continue
        if np.abs(x - y).max() <= 1e-13 * max(1.0, np.abs(x).max()):
            continue
        minus, plus = x - y, x + y
        r_minus, r_plus = _conditioning(eta, minus), _conditioning(eta, plus)
        if r_minus < _NEAR_NULL and r_plus > r_minus:
            apply(plus)
            apply(y)
        else:
            apply(minus)
    return ws


_NEAR_NULL = 0.1


def _conditioning(eta: np.ndarray, w: np.ndarray) -> float:
    """``|q(w)| / |w|^2``: 1 for definite metrics, near 0 for near-null vectors."""
    norm2 = float(w @ w)
    return abs(float(w @ eta @ w)) / norm2 if norm2 > 0 else 0.0


def orthogonal_to_versor(phi: OrthogonalMatrix) -> Versor:
    sig = phi.sig
    nondeg = sig.p + sig.q
    factors = []
    if nondeg:
        for w in decompose_reflections(sig.metric[:nondeg], phi.nondegenerate_block):
            factors.append(reflection(sig, w))
    coupling = phi.radical_coupling
    for i in range(sig.r):
        for j in range(nondeg):
            m_ij = coupling[i, j]
            if m_ij != 0.0:
                c = -m_ij / (2.0 * sig.metric[j])
                factors.append(radical_shear(sig, j + 1, nondeg + i + 1, c))
    return Versor.from_factors(sig, factors)


def apply_orthogonal(phi: OrthogonalMatrix, x: Multivector) -> Multivector:
    if phi.sig != x.sig:
        raise ValueError(f"signature mismatch {phi.sig} vs {x.sig}")
    return twisted_adjoint(orthogonal_to_versor(phi), x)


def random_restricted_orthogonal(sig: Signature, seed, scale: float = 0.5) -> OrthogonalMatrix:
    """Random element of the restricted orthogonal group, built without versors.

    The non-degenerate block is ``expm(eta K) D`` with ``K`` antisymmetric and
    ``D`` a random diagonal sign matrix; the radical coupling block is Gaussian.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nondeg = sig.p + sig.q
    mat = np.eye(sig.n)
    if nondeg:
        K = rng.normal(scale=scale, size=(nondeg, nondeg))
        K = K - K.T
        eta = np.diag(sig.metric[:nondeg])
        flips = np.diag(rng.choice([-1.0, 1.0], size=nondeg))
        mat[:nondeg, :nondeg] = scipy.linalg.expm(eta @ K) @ flips
        mat[nondeg:, :nondeg] = rng.normal(size=(sig.r, nondeg))
    return OrthogonalMatrix(sig, mat)


def outermorphism_matrix(phi: OrthogonalMatrix) -> np.ndarray:
    """``D x D`` matrix of the outermorphism of ``phi``, computed from minors.

    The image of blade ``e_I`` has coefficient ``det(phi[J, I])`` on ``e_J``
    for every ``J`` of the same grade. No versors are involved.
    """
    sig = phi.sig
    d = sig.dim
    mat = np.zeros((d, d))
    members = [[i for i in range(sig.n) if (m >> i) & 1] for m in range(d)]
    grades = sig.grades
    for col in range(d):
        rows = np.flatnonzero(grades == grades[col])
        if grades[col] == 0:
            mat[0, 0] = 1.0
            continue
        for row in rows:
            mat[row, col] = np.linalg.det(phi.entries[np.ix_(members[row], members[col])])
    return mat


def _violation(a: Multivector, b: Multivector) -> float:
    scale = max(float(np.abs(a.coeffs).max()), float(np.abs(b.coeffs).max()), 1e-300)
    return float(np.abs(a.coeffs - b.coeffs).max() / scale)


def _random_polynomial(rng: np.random.Generator, degree: int = 3):
    """Random non-commutative polynomial in two variables, as (coefficient, word) pairs."""
    words = [()]
    for length in range(1, degree + 1):
        words += [tuple(int(b) for b in np.binary_repr(i, length)) for i in range(2**length)]
    return [(float(rng.normal()), w) for w in words]


def _evaluate(poly, x: Multivector, y: Multivector) -> Multivector:
    out = x.sig.zero()
    for c, word in poly:
        term = x.sig.scalar(c)
        for var in word:
            term = term * (y if var else x)
        out = out + term
    return out


def property_report(sig: Signature, seed, n_versors: int = 10, n_samples: int = 20) -> dict:
    """Max relative violations of the Lipschitz-group properties on sampled versors.

    Covers preservation of the four quaternion-type subspaces, equivariance of
    the projections, involutions, random conjugations, ``psi``, ``chi`` and
    random degree-3 polynomials, and membership of ``psi(T)``, ``chi(T)`` in
    the twisted centralizer of the vectors.
    """
    from .subspaces import conjugation_op, qt_project

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nondeg = sig.p + sig.q
    keys = ["qt_preservation", "projection", "involution", "conjugation", "psi_chi", "polynomial", "norm_membership"]
    worst = dict.fromkeys(keys, 0.0)
    failures = 0
    for _ in range(n_versors):
        T = sample_lipschitz(
            sig, rng,
            k_vector_factors=int(rng.integers(1, nondeg + 2)) if nondeg else 0,
            k_radical_factors=int(rng.integers(0, 3)) if sig.r and nondeg else 0,
        )
        mat = twisted_adjoint_matrix(T)
        qt = sig.grades % 4
        for m in range(4):
            cols = mat[:, qt == m]
            if cols.size:
                leak = np.abs(cols[qt != m]).max(initial=0.0) / max(np.abs(cols).max(), 1e-300)
                worst["qt_preservation"] = max(worst["qt_preservation"], float(leak))
        for X in (psi(T.product), chi(T.product)):
            resid = twisted_centralizer_residual(X)
            failures += int(not in_grassmann_subalgebra(X) or resid > DEFAULT_TOL)
            worst["norm_membership"] = max(worst["norm_membership"], resid)
        for _ in range(n_samples):
            x = Multivector(sig, rng.normal(size=sig.dim))
            y = Multivector(sig, rng.normal(size=sig.dim))
            ax = twisted_adjoint(T, x)
            ay = twisted_adjoint(T, y)
            for m in range(4):
                worst["projection"] = max(
                    worst["projection"], _violation(qt_project(ax, m), twisted_adjoint(T, qt_project(x, m)))
                )
            for f in (grade_involution, reversion, clifford_conjugation):
                worst["involution"] = max(worst["involution"], _violation(f(ax), twisted_adjoint(T, f(x))))
            lam = rng.choice([-1.0, 1.0], size=sig.n + 1)
            worst["conjugation"] = max(
                worst["conjugation"], _violation(conjugation_op(ax, lam), twisted_adjoint(T, conjugation_op(x, lam)))
            )
            for f in (psi, chi):
                worst["psi_chi"] = max(worst["psi_chi"], _violation(f(ax), twisted_adjoint(T, f(x))))
            poly = _random_polynomial(rng)
            worst["polynomial"] = max(
                worst["polynomial"], _violation(_evaluate(poly, ax, ay), twisted_adjoint(T, _evaluate(poly, x, y)))
            )
    report = {k: float(v) for k, v in worst.items()}
    report["norm_membership_failures"] = failures
    report["max_violation"] = max(report[k] for k in keys)
    return report
