import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glgenn.algebra import (
    Multivector,
    Signature,
    SignatureMismatch,
    add,
    blade_product,
    blade_signs,
    format_multivector,
    geometric_product,
    left_multiplication_matrix,
    parse_multivector,
    right_multiplication_matrix,
    scalar_part,
    scale,
)

import oracles
from conftest import all_signatures


def _indices(mask, n):
    return tuple(i + 1 for i in range(n) if mask >> i & 1)


def signatures(max_n=6):
    return st.sampled_from(all_signatures(max_n))


@pytest.mark.parametrize("sig", all_signatures(6), ids=str)
def test_sign_table_matches_word_reduction(sig):
    s = Signature(*sig)
    eta = oracles.metric(*sig)
    table = s.sign_table
    for a, b in itertools.product(range(s.dim), repeat=2):
        sign, word = oracles.reduce_word(_indices(a, s.n) + _indices(b, s.n), eta)
        assert table[a, b] == sign
        if sign != 0:
            assert word == _indices(a ^ b, s.n)


@pytest.mark.parametrize("sig", [(8, 0, 0), (3, 5, 0), (4, 2, 2), (0, 0, 8), (1, 3, 4)], ids=str)
def test_blade_product_spot_checks_n8(sig):
    s = Signature(*sig)
    eta = oracles.metric(*sig)
    rng = np.random.default_rng(8)
    pairs = rng.integers(0, s.dim, size=(3000, 2))
    vec = blade_signs(s, pairs[:, 0], pairs[:, 1])
    for (a, b), v in zip(pairs, vec):
        sign, _ = oracles.reduce_word(_indices(a, 8) + _indices(b, 8), eta)
        got, mask = blade_product(s, int(a), int(b))
        assert got == sign == v
        assert mask == a ^ b


def test_blade_product_examples():
    assert blade_product(Signature(1, 3), 0b1, 0b1) == (1, 0)
    s3 = Signature(3)
    assert blade_product(s3, 0b011, 0b101) == (-1, 0b110)
    for m in range(s3.dim):
        assert blade_product(s3, 0, m) == (1, m)
    with pytest.raises(ValueError):
        blade_product(s3, 8, 0)


@pytest.mark.parametrize("sig", [s for s in all_signatures(4)], ids=str)
def test_geometric_product_matches_oracle(sig):
    s = Signature(*sig)
    rng = np.random.default_rng(hash(sig) % 2**32)
    eta = oracles.metric(*sig)
    for _ in range(3):
        x, y = rng.normal(size=s.dim), rng.normal(size=s.dim)
        want = oracles.to_dense(oracles.product(oracles.from_dense(x, s.n), oracles.from_dense(y, s.n), eta), s.n)
        got = geometric_product(Multivector(s, x), Multivector(s, y)).coeffs
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_geometric_product_examples():
    s = Signature(1, 3)
    T = s.e(1) + s.e(1, 2, 3)
    x = s.e(1) - s.e(1, 2, 3)
    assert (T * x * 0.5).allclose(s.e())
    s2 = Signature(2)
    got = (s2.e(1) + s2.e(2)) * (s2.e(1) - s2.e(2))
    eta = oracles.metric(2, 0, 0)
    want = oracles.product({(1,): 1.0, (2,): 1.0}, {(1,): 1.0, (2,): -1.0}, eta)
    assert want == {(1, 2): -2.0}
    np.testing.assert_array_equal(got.coeffs, oracles.to_dense(want, 2))


@given(signatures(6), st.integers(0, 2**32 - 1))
def test_associativity(sig, seed):
    s = Signature(*sig)
    rng = np.random.default_rng(seed)
    x, y, z = (Multivector(s, rng.normal(size=s.dim)) for _ in range(3))
    lhs, rhs = (x * y) * z, x * (y * z)
    assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) <= 1e-12 * max(1.0, lhs.norm())


@given(signatures(6), st.integers(0, 2**32 - 1))
def test_distributivity_and_identity(sig, seed):
    s = Signature(*sig)
    rng = np.random.default_rng(seed)
    x, y, z = (Multivector(s, rng.normal(size=s.dim)) for _ in range(3))
    assert (x * (y + z)).allclose(x * y + x * z, atol=1e-12)
    np.testing.assert_array_equal((x * s.e()).coeffs, x.coeffs)
    np.testing.assert_array_equal((s.e() * x).coeffs, x.coeffs)


@pytest.mark.parametrize("sig", all_signatures(6), ids=str)
def test_anticommutation_exact(sig):
    s = Signature(*sig)
    for a in range(1, s.n + 1):
        for b in range(1, s.n + 1):
            got = s.e(a) * s.e(b) + s.e(b) * s.e(a)
            want = 2.0 * s.metric[a - 1] * (a == b)
            assert got.coeffs[0] == want
            assert not np.any(got.coeffs[1:])


@pytest.mark.parametrize("sig", [s for s in all_signatures(6) if s[2] > 0], ids=str)
def test_radical_nilpotent(sig):
    s = Signature(*sig)
    for b in range(s.p + s.q + 1, s.n + 1):
        assert not np.any((s.e(b) * s.e(b)).coeffs)


def test_multiplication_matrices():
    s = Signature(2, 1, 1)
    rng = np.random.default_rng(0)
    x, y = Multivector(s, rng.normal(size=16)), Multivector(s, rng.normal(size=16))
    np.testing.assert_allclose(left_multiplication_matrix(x) @ y.coeffs, (x * y).coeffs, atol=1e-12)
    np.testing.assert_allclose(right_multiplication_matrix(y) @ x.coeffs, (x * y).coeffs, atol=1e-12)


def test_plumbing_examples():
    s = Signature(3)
    x = Multivector(s, np.arange(8.0))
    assert not np.any(scale(x, 0).coeffs)
    assert not np.any(add(x, scale(x, -1)).coeffs)
    assert scalar_part(s.e() + 2 * s.e(1)) == 1.0


def test_signature_validation():
    with pytest.raises(ValueError):
        Signature(-1, 2)
    with pytest.raises(ValueError):
        Signature(0, 0, 0)
    with pytest.raises(ValueError):
        Signature(13)
    assert Signature(12).dim == 4096
    assert list(Signature(1, 1, 1).metric) == [1.0, -1.0, 0.0]


def test_mixed_signature_is_error():
    with pytest.raises(SignatureMismatch):
        Signature(2).e(1) + Signature(1, 1).e(1)
    with pytest.raises(SignatureMismatch):
        geometric_product(Signature(2).e(1), Signature(1, 1).e(1))


def test_multivector_validation_and_immutability():
    s = Signature(2)
    with pytest.raises(ValueError):
        Multivector(s, np.zeros(3))
    x = Multivector(s, np.ones(4))
    with pytest.raises((AttributeError, ValueError)):
        x.coeffs[0] = 5.0
    with pytest.raises(AttributeError):
        x.sig = Signature(3)


def test_text_format_examples():
    s = Signature(4)
    x = parse_multivector(s, "1*e + 2*e_1 + 4*e_234")
    assert x.coeffs[0] == 1 and x.coeffs[0b0001] == 2 and x.coeffs[0b1110] == 4
    assert format_multivector(x) == "1.0*e + 2.0*e_1 + 4.0*e_234"
    assert format_multivector(s.zero()) == "0"
    assert parse_multivector(s, "e_12 - 3*e_4").allclose(s.e(1, 2) - 3 * s.e(4))
    with pytest.raises(ValueError):
        parse_multivector(s, "2*f_1")


@given(signatures(5), st.integers(0, 2**32 - 1))
def test_text_round_trip(sig, seed):
    s = Signature(*sig)
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=s.dim) * (rng.random(s.dim) < 0.6)
    x = Multivector(s, coeffs)
    np.testing.assert_array_equal(parse_multivector(s, format_multivector(x)).coeffs, x.coeffs)


def test_text_round_trip_wide_signature():
    s = Signature(6, 4)
    x = s.e(1, 10) * 2.5 - s.e(3)
    text = format_multivector(x)
    assert "e_1,10" in text
    np.testing.assert_array_equal(parse_multivector(s, text).coeffs, x.coeffs)
