from __future__ import annotations

import itertools
from math import comb

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from polymoment.basis import (
    BasisKind,
    CoefficientVector,
    basis_dimension,
    enumerate_basis,
    evaluate,
    reduce_degree,
    taylor_overflow,
    taylor_overflow_dx0,
)


def brute_force_count(n, ell, m):
    return sum(1 for a in itertools.product(range(ell), repeat=n) if sum(a) < ell) * m


class TestEnumerateBasis:
    def test_univariate(self):
        layout = enumerate_basis(1, 4)
        assert layout.dimension == 4
        assert layout.kind is BasisKind.UNIVARIATE_MONOMIAL
        assert layout.monomials == ((0,), (1,), (2,), (3,))

    def test_bivariate_with_ratings(self):
        layout = enumerate_basis(2, 2, 3)
        assert layout.dimension == 2 * 3 * 3 // 2 == 9
        assert layout.kind is BasisKind.MONOMIAL_KRON_RATING

    def test_trivariate_count(self):
        assert enumerate_basis(3, 3).dimension == 1 + 3 + 6

    @pytest.mark.parametrize("bad", [(0, 2, 1), (1, 0, 1), (1, 2, 0), (1.5, 2, 1)])
    def test_rejects_non_positive(self, bad):
        with pytest.raises(ValueError):
            enumerate_basis(*bad)

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 4))
    def test_dimension_matches_brute_force(self, n, ell, m):
        layout = enumerate_basis(n, ell, m)
        assert layout.dimension == brute_force_count(n, ell, m) == basis_dimension(n, ell, m)

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 3))
    def test_ordering_is_graded_with_ratings_fastest(self, n, ell, m):
        layout = enumerate_basis(n, ell, m)
        degrees = [sum(a) for a, _ in layout.ordering]
        assert degrees == sorted(degrees)
        ratings = [r for _, r in layout.ordering]
        assert ratings == list(range(m)) * (layout.dimension // m)
        assert len(set(layout.ordering)) == layout.dimension
        for a, r in layout.ordering:
            assert layout.index(a, r) == layout.ordering.index((a, r))

    def test_within_degree_order(self):
        assert enumerate_basis(2, 3).monomials == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


class TestTaylorOverflow:
    def test_k2(self):
        x0 = 0.37
        np.testing.assert_allclose(taylor_overflow(2, x0).coeffs, [-x0**2, 2 * x0], rtol=0, atol=1e-16)

    def test_k3_at_mu(self):
        mu = 0.03
        tc = taylor_overflow(3, mu)
        np.testing.assert_allclose(tc.coeffs, [mu**3, -3 * mu**2, 3 * mu], rtol=1e-15)
        assert tc(mu) == pytest.approx(mu**3, rel=1e-14)

    def test_k5_random_points(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-2, 2, 20)
        tc = taylor_overflow(5, 0.7)
        expected = x**5 - (x - 0.7) ** 5
        np.testing.assert_allclose(tc(x), expected, rtol=1e-12, atol=1e-12)

    def test_zero_expansion_point(self):
        assert not np.any(taylor_overflow(6, 0.0).coeffs)

    def test_rejects_k0(self):
        with pytest.raises(ValueError):
            taylor_overflow(0, 1.0)

    @given(st.integers(1, 25), st.fractions(-3, 3, max_denominator=16))
    def test_matches_binomial_expansion_exactly(self, k, x0):
        x = sp.Symbol("x")
        poly = sp.Poly(sp.expand(x**k - (x - sp.Rational(x0)) ** k), x)
        exact = [float(poly.coeff_monomial(x**i)) for i in range(k)]
        np.testing.assert_allclose(taylor_overflow(k, float(x0)).coeffs, exact, rtol=1e-14, atol=1e-300)

    @pytest.mark.parametrize("k", [1, 2, 5, 9])
    def test_derivative_in_x0(self, k):
        x0, h = 0.4, 1e-6
        fd = (taylor_overflow(k, x0 + h).coeffs - taylor_overflow(k, x0 - h).coeffs) / (2 * h)
        np.testing.assert_allclose(taylor_overflow_dx0(k, x0), fd, rtol=1e-7, atol=1e-9)


class TestReduceDegree:
    def test_single_overflow_term(self):
        mu = 0.2
        np.testing.assert_allclose(reduce_degree([0, 0, 0, 1], 3, mu).coeffs, [mu**3, -3 * mu**2, 3 * mu])

    def test_no_reduction_needed(self):
        np.testing.assert_array_equal(reduce_degree([2, 1], 3, 0.9).coeffs, [2, 1, 0])

    def test_x4_plus_x3_symbolic(self):
        # degree-2 Taylor polynomial of x^4 + x^3 around 1/2
        x = sp.Symbol("x")
        f = x**4 + x**3
        x0 = sp.Rational(1, 2)
        taylor = sum(f.diff(x, j).subs(x, x0) / sp.factorial(j) * (x - x0) ** j for j in range(3))
        poly = sp.Poly(sp.expand(taylor), x)
        expected = [float(poly.coeff_monomial(x**i)) for i in range(3)]
        got = reduce_degree([0, 0, 0, 1, 1], 3, 0.5).coeffs
        np.testing.assert_allclose(got, expected, rtol=1e-14)
        np.testing.assert_allclose(got, [0.3125, -1.75, 3.0], rtol=1e-14)

    @settings(max_examples=60)
    @given(
        st.lists(st.integers(-5, 5), min_size=1, max_size=14),
        st.integers(1, 8),
        st.fractions(-2, 2, max_denominator=8),
    )
    def test_equals_taylor_truncation(self, poly, k, x0):
        x = sp.Symbol("x")
        f = sum(c * x**i for i, c in enumerate(poly))
        x0 = sp.Rational(x0)
        taylor = sum(sp.diff(f, x, j).subs(x, x0) / sp.factorial(j) * (x - x0) ** j for j in range(k))
        tp = sp.Poly(sp.expand(taylor), x) if taylor != 0 else None
        expected = [float(tp.coeff_monomial(x**i)) if tp is not None else 0.0 for i in range(k)]
        got = reduce_degree([float(c) for c in poly], k, float(x0)).coeffs
        scale = max(1.0, max(abs(e) for e in expected))
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12 * scale)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=20), st.integers(1, 10), st.floats(-1.5, 1.5))
    def test_preserves_value_at_expansion_point(self, poly, k, x0):
        got = reduce_degree(poly, k, x0)
        original = np.polynomial.polynomial.polyval(x0, poly)
        # evaluating monomial coefficients at x0 is conditioned by sum |c_i| |x0|^i on both sides
        scale = (np.polynomial.polynomial.polyval(abs(x0), np.abs(poly))
                 + np.polynomial.polynomial.polyval(abs(x0), np.abs(got.coeffs)) + 1.0)
        assert abs(evaluate(got, x0) - original) <= 1e-13 * scale


class TestEvaluate:
    def test_constant(self):
        layout = enumerate_basis(1, 5)
        e0 = np.zeros(5)
        e0[0] = 1.0
        assert evaluate(CoefficientVector(e0, layout), 3.7) == 1.0

    def test_square(self):
        fbar = CoefficientVector([0, 0, 1, 0], enumerate_basis(1, 4))
        assert fbar(2.0) == 4.0

    def test_with_ratings_matches_naive_sum(self):
        layout = enumerate_basis(2, 2, 3)
        rng = np.random.default_rng(1)
        c = rng.standard_normal(9)
        y = np.array([0.3, 0.7])
        naive = sum(
            c[i] * np.prod(y ** np.array(a)) for i, (a, r) in enumerate(layout.ordering) if r == 2
        )
        assert evaluate(CoefficientVector(c, layout), y, rating=2) == pytest.approx(naive, rel=1e-14, abs=1e-15)

    def test_rating_required(self):
        layout = enumerate_basis(1, 2, 3)
        with pytest.raises(ValueError):
            evaluate(CoefficientVector(np.ones(6), layout), 0.5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(CoefficientVector(np.ones(3), enumerate_basis(2, 2)), [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            CoefficientVector(np.ones(4), enumerate_basis(1, 3))

    @given(st.integers(1, 40), st.floats(-10, 10), st.integers(0, 2**32 - 1))
    def test_horner_matches_power_sum(self, k, x, seed):
        c = np.random.default_rng(seed).uniform(-1, 1, k)
        naive = sum(c[i] * x**i for i in range(k))
        scale = sum(abs(c[i]) * abs(x) ** i for i in range(k))
        got = evaluate(CoefficientVector(c, enumerate_basis(1, k)), x)
        assert abs(got - naive) <= 1e-13 * max(scale, 1e-300)

    def test_multivariate_values(self):
        layout = enumerate_basis(3, 4)
        y = np.array([0.5, -1.2, 2.0])
        vals = layout.monomial_values(y)
        for a, v in zip(layout.monomials, vals):
            assert v == pytest.approx(np.prod(y ** np.array(a)), rel=1e-15)


def test_brute_force_helper_agrees_with_closed_form():
    for n in range(1, 5):
        for ell in range(1, 6):
            assert brute_force_count(n, ell, 1) == sum(comb(n + i - 1, n - 1) for i in range(ell))
