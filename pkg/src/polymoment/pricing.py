"""Discounted moments from a matrix generator: bond prices and migration matrices."""

from __future__ import annotations

import numpy as np

from .basis import CoefficientVector, evaluate
from .expmv import DEFAULT_TOL, expmv_grid, sensitivity
from .generator import MatrixGenerator


def discounted_moments(gen: MatrixGenerator, fbar, state, tenors, tol: float = DEFAULT_TOL,
                       rating: int | None = None) -> np.ndarray:
    """``<exp(t A_k) fbar, b(state)>`` for each tenor (tenors sorted ascending)."""
    fbar = np.asarray(fbar, dtype=float)
    res = expmv_grid(gen.A, fbar, tenors, tol)
    return np.array([evaluate(CoefficientVector(g, gen.layout), state, rating) for g in res.values])


def bond_prices(gen: MatrixGenerator, state: float, tenors, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Zero-coupon bond prices: the discounted moment of the constant function."""
    e0 = np.zeros(gen.k)
    e0[0] = 1.0
    return discounted_moments(gen, e0, state, tenors, tol)


def bond_yields(gen: MatrixGenerator, state: float, tenors, tol: float = DEFAULT_TOL) -> np.ndarray:
    tenors = np.asarray(tenors, dtype=float)
    return -np.log(bond_prices(gen, state, tenors, tol)) / tenors


def bond_price_sensitivity(gen: MatrixGenerator, dA: np.ndarray, state: float, tenor: float,
                           quad_steps: int = 256, tol: float = DEFAULT_TOL) -> float:
    """Derivative of the approximate bond price along ``dA = dA_k/dp``."""
    e0 = np.zeros(gen.k)
    e0[0] = 1.0
    dg = sensitivity(gen.A, dA, e0, tenor, quad_steps, tol)
    return evaluate(CoefficientVector(dg, gen.layout), state)


def migration_matrices(gen: MatrixGenerator, y, tenors, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Approximate ``P(t, y) = (b(y)^T kron I_m) exp(t A_k) [I_m; 0]`` per tenor.

    Returns an array of shape ``(len(tenors), m, m)``.
    """
    layout = gen.layout
    m = layout.m
    F = np.zeros((gen.k, m))
    F[:m, :m] = np.eye(m)
    res = expmv_grid(gen.A, F, tenors, tol)
    weights = layout.monomial_values(y)
    # G[(a, i), j] -> P[i, j] = sum_a b_a(y) G[(a, i), j]
    return np.einsum("a,taij->tij", weights, res.values.reshape(len(res), -1, m, m))
