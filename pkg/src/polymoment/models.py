"""Closed-form references: CIR bonds, BK steady-state moments, migration benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

EIGENBASIS_COND_LIMIT = 1e12


def cir_bond_price(theta: float, mu: float, sigma: float, x: float, tau: float) -> float:
    """Zero-coupon bond ``E[exp(-int_0^tau X ds) | X_0 = x]`` under CIR.

    Standard affine solution ``exp(a(tau) - b(tau) x)`` with
    ``gamma = sqrt(theta^2 + 2 sigma^2)``; ``sigma == 0`` uses the
    deterministic mean-reverting path.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if tau == 0:
        return 1.0
    if sigma == 0:
        b = tau if theta == 0 else -math.expm1(-theta * tau) / theta
        return math.exp(-mu * (tau - b) - b * x)
    gamma = math.sqrt(theta * theta + 2.0 * sigma * sigma)
    em1 = math.expm1(gamma * tau)
    denom = (gamma + theta) * em1 + 2.0 * gamma
    b = 2.0 * em1 / denom
    log_a = (2.0 * theta * mu / sigma**2) * (
        0.5 * (theta + gamma) * tau - math.log1p((gamma + theta) * em1 / (2.0 * gamma))
    )
    return math.exp(log_a - b * x)


def cir_bond_yield(theta: float, mu: float, sigma: float, x: float, tau: float) -> float:
    return -math.log(cir_bond_price(theta, mu, sigma, x, tau)) / tau


def bk_moment_map(theta: float, mu: float, sigma: float) -> tuple[float, float]:
    """Steady-state mean and standard deviation of ``r = exp(X)`` for the OU log-rate."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    half = sigma**2 / (2.0 * theta)
    mean = math.exp(mu + 0.5 * half)
    std = math.sqrt(math.expm1(half)) * math.exp(mu + 0.5 * half)
    return mean, std


def bk_moment_map_inverse(mean_rate: float, rate_std: float, theta: float) -> tuple[float, float]:
    """Recover ``(mu, sigma)`` from the steady-state rate mean and standard deviation."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if mean_rate <= 0 or rate_std <= 0:
        raise ValueError("mean_rate and rate_std must be positive")
    sigma2 = 2.0 * theta * math.log1p((rate_std / mean_rate) ** 2)
    return math.log(mean_rate) - sigma2 / (4.0 * theta), math.sqrt(sigma2)


@dataclass(frozen=True)
class MigrationMatrix:
    P: np.ndarray
    t: float
    y: np.ndarray


def _real_eigenbasis(Q: np.ndarray):
    w, B = np.linalg.eig(Q)
    scale = max(np.abs(Q).max(), 1e-300)
    if np.abs(w.imag).max() > 1e-12 * scale or np.abs(B.imag).max() > 1e-12:
        raise NumericalError("generator matrix has complex eigenvalues")
    w, B = w.real, B.real
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > EIGENBASIS_COND_LIMIT:
        raise NumericalError(f"generator matrix is (nearly) defective: cond(B) = {cond:.3g}")
    if np.any(w > 1e-12 * scale):
        raise ValueError("generator matrix has a positive eigenvalue")
    return w, B


def credit_analytic_1d(Q1, theta: float, mu: float, sigma: float, y: float, t: float) -> MigrationMatrix:
    """``E_y[exp(int_0^t Y_s ds Q1)]`` for a CIR factor ``Y`` via diagonalisation of ``Q1``.

    Each eigenvalue ``d < 0`` contributes ``E[exp(d int Y)]``, the bond price of
    the scaled process ``c Y`` (``c = -d``), which is CIR with mean ``c mu``
    and volatility ``sigma sqrt(c)``.
    """
    Q1 = np.asarray(Q1, dtype=float)
    m = Q1.shape[0]
    if t == 0 or not np.any(Q1):
        return MigrationMatrix(np.eye(m), float(t), np.atleast_1d(float(y)))
    w, B = _real_eigenbasis(Q1)
    scale = np.abs(Q1).max()
    phi = np.empty(m)
    for i, d in enumerate(w):
        if abs(d) <= 1e-14 * scale:
            phi[i] = 1.0
        else:
            c = -d
            phi[i] = cir_bond_price(theta, c * mu, sigma * math.sqrt(c), c * y, t)
    P = B @ np.diag(phi) @ np.linalg.inv(B)
    return MigrationMatrix(P, float(t), np.atleast_1d(float(y)))


def credit_analytic_2d_commuting(Q1, Q2, cir1, cir2, y, t: float,
                                 commute_tol: float = 1e-10) -> MigrationMatrix:
    """Product of two univariate factors for commuting ``Q1, Q2`` and independent
    CIR drivers. ``cir1``/``cir2`` are ``(theta, mu, sigma)`` triples."""
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    gap = np.linalg.norm(Q1 @ Q2 - Q2 @ Q1, "fro")
    if gap > commute_tol:
        raise ValueError(f"Q1 and Q2 do not commute: ||[Q1, Q2]||_F = {gap:.3g}")
    y = np.asarray(y, dtype=float)
    P1 = credit_analytic_1d(Q1, *cir1, y[0], t).P
    P2 = credit_analytic_1d(Q2, *cir2, y[1], t).P
    return MigrationMatrix(P1 @ P2, float(t), y)


def noncommutativity(Q1, Q2) -> float:
    """``||Q1 Q2 - Q2 Q1||_F / (sqrt(2) ||Q1||_F ||Q2||_F)``, a value in [0, 1]."""
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    n1, n2 = np.linalg.norm(Q1, "fro"), np.linalg.norm(Q2, "fro")
    if n1 == 0 or n2 == 0:
        raise ValueError("noncommutativity is undefined for a zero matrix")
    return float(np.linalg.norm(Q1 @ Q2 - Q2 @ Q1, "fro") / (math.sqrt(2.0) * n1 * n2))
