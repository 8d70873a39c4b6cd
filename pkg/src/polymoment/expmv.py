"""Action of the matrix exponential and related diagnostics.

``expmv_grid`` is a truncated-Taylor scheme with scaling: ``exp(tA) F`` is
built from ``s`` steps of a degree-``m`` Taylor polynomial of ``(t/s)A``
applied to ``F``. ``(m, s)`` come from a backward-error table ``theta_m(tol)``
and the 1-norms of low powers of ``A`` (Al-Mohy & Higham, 2011).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .errors import NumericalError

M_MAX = 55
P_MAX = 8  # largest p with p(p-1) <= M_MAX + 1
TOL_RANGE = (1e-15, 1e-6)
DEFAULT_TOL = 1e-15


@lru_cache(maxsize=16)
def theta_table(tol: float, m_max: int = M_MAX, n_terms: int = 100) -> dict[int, float]:
    """Largest ``theta_m`` such that the degree-``m`` Taylor backward error
    bound ``h~_{m+1}(theta)/theta`` stays below ``tol``.

    ``h_{m+1}(x) = log(exp(-x) T_m(x))``; its series coefficients follow
    from ``g = exp(-x) T_m(x)`` with ``g_k = (-1)^(k+m) C(k-1, m) / k!`` for
    ``k > m`` and the usual log-series recursion.
    """
    table = {}
    for m in range(1, m_max + 1):
        N = m + n_terms
        k = np.arange(m + 1, N + 1)
        g = np.zeros(N + 1)
        g[0] = 1.0
        g[m + 1:] = (-1.0) ** (k + m) * np.exp(
            gammaln(k) - gammaln(m + 1) - gammaln(k - m) - gammaln(k + 1)
        )
        h = np.zeros(N + 1)
        for q in range(m + 1, N + 1):
            j = np.arange(m + 1, q - m)
            h[q] = g[q] - np.dot(j * h[j], g[q - j]) / q
        c = np.abs(h[m + 1:])
        powers = np.arange(m, N)

        def bound(theta):
            return np.dot(c, np.exp(powers * math.log(theta)))

        lo, hi = 0.0, 64.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if bound(mid) <= tol:
                lo = mid
            else:
                hi = mid
        table[m] = lo
    return table


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.array(self.times, dtype=float))
        if t.ndim != 1 or t.size == 0:
            raise ValueError("time grid must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(t)) or t[0] < 0:
            raise ValueError("time grid must be finite and start at t >= 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class ExpmvResult:
    """``values[i]`` is ``exp(times[i] A) F`` (shape ``(k,)`` or ``(k, p)``)."""

    times: np.ndarray
    values: np.ndarray
    tol: float
    matvecs: int
    steps: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def __getitem__(self, i):
        return self.values[i]


def _inf_norm(X: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(X), axis=-1))) if X.ndim == 2 else float(np.max(np.abs(X)))


class _ExpmvOperator:
    """Precomputed data for repeated ``exp(dt A) F`` evaluations with one ``A``."""

    def __init__(self, A: np.ndarray, tol: float, ell: int = 2):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be a square matrix")
        if not np.all(np.isfinite(A)):
            raise ValueError("A has non-finite entries")
        if not TOL_RANGE[0] <= tol <= TOL_RANGE[1]:
            raise ValueError(f"tol must lie in [{TOL_RANGE[0]:g}, {TOL_RANGE[1]:g}], got {tol!r}")
        k = A.shape[0]
        self.k = k
        self.tol = tol
        self.ell = ell
        self.shift = float(np.trace(A)) / k if k else 0.0
        self.B = A - self.shift * np.eye(k)
        self.theta = theta_table(tol)
        self._power_norms = None
        self._plans: dict[tuple[float, int], tuple[int, int]] = {}
        self.matvecs = 0

    def _norms(self) -> np.ndarray:
        # exact 1-norms of B^p, p = 1..P_MAX+1; dense sizes stay small
        if self._power_norms is None:
            norms = np.empty(P_MAX + 2)
            norms[0] = 1.0
            P = self.B.copy()
            norms[1] = np.linalg.norm(P, 1)
            for p in range(2, P_MAX + 2):
                P = P @ self.B
                norms[p] = np.linalg.norm(P, 1)
            self._power_norms = norms
        return self._power_norms

    def plan(self, dt: float, n_cols: int) -> tuple[int, int]:
        key = (dt, n_cols)
        if key in self._plans:
            return self._plans[key]
        norms = self._norms()
        one_norm = abs(dt) * norms[1]
        if one_norm == 0.0:
            result = (0, 1)
        elif one_norm <= 2 * self.ell * P_MAX * (P_MAX + 3) * self.theta[M_MAX] / (n_cols * M_MAX):
            best = None
            for m, th in self.theta.items():
                s = max(int(math.ceil(one_norm / th)), 1)
                if best is None or m * s < best[0] * best[1]:
                    best = (m, s)
            result = best
        else:
            d = np.array([abs(dt) * norms[p] ** (1.0 / p) for p in range(1, P_MAX + 2)])
            best = None
            for p in range(2, P_MAX + 1):
                alpha = max(d[p - 1], d[p])
                for m in range(p * (p - 1) - 1, M_MAX + 1):
                    s = max(int(math.ceil(alpha / self.theta[m])), 1)
                    if best is None or m * s < best[0] * best[1]:
                        best = (m, s)
            result = best
        self._plans[key] = result
        return result

    def apply(self, F: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0.0:
            return F.copy()
        n_cols = 1 if F.ndim == 1 else F.shape[1]
        m, s = self.plan(dt, n_cols)
        try:
            eta = math.exp(dt * self.shift / s)
        except OverflowError:
            raise NumericalError("overflow in exponential action") from None
        out = F.copy()
        V = F
        for _ in range(s):
            c1 = _inf_norm(V)
            for j in range(m):
                V = (dt / (s * (j + 1))) * (self.B @ V)
                self.matvecs += n_cols
                c2 = _inf_norm(V)
                out = out + V
                if c1 + c2 <= self.tol * _inf_norm(out):
                    break
                c1 = c2
            out = eta * out
            if not np.all(np.isfinite(out)):
                raise NumericalError("overflow in exponential action")
            V = out
        return out


def expmv_grid(A, F, grid, tol: float = DEFAULT_TOL) -> ExpmvResult:
    """Compute ``exp(t_i A) F`` for every time of ``grid``.

    The grid is traversed in order and each value is obtained by stepping
    from the previous one, so only the increments ``t_{i+1} - t_i`` are
    exponentiated.
    """
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid(grid)
    op = _ExpmvOperator(A, tol)
    F = np.asarray(F, dtype=float)
    if F.shape[0] != op.k or F.ndim > 2:
        raise ValueError(f"F must have {op.k} rows")
    if not np.all(np.isfinite(F)):
        raise ValueError("F has non-finite entries")
    out = np.empty((len(grid),) + F.shape)
    current, t_prev = F, 0.0
    for i, t in enumerate(grid.times):
        current = op.apply(current, float(t - t_prev))
        out[i] = current
        t_prev = t
    return ExpmvResult(grid.times, out, tol, op.matvecs, dict(op._plans))


def sensitivity(A, dA, f, t: float, quad_steps: int = 64, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Derivative of ``exp(tA) f`` along the direction ``dA``.

    Approximates ``int_0^t exp((t-s)A) dA exp(sA) f ds`` with the composite
    trapezoid rule on ``quad_steps + 1`` equispaced nodes.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if quad_steps < 8:
        raise ValueError("quad_steps must be >= 8")
    dA = np.asarray(dA, dtype=float)
    f = np.asarray(f, dtype=float)
    if t == 0 or not np.any(dA):
        return np.zeros_like(f)
    op = _ExpmvOperator(A, tol)
    h = t / quad_steps
    nodes = np.empty((quad_steps + 1,) + f.shape)
    nodes[0] = f
    for j in range(1, quad_steps + 1):
        nodes[j] = op.apply(nodes[j - 1], h)
    # Horner-style accumulation of sum_j w_j exp((N-j)hA) dA v_j
    acc = 0.5 * (dA @ nodes[0])
    for j in range(1, quad_steps + 1):
        w = 0.5 if j == quad_steps else 1.0
        acc = op.apply(acc, h) + w * (dA @ nodes[j])
    return h * acc


def resolvent_norm(A, lam: float) -> float:
    """Spectral norm of ``(lam I - A)^{-1}`` via the smallest singular value."""
    A = np.asarray(A, dtype=float)
    sv = scipy.linalg.svdvals(lam * np.eye(A.shape[0]) - A)
    smin = sv[-1]
    if smin < 1e-300:
        return math.inf
    return float(1.0 / smin)


def phragmen_series(A, f, t: float, lam: float, n_terms: int = 400) -> np.ndarray:
    """Partial sum of the Phragmen-Doetsch resolvent series for ``exp(tA) f``.

    ``lam * sum_n (-1)^(n-1) e^(n lam t) / (n-1)! * (n lam I - A)^{-1} f``,
    truncated once a term drops below ``1e-16`` times the running sum. The
    alternating terms peak near ``n = exp(lam t)``, so double precision limits
    this to small ``lam t``; a :class:`RuntimeWarning` flags heavy cancellation
    and a :class:`NumericalError` is raised when ``e^(n lam t)`` would overflow.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    A = np.asarray(A, dtype=float)
    f = np.asarray(f, dtype=float)
    k = A.shape[0]
    I = np.eye(k)
    total = np.zeros_like(f)
    biggest = 0.0
    for n in range(1, n_terms + 1):
        if n * lam * t > 700:
            raise NumericalError(
                f"phragmen_series: e^(n*lam*t) overflows at n={n} (lam*t={lam * t:g}) before convergence"
            )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu = scipy.linalg.lu_factor(n * lam * I - A, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"singular resolvent at {n * lam:g}") from exc
        if np.any(np.abs(np.diag(lu[0])) < 1e-300):
            raise NumericalError(f"singular resolvent at {n * lam:g}")
        r = scipy.linalg.lu_solve(lu, f, check_finite=False)
        log_coef = math.log(lam) + n * lam * t - math.lgamma(n)
        term = ((-1) ** (n - 1) * math.exp(log_coef)) * r
        total = total + term
        tnorm = np.linalg.norm(term)
        biggest = max(biggest, tnorm)
        if tnorm < 1e-16 * np.linalg.norm(total):
            break
    else:
        warnings.warn("phragmen_series: term budget exhausted before convergence", RuntimeWarning)
    if biggest * np.finfo(float).eps > 1e-8 * max(np.linalg.norm(total), 1e-300):
        warnings.warn(
            f"phragmen_series: cancellation ~{biggest * np.finfo(float).eps:.1e} absolute "
            f"at lam*t={lam * t:g}; result is unreliable",
            RuntimeWarning,
        )
    return total
