"""Truncated matrix generators ``A_k`` for the supported model families.

Column ``i`` of ``A_k`` holds the (projected) basis coefficients of the
generator applied to basis element ``i``, so ``A_k`` acts on coefficient
vectors from the left: ``g(t) = expm(t A_k) @ f``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .basis import BasisLayout, enumerate_basis, reduce_degree, taylor_overflow, taylor_overflow_dx0

GENERATOR_ROW_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# model specifications
# ---------------------------------------------------------------------------


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class CIRModel:
    """Square-root short rate ``dX = theta(mu - X)dt + sigma sqrt(X) dW``, ``r(x) = x``."""

    theta: float
    mu: float
    sigma: float
    discounted: bool = True

    def __post_init__(self):
        for name in ("theta", "mu", "sigma"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.theta < 0 or self.sigma < 0 or self.mu < 0:
            raise ValueError("CIR parameters theta, mu, sigma must be non-negative")

    tag = "cir"
    parameters = ("theta", "mu", "sigma")


@dataclass(frozen=True)
class BKModel:
    """Black-Karasinski: Ornstein-Uhlenbeck log-rate ``X`` with ``r(x) = exp(x)``."""

    theta: float
    mu: float
    sigma: float
    discounted: bool = True

    def __post_init__(self):
        for name in ("theta", "mu", "sigma"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.theta < 0 or self.sigma < 0:
            raise ValueError("BK parameters theta and sigma must be non-negative")

    tag = "bk"
    parameters = ("theta", "mu", "sigma")

    @classmethod
    def from_rate_moments(cls, mean_rate: float, rate_std: float, theta: float,
                          discounted: bool = True) -> "BKModel":
        """Parameterise by the steady-state mean and standard deviation of the short rate."""
        from .models import bk_moment_map_inverse

        mu, sigma = bk_moment_map_inverse(mean_rate, rate_std, theta)
        return cls(theta, mu, sigma, discounted)


def validate_generator_matrix(Q, name: str = "Q") -> np.ndarray:
    """Check zero row sums and non-negative off-diagonals; return a float copy."""
    Q = np.array(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"{name} must be square, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise ValueError(f"{name} has non-finite entries")
    problems = []
    for i, row in enumerate(Q):
        s = row.sum()
        if abs(s) > GENERATOR_ROW_SUM_TOL:
            problems.append(f"{name} row {i}: row sum {s:.3g} is not zero")
        off = np.delete(row, i)
        if np.any(off < 0):
            problems.append(f"{name} row {i}: negative off-diagonal entry")
    if problems:
        raise ValueError("; ".join(problems))
    return Q


@dataclass(frozen=True)
class CreditModel:
    """Rating chain with generator ``Q(y) = sum_i y_i Q_i`` driven by a
    multivariate CIR factor ``dY = K(mu - Y)dt + diag(sigma_i sqrt(Y_i)) dW``."""

    K: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    Q: tuple = field(default=())

    def __post_init__(self):
        mu = np.atleast_1d(np.array(self.mu, dtype=float))
        n = mu.size
        K = np.array(self.K, dtype=float).reshape(n, n) if np.size(self.K) == n * n else None
        if K is None:
            raise ValueError(f"K must be {n}x{n}")
        sigma = np.atleast_1d(np.array(self.sigma, dtype=float))
        if sigma.shape != (n,):
            raise ValueError(f"sigma must have length {n}")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("credit parameters must be finite")
        if np.any(np.diag(K) <= 0):
            raise ValueError("K must have a positive diagonal")
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative")
        if len(self.Q) != n:
            raise ValueError(f"expected {n} generator matrices Q_i, got {len(self.Q)}")
        Qs = tuple(validate_generator_matrix(q, f"Q[{i}]") for i, q in enumerate(self.Q))
        if len({q.shape for q in Qs}) != 1:
            raise ValueError("all Q_i must share the same shape")
        for arr in (K, mu, sigma, *Qs):
            arr.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "Q", Qs)

    tag = "credit"

    @property
    def n(self) -> int:
        return self.mu.size

    @property
    def m(self) -> int:
        return self.Q[0].shape[0]

    @property
    def parameters(self) -> tuple[str, ...]:
        n = self.n
        return (
            tuple(f"K[{i},{j}]" for i in range(n) for j in range(n))
            + tuple(f"mu[{i}]" for i in range(n))
            + tuple(f"sigma[{i}]" for i in range(n))
        )


ModelSpec = Union[CIRModel, BKModel, CreditModel]


class ProjectionKind(enum.Enum):
    FINITE_SECTION = "finite_section"
    TAYLOR = "taylor"


@dataclass(frozen=True)
class ProjectionSpec:
    """How overflow terms are mapped back into the truncated basis.

    For Taylor projection ``x0=None`` means "expand around the model mean",
    in which case the expansion point moves with ``mu`` (this matters for
    parameter derivatives).
    """

    kind: ProjectionKind = ProjectionKind.TAYLOR
    x0: float | Sequence[float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProjectionKind(self.kind))
        if self.x0 is not None:
            x0 = np.atleast_1d(np.array(self.x0, dtype=float))
            if not np.all(np.isfinite(x0)):
                raise ValueError("Taylor expansion point must be finite")
            object.__setattr__(self, "x0", float(x0[0]) if x0.size == 1 else tuple(x0.tolist()))

    @classmethod
    def taylor(cls, x0=None) -> "ProjectionSpec":
        return cls(ProjectionKind.TAYLOR, x0)

    @classmethod
    def finite_section(cls) -> "ProjectionSpec":
        return cls(ProjectionKind.FINITE_SECTION, None)

    @property
    def is_taylor(self) -> bool:
        return self.kind is ProjectionKind.TAYLOR

    @property
    def tracks_mean(self) -> bool:
        return self.is_taylor and self.x0 is None


@dataclass(frozen=True)
class MatrixGenerator:
    A: np.ndarray
    layout: BasisLayout
    model: ModelSpec
    projection: ProjectionSpec

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.shape != (self.layout.dimension,) * 2:
            raise ValueError("generator matrix does not match layout dimension")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def k(self) -> int:
        return self.A.shape[0]


def _scalar_x0(model, proj: ProjectionSpec) -> float:
    if proj.x0 is None:
        return float(model.mu)
    x0 = np.atleast_1d(proj.x0)
    if x0.size != 1:
        raise ValueError("univariate model needs a scalar Taylor point")
    return float(x0[0])


def _vector_x0(model: CreditModel, proj: ProjectionSpec) -> np.ndarray:
    if proj.x0 is None:
        return model.mu.copy()
    x0 = np.atleast_1d(np.array(proj.x0, dtype=float))
    if x0.size == 1 and model.n > 1:
        x0 = np.full(model.n, x0[0])
    if x0.shape != (model.n,):
        raise ValueError(f"Taylor point must have {model.n} components")
    return x0


# ---------------------------------------------------------------------------
# CIR
# ---------------------------------------------------------------------------


def _check_order(k: int, minimum: int = 2) -> int:
    if int(k) != k or k < minimum:
        raise ValueError(f"order must be an integer >= {minimum}, got {k!r}")
    return int(k)


def build_cir(model: CIRModel, k: int, proj: ProjectionSpec | None = None) -> MatrixGenerator:
    """Matrix generator of the (optionally discounted) CIR process on ``1, x, ..., x^(k-1)``."""
    k = _check_order(k)
    proj = proj or ProjectionSpec.taylor()
    th, mu, sg = model.theta, model.mu, model.sigma
    i = np.arange(k, dtype=float)
    A = np.diag(-th * i)
    A[np.arange(k - 1), np.arange(1, k)] = th * mu * i[1:] + 0.5 * sg**2 * i[1:] * (i[1:] - 1)
    if model.discounted:
        A[np.arange(1, k), np.arange(k - 1)] = -1.0
        if proj.is_taylor:
            # killing term of the last column overflows as -x^k
            A[:, k - 1] -= taylor_overflow(k, _scalar_x0(model, proj)).coeffs
    return MatrixGenerator(A, enumerate_basis(1, k), model, proj)


def build_ay_univariate(K: float, mu: float, sigma: float, k: int) -> np.ndarray:
    """Undiscounted univariate CIR generator matrix (upper bidiagonal)."""
    k = _check_order(k)
    i = np.arange(k, dtype=float)
    A = np.diag(-K * i)
    A[np.arange(k - 1), np.arange(1, k)] = K * mu * i[1:] + 0.5 * sigma**2 * i[1:] * (i[1:] - 1)
    return A


# ---------------------------------------------------------------------------
# Black-Karasinski
# ---------------------------------------------------------------------------


def exp_series_coefficients(center: float, degree: int) -> np.ndarray:
    """Monomial coefficients of ``exp(x)`` expanded around ``center`` to ``degree``.

    ``s_i = e^c / i! * sum_{r <= degree - i} (-c)^r / r!``.
    """
    out = np.empty(degree + 1)
    partial = 0.0
    terms = [1.0]
    for r in range(1, degree + 1):
        terms.append(terms[-1] * (-center) / r)
    partial_sums = np.cumsum(terms)
    inv_fact = 1.0
    for i in range(degree + 1):
        if i > 0:
            inv_fact /= i
        partial = partial_sums[degree - i]
        out[i] = math.exp(center) * inv_fact * partial
    return out


def build_bk(model: BKModel, k: int, proj: ProjectionSpec | None = None, *,
             series_center: float | None = None, guard: int | None = None) -> MatrixGenerator:
    """Matrix generator of the discounted Black-Karasinski log-rate.

    The killing term ``-exp(x) x^i`` is represented by the power series of
    ``exp`` around ``series_center`` (default: the Taylor point) and folded
    back with :func:`reduce_degree`. When the series center coincides with the
    Taylor point, terms beyond degree ``k-1`` project to zero exactly and are
    not generated; otherwise the series runs to degree ``(k-1) + guard``
    (``guard`` defaults to ``k``).
    """
    k = _check_order(k)
    proj = proj or ProjectionSpec.taylor()
    if not proj.is_taylor:
        raise ValueError("Black-Karasinski generator requires a Taylor projection")
    x0 = _scalar_x0(model, proj)
    center = x0 if series_center is None else float(series_center)
    guard = k if guard is None else int(guard)
    if guard < 0:
        raise ValueError("guard must be non-negative")
    degree = k - 1 if center == x0 else k - 1 + guard
    series = exp_series_coefficients(center, degree)

    th, mu, sg = model.theta, model.mu, model.sigma
    A = np.zeros((k, k))
    for i in range(k):
        poly = np.zeros(i + degree + 1)
        poly[i] += -th * i
        if i >= 1:
            poly[i - 1] += th * mu * i
        if i >= 2:
            poly[i - 2] += 0.5 * sg**2 * i * (i - 1)
        if model.discounted:
            poly[i:] -= series
        A[:, i] = reduce_degree(poly, k, x0).coeffs
    return MatrixGenerator(A, enumerate_basis(1, k), model, proj)


# ---------------------------------------------------------------------------
# credit migration
# ---------------------------------------------------------------------------


def _overflow_target(beta: tuple[int, ...]) -> int:
    """Coordinate whose power is reduced: the largest exponent, lowest index on ties."""
    return max(range(len(beta)), key=lambda c: (beta[c], -c))


def _factor_matrices(model: CreditModel, layout: BasisLayout, proj: ProjectionSpec,
                     wrt: tuple[str, tuple[int, ...]] | None = None):
    """Monomial-level pieces ``M_y`` and ``M_i`` with ``A = M_y kron I + sum_i M_i kron Q_i``.

    With ``wrt`` set, returns the derivatives of those pieces with respect to
    that scalar parameter instead.
    """
    n, ell = model.n, layout.max_order
    K, mu, sigma = model.K, model.mu, model.sigma
    monos = layout.monomials
    index = layout.monomial_index
    L = len(monos)
    My = np.zeros((L, L))
    Mi = [np.zeros((L, L)) for _ in range(n)]
    x0 = _vector_x0(model, proj) if proj.is_taylor else None
    name, idx = wrt if wrt is not None else (None, ())
    Kmu = K @ mu

    def shift(a, c, d):
        e = list(a)
        e[c] += d
        return tuple(e)

    for col, alpha in enumerate(monos):
        for a in range(n):
            if alpha[a] == 0:
                continue
            e = shift(alpha, a, -1)
            ae = alpha[a]
            if name is None:
                My[index[e], col] += ae * Kmu[a]
                for b in range(n):
                    My[index[shift(e, b, 1)], col] -= ae * K[a, b]
                if ae >= 2:
                    My[index[e], col] += 0.5 * sigma[a] ** 2 * ae * (ae - 1)
            elif name == "K" and idx[0] == a:
                b = idx[1]
                My[index[e], col] += ae * mu[b]
                My[index[shift(e, b, 1)], col] -= ae
            elif name == "mu":
                My[index[e], col] += ae * K[a, idx[0]]
            elif name == "sigma" and idx[0] == a and ae >= 2:
                My[index[e], col] += sigma[a] * ae * (ae - 1)

        for i in range(n):
            beta = shift(alpha, i, 1)
            if sum(beta) < ell:
                if name is None:
                    Mi[i][index[beta], col] += 1.0
                continue
            if x0 is None:
                continue
            c = _overflow_target(beta)
            p = beta[c]
            if name is None:
                coeffs = taylor_overflow(p, x0[c]).coeffs
            elif name == "mu" and idx[0] == c and proj.tracks_mean:
                coeffs = taylor_overflow_dx0(p, x0[c])
            else:
                continue
            for j, cj in enumerate(coeffs):
                if cj != 0.0:
                    Mi[i][index[shift(beta, c, j - p)], col] += cj
    return My, Mi


def _assemble_credit(model: CreditModel, My: np.ndarray, Mi: list[np.ndarray]) -> np.ndarray:
    A = np.kron(My, np.eye(model.m))
    for M, Q in zip(Mi, model.Q):
        A += np.kron(M, Q)
    return A


def build_credit(model: CreditModel, ell: int, proj: ProjectionSpec | None = None) -> MatrixGenerator:
    """Matrix generator of the joint (factor, rating) process on ``b(y) kron z``.

    For a single factor this is ``A^1 kron I_m + [shift | p(mu)] kron Q_1``.
    """
    ell = _check_order(ell)
    proj = proj or ProjectionSpec.taylor()
    layout = enumerate_basis(model.n, ell, model.m)
    if model.n == 1:
        Ay = build_ay_univariate(model.K[0, 0], model.mu[0], model.sigma[0], ell)
        M1 = np.eye(ell, k=-1)
        if proj.is_taylor:
            M1[:, ell - 1] = taylor_overflow(ell, _vector_x0(model, proj)[0]).coeffs
        A = _assemble_credit(model, Ay, [M1])
    else:
        A = _assemble_credit(model, *_factor_matrices(model, layout, proj))
    return MatrixGenerator(A, layout, model, proj)


def build_generator(model: ModelSpec, order: int, proj: ProjectionSpec | None = None,
                    **kwargs) -> MatrixGenerator:
    """Dispatch to the builder for ``model``'s family."""
    if isinstance(model, CIRModel):
        return build_cir(model, order, proj)
    if isinstance(model, BKModel):
        return build_bk(model, order, proj, **kwargs)
    if isinstance(model, CreditModel):
        return build_credit(model, order, proj)
    raise TypeError(f"unsupported model type {type(model).__name__}")


# ---------------------------------------------------------------------------
# parameter derivatives
# ---------------------------------------------------------------------------

_PARAM_RE = re.compile(r"^(K|mu|sigma)(?:\[(\d+)(?:,\s*(\d+))?\])?$")


def _parse_credit_param(model: CreditModel, which: str) -> tuple[str, tuple[int, ...]]:
    match = _PARAM_RE.match(which.strip())
    if not match:
        raise ValueError(f"unknown parameter {which!r} for credit model")
    name, a, b = match.groups()
    n = model.n
    if name == "K":
        if a is None and n == 1:
            return name, (0, 0)
        if a is None or b is None:
            raise ValueError("K parameter needs two indices, e.g. 'K[0,1]'")
        idx = (int(a), int(b))
    else:
        if b is not None:
            raise ValueError(f"{name} takes a single index")
        if a is None and n == 1:
            return name, (0,)
        if a is None:
            raise ValueError(f"{name} needs an index, e.g. '{name}[0]'")
        idx = (int(a),)
    if any(v >= n for v in idx):
        raise ValueError(f"parameter index out of range in {which!r}")
    return name, idx


def perturb_generator(model: ModelSpec, which: str, order: int,
                      proj: ProjectionSpec | None = None) -> np.ndarray:
    """Entrywise derivative of ``A_k`` with respect to one scalar parameter.

    Analytic for CIR and credit models; central difference with step
    ``max(1e-6, 1e-6 |p|)`` for Black-Karasinski.
    """
    proj = proj or ProjectionSpec.taylor()
    if isinstance(model, CIRModel):
        if which not in model.parameters:
            raise ValueError(f"unknown parameter {which!r} for CIR model")
        k = _check_order(order)
        i = np.arange(k, dtype=float)
        dA = np.zeros((k, k))
        sup = (np.arange(k - 1), np.arange(1, k))
        if which == "theta":
            dA[np.arange(k), np.arange(k)] = -i
            dA[sup] = model.mu * i[1:]
        elif which == "mu":
            dA[sup] = model.theta * i[1:]
            if model.discounted and proj.tracks_mean:
                dA[:, k - 1] -= taylor_overflow_dx0(k, model.mu)
        else:
            dA[sup] = model.sigma * i[1:] * (i[1:] - 1)
        return dA

    if isinstance(model, BKModel):
        if which not in model.parameters:
            raise ValueError(f"unknown parameter {which!r} for BK model")
        value = getattr(model, which)
        h = max(1e-6, 1e-6 * abs(value))
        params = {p: getattr(model, p) for p in model.parameters}
        up = BKModel(**{**params, which: value + h}, discounted=model.discounted)
        dn = BKModel(**{**params, which: value - h}, discounted=model.discounted)
        return (build_bk(up, order, proj).A - build_bk(dn, order, proj).A) / (2 * h)

    if isinstance(model, CreditModel):
        wrt = _parse_credit_param(model, which)
        ell = _check_order(order)
        layout = enumerate_basis(model.n, ell, model.m)
        dMy, dMi = _factor_matrices(model, layout, proj, wrt)
        return _assemble_credit(model, dMy, dMi)

    raise TypeError(f"unsupported model type {type(model).__name__}")
