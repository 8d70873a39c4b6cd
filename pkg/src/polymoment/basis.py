"""Monomial bases, coefficient vectors and Taylor overflow projection."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Sequence

import numpy as np

MultiIndex = tuple[int, ...]


class BasisKind(enum.Enum):
    UNIVARIATE_MONOMIAL = "univariate_monomial"
    GRADED_MULTIVARIATE = "graded_multivariate"
    MONOMIAL_KRON_RATING = "monomial_kron_rating"


def graded_multi_indices(n: int, max_order: int) -> list[MultiIndex]:
    """All exponent tuples of total degree < ``max_order``, graded-lex ordered.

    Within a degree the order is lexicographically descending, so for n=2 the
    degree-one block is ``(1, 0), (0, 1)`` (y1 before y2).
    """
    out: list[MultiIndex] = []
    for degree in range(max_order):
        block = [a for a in itertools.product(range(degree + 1), repeat=n) if sum(a) == degree]
        out.extend(sorted(block, reverse=True))
    return out


def basis_dimension(n: int, max_order: int, m: int = 1) -> int:
    """Closed-form dimension ``sum_i C(n+i-1, n-1) * m`` over degrees i < max_order."""
    return sum(comb(n + i - 1, n - 1) for i in range(max_order)) * m


@dataclass(frozen=True)
class BasisLayout:
    """Ordered enumeration of basis functions ``y^alpha * z_r``.

    Monomials are graded (degree d before degree d+1); rating indices run
    fastest, so the layout for ratings is ``b(y) kron z``.
    """

    kind: BasisKind
    n: int
    max_order: int
    m: int
    ordering: tuple[tuple[MultiIndex, int], ...] = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.ordering)

    @cached_property
    def monomials(self) -> tuple[MultiIndex, ...]:
        return tuple(self.ordering[i][0] for i in range(0, len(self.ordering), self.m))

    @cached_property
    def monomial_index(self) -> dict[MultiIndex, int]:
        return {a: i for i, a in enumerate(self.monomials)}

    def index(self, exponents: MultiIndex, rating: int = 0) -> int:
        return self.monomial_index[tuple(exponents)] * self.m + rating

    def monomial_values(self, point) -> np.ndarray:
        """Values of every monomial of the layout at ``point``."""
        y = np.atleast_1d(np.asarray(point, dtype=float))
        if y.shape != (self.n,):
            raise ValueError(f"point has dimension {y.size}, layout expects {self.n}")
        if self.n == 1:
            return y[0] ** np.arange(self.max_order, dtype=float)
        exps = np.array(self.monomials, dtype=float)
        return np.prod(y[None, :] ** exps, axis=1)


def enumerate_basis(n: int, max_order: int, m: int = 1) -> BasisLayout:
    """Build the basis layout for ``n`` state dimensions, degrees ``< max_order``
    and ``m`` ratings."""
    for name, value in (("n", n), ("max_order", max_order), ("m", m)):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    n, max_order, m = int(n), int(max_order), int(m)
    if m > 1:
        kind = BasisKind.MONOMIAL_KRON_RATING
    elif n > 1:
        kind = BasisKind.GRADED_MULTIVARIATE
    else:
        kind = BasisKind.UNIVARIATE_MONOMIAL
    ordering = tuple((a, r) for a in graded_multi_indices(n, max_order) for r in range(m))
    return BasisLayout(kind, n, max_order, m, ordering)


@dataclass(frozen=True)
class CoefficientVector:
    """Coefficients of a function against the basis of ``layout``."""

    coeffs: np.ndarray
    layout: BasisLayout

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.layout.dimension,):
            raise ValueError(
                f"coefficient vector has shape {c.shape}, layout dimension is {self.layout.dimension}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, point, rating: int | None = None) -> float:
        return evaluate(self, point, rating)


@dataclass(frozen=True)
class TaylorCoefficients:
    """Degree ``k-1`` Taylor polynomial of ``x**k`` around ``x0``.

    ``coeffs[i]`` multiplies ``x**i``; the polynomial equals ``x**k - (x - x0)**k``.
    """

    x0: float
    k: int
    coeffs: np.ndarray

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)


def taylor_overflow(k: int, x0: float) -> TaylorCoefficients:
    """Project the overflow power ``x**k`` onto ``1, x, ..., x**(k-1)``.

    Uses ``coeffs[i] = -C(k, i) * (-x0)**(k - i)``. With ``x0 = 0`` the result
    is the zero vector.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x0 = float(x0)
    coeffs = np.array([-comb(k, i) * (-x0) ** (k - i) for i in range(k)], dtype=float)
    return TaylorCoefficients(x0, k, coeffs)


def taylor_overflow_dx0(k: int, x0: float) -> np.ndarray:
    """Derivative of ``taylor_overflow(k, x0).coeffs`` with respect to ``x0``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x0 = float(x0)
    return np.array(
        [comb(k, i) * (k - i) * (-x0) ** (k - i - 1) for i in range(k)], dtype=float
    )


def _taylor_shift(p: np.ndarray, a: float) -> np.ndarray:
    """Coefficients of ``p(x + a)`` in powers of ``x`` (repeated synthetic division)."""
    q = p.copy()
    n = q.size
    for i in range(n - 1):
        for j in range(n - 2, i - 1, -1):
            q[j] += a * q[j + 1]
    return q


def reduce_degree(poly: Sequence[float], k: int, x0: float) -> CoefficientVector:
    """Fold every power ``>= k`` of a dense univariate polynomial back into
    degree ``< k``.

    Replacing each overflow power ``x**j`` by ``taylor_overflow(j, x0)`` amounts
    to taking the degree ``k-1`` Taylor polynomial around ``x0``. For the
    overflow part this is computed by shifting to powers of ``x - x0``,
    truncating and shifting back, which avoids the cancellation of repeated
    folding.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    p = np.array(poly, dtype=float)
    if p.ndim != 1:
        raise ValueError("poly must be a one-dimensional coefficient list")
    if p.size <= k:
        out = np.concatenate([p, np.zeros(k - p.size)])
        return CoefficientVector(out, enumerate_basis(1, k))
    x0 = float(x0)
    high = p.copy()
    high[:k] = 0.0
    out = p[:k].copy()
    if np.any(high) and x0 != 0.0:
        # the part below degree k is its own Taylor polynomial; only the overflow is shifted
        out += _taylor_shift(_taylor_shift(high, x0)[:k], -x0)
    return CoefficientVector(out, enumerate_basis(1, k))


def evaluate(fbar: CoefficientVector, point, rating: int | None = None) -> float:
    """Evaluate ``sum_i fbar_i * b_i(point, rating)``.

    The univariate rating-free case uses Horner's scheme.
    """
    layout = fbar.layout
    if layout.m > 1:
        if rating is None:
            raise ValueError("a rating index is required for layouts with ratings")
        if not 0 <= rating < layout.m:
            raise ValueError(f"rating {rating} out of range 0..{layout.m - 1}")
    elif rating not in (None, 0):
        raise ValueError("layout has no ratings")

    if layout.n == 1 and layout.m == 1:
        x = np.atleast_1d(np.asarray(point, dtype=float))
        if x.shape != (1,):
            raise ValueError(f"point has dimension {x.size}, layout expects 1")
        x = x[0]
        acc = 0.0
        for c in fbar.coeffs[::-1]:
            acc = acc * x + c
        return float(acc)

    values = layout.monomial_values(point)
    coeffs = fbar.coeffs[(rating or 0)::layout.m]
    return float(np.dot(coeffs, values))
