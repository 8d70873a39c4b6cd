"""Monte Carlo benchmarks for bond prices and rating migration matrices.

Paths are simulated in fixed-size blocks. Block ``b`` draws from its own
Philox stream keyed by ``(seed, estimator, b)`` and block results are reduced
in block order, so estimates do not depend on how many worker threads run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .generator import BKModel, CIRModel, CreditModel

BLOCK_SIZE = 10_000
_STREAM_IDS = {"cir": 1, "bk": 2, "migration": 3}
# Y lattice spacing for the one-step rating transition matrices
MIGRATION_LATTICE = 1e-4


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 1.0 / 250.0
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 100:
            raise ValueError("n_paths must be an integer >= 100")
        if not (0.0 < self.dt <= 0.25):
            raise ValueError("dt must lie in (0, 0.25]")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an integer in [0, 2**64)")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class McEstimate:
    value: float | np.ndarray
    std_error: float | np.ndarray
    n_paths: int
    dt: float
    seed: int
    extra: dict = field(default_factory=dict)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("POLYMOMENT_THREADS", "1")))
    except ValueError:
        return 1


def _block_sizes(n_paths: int) -> list[int]:
    full, rest = divmod(n_paths, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def _rng(seed: int, stream: str, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(_STREAM_IDS[stream], block))
    return np.random.Generator(np.random.Philox(ss))


def _run_blocks(fn: Callable, cfg: SimConfig, stream: str, threads: int | None) -> list:
    sizes = _block_sizes(cfg.n_paths)
    jobs = [(b, size) for b, size in enumerate(sizes)]
    threads = threads or default_threads()

    def work(job):
        b, size = job
        return fn(_rng(cfg.seed, stream, b), size)

    if threads <= 1 or len(jobs) == 1:
        return [work(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, jobs))


def _time_steps(horizon: float, dt: float) -> tuple[int, float]:
    n = max(1, math.ceil(horizon / dt - 1e-9))
    return n, horizon / n


def _normals(rng: np.random.Generator, size: int, shape_tail: tuple = (), antithetic: bool = False):
    if not antithetic:
        return rng.standard_normal((size,) + shape_tail)
    half = rng.standard_normal((size // 2,) + shape_tail)
    return np.concatenate([half, -half])


def _mean_and_se(blocks: list[tuple[int, float, float]]) -> tuple[float, float]:
    """Merge per-block ``(count, mean, M2)`` in block order (Chan et al. update)."""
    count, mean, m2 = 0, 0.0, 0.0
    for n_b, mean_b, m2_b in blocks:
        total = count + n_b
        delta = mean_b - mean
        mean += delta * n_b / total
        m2 += m2_b + delta * delta * count * n_b / total
        count = total
    var = m2 / max(count - 1, 1)
    return mean, math.sqrt(var / count)


def _block_stats(values: np.ndarray, antithetic: bool) -> tuple[int, float, float]:
    if antithetic:
        half = values.size // 2
        values = 0.5 * (values[:half] + values[half:])
    mean = float(values.mean())
    dev = values - mean
    return int(values.size), mean, float(np.dot(dev, dev))


# ---------------------------------------------------------------------------
# CIR
# ---------------------------------------------------------------------------


def _poisson(rng: np.random.Generator, lam: np.ndarray) -> np.ndarray:
    """Poisson draws; beyond ~1e12 the normal approximation is used (numpy caps lam)."""
    lam = np.asarray(lam, dtype=float)
    big = lam > 1e12
    if not np.any(big):
        return rng.poisson(lam).astype(float)
    out = np.empty_like(lam)
    out[~big] = rng.poisson(lam[~big])
    out[big] = np.maximum(np.rint(lam[big] + np.sqrt(lam[big]) * rng.standard_normal(int(big.sum()))), 0.0)
    return out


def cir_transition(rng: np.random.Generator, x: np.ndarray, model: CIRModel, dt: float) -> np.ndarray:
    """Exact CIR step: a scaled non-central chi-square draw.

    For ``df > 1`` the normal-plus-central-chi-square decomposition is used;
    otherwise a Poisson mixture of gammas.
    """
    th, mu, sg = model.theta, model.mu, model.sigma
    decay = math.exp(-th * dt)
    if sg == 0:
        return mu + (x - mu) * decay
    c = sg * sg * (-math.expm1(-th * dt) / th if th > 0 else dt) / 4.0
    df = 4.0 * th * mu / (sg * sg)
    nc = np.maximum(x, 0.0) * decay / c
    if df > 1.0:
        # chi2'(df, nc) = (Z + sqrt(nc))^2 + chi2(df - 1), exact in law
        z = rng.standard_normal(x.shape) + np.sqrt(nc)
        return c * (z * z + 2.0 * rng.standard_gamma(0.5 * (df - 1.0), x.shape))
    n = _poisson(rng, 0.5 * nc)
    shape = 0.5 * df + n
    draw = np.where(shape > 0, rng.gamma(np.where(shape > 0, shape, 1.0)), 0.0)
    return 2.0 * c * draw


def mc_cir_bond(model: CIRModel, x0: float, tau: float, cfg: SimConfig,
                threads: int | None = None) -> McEstimate:
    """Monte Carlo zero-coupon bond price with exact CIR transitions and a
    trapezoid discount integral."""
    if x0 < 0:
        raise ValueError("x0 must be non-negative")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if cfg.antithetic:
        raise ValueError("antithetic sampling is not defined for exact CIR transitions")
    if tau == 0:
        return McEstimate(1.0, 0.0, cfg.n_paths, cfg.dt, cfg.seed)
    n_steps, h = _time_steps(tau, cfg.dt)

    def block(rng, size):
        x = np.full(size, float(x0))
        integral = np.zeros(size)
        for _ in range(n_steps):
            x_new = cir_transition(rng, x, model, h)
            integral += 0.5 * h * (x + x_new)
            x = x_new
        return _block_stats(np.exp(-integral), False)

    mean, se = _mean_and_se(_run_blocks(block, cfg, "cir", threads))
    return McEstimate(mean, se, cfg.n_paths, cfg.dt, cfg.seed, {"n_steps": n_steps})


# ---------------------------------------------------------------------------
# Black-Karasinski
# ---------------------------------------------------------------------------


def mc_bk_price(model: BKModel, x0: float, tau: float, cfg: SimConfig,
                threads: int | None = None) -> McEstimate:
    """Monte Carlo bond price under BK: exact OU log-rate steps, trapezoid discounting."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    n_steps, h = _time_steps(tau, cfg.dt)
    th, mu, sg = model.theta, model.mu, model.sigma
    decay = math.exp(-th * h)
    sd = sg * math.sqrt(-math.expm1(-2.0 * th * h) / (2.0 * th)) if th > 0 else sg * math.sqrt(h)

    def block(rng, size):
        x = np.full(size, float(x0))
        r = np.exp(x)
        integral = np.zeros(size)
        for _ in range(n_steps):
            x = mu + (x - mu) * decay + sd * _normals(rng, size, antithetic=cfg.antithetic)
            r_new = np.exp(x)
            integral += 0.5 * h * (r + r_new)
            r = r_new
        return _block_stats(np.exp(-integral), cfg.antithetic)

    mean, se = _mean_and_se(_run_blocks(block, cfg, "bk", threads))
    return McEstimate(mean, se, cfg.n_paths, cfg.dt, cfg.seed, {"n_steps": n_steps})


def mc_bk_yield(model: BKModel, x0: float, tau: float, cfg: SimConfig,
                threads: int | None = None) -> McEstimate:
    """Zero-coupon yield ``-log(price)/tau`` with a delta-method standard error."""
    price = mc_bk_price(model, x0, tau, cfg, threads)
    y = -math.log(price.value) / tau
    se = price.std_error / (price.value * tau)
    return McEstimate(y, se, cfg.n_paths, cfg.dt, cfg.seed,
                      {"price": price.value, "price_se": price.std_error, **price.extra})


# ---------------------------------------------------------------------------
# rating migration
# ---------------------------------------------------------------------------


def expm_small_batch(M: np.ndarray, degree: int = 18) -> np.ndarray:
    """Exponentials of a stack of small matrices by scaled Taylor series and squaring."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return M.copy()
    norm = float(np.max(np.sum(np.abs(M), axis=-2)))
    s = max(0, math.ceil(math.log2(norm / 0.25))) if norm > 0.25 else 0
    X = M / (2.0**s)
    eye = np.broadcast_to(np.eye(M.shape[-1]), M.shape)
    E = eye + X / degree
    for j in range(degree - 1, 0, -1):
        E = eye + (X @ E) / j
    for _ in range(s):
        E = E @ E
    return E


def mc_migration_grid(model: CreditModel, y0: Sequence[float], times: Sequence[float],
                      cfg: SimConfig, threads: int | None = None) -> list[McEstimate]:
    """Empirical migration matrices at several horizons from one simulation.

    Each factor path carries one rating chain per initial rating. The factor
    follows a full-truncation Euler scheme; over each step the rating moves
    with ``expm(Q(Ybar) dt)`` where ``Ybar`` is the truncated step average,
    snapped to a lattice of spacing ``MIGRATION_LATTICE``.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape != (model.n,):
        raise ValueError(f"y0 must have {model.n} components")
    if np.any(y0 < 0):
        raise ValueError("y0 must be non-negative")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be positive and strictly increasing")
    if times.size == 1:
        n_total, h = _time_steps(times[0], cfg.dt)
        record = [n_total]
    else:
        h = cfg.dt
        record = []
        for t in times:
            steps = round(t / h)
            if abs(steps * h - t) > 1e-9 * max(t, 1.0):
                raise ValueError(f"time {t} is not a multiple of dt={h}")
            record.append(steps)
        n_total = record[-1]

    n, m = model.n, model.m
    K, mu, sigma = model.K, model.mu, model.sigma
    Qs = np.stack(model.Q)  # (n, m, m)
    sqrt_h = math.sqrt(h)

    def block(rng, size):
        Y = np.tile(y0, (size, 1))
        ratings = np.tile(np.arange(m), (size, 1))
        counts = []
        checkpoints = dict.fromkeys(record)
        for step in range(1, n_total + 1):
            Yp = np.maximum(Y, 0.0)
            Z = _normals(rng, size, (n,), cfg.antithetic)
            Y = Y + (mu - Yp) @ K.T * h + sigma * np.sqrt(Yp) * sqrt_h * Z
            Ybar = 0.5 * (Yp + np.maximum(Y, 0.0))
            keys = np.rint(Ybar / MIGRATION_LATTICE).astype(np.int64)
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            gens = np.einsum("ui,ijk->ujk", uniq * (MIGRATION_LATTICE * h), Qs)
            steps = expm_small_batch(gens)
            cum = np.cumsum(steps, axis=2)[:, :, : m - 1]
            u = rng.random((size, m))
            for i in range(m):
                c = cum[inv, ratings[:, i]]
                ratings[:, i] = np.sum(u[:, i, None] > c, axis=1)
            if step in checkpoints:
                tally = np.zeros((m, m), dtype=np.int64)
                for i in range(m):
                    tally[i] = np.bincount(ratings[:, i], minlength=m)
                counts.append(tally)
        return counts

    blocks = _run_blocks(block, cfg, "migration", threads)
    out = []
    for idx in range(len(record)):
        total = sum(b[idx] for b in blocks)
        P = total / cfg.n_paths
        se = np.sqrt(P * (1.0 - P) / cfg.n_paths)
        out.append(McEstimate(P, se, cfg.n_paths, cfg.dt, cfg.seed,
                              {"t": float(times[idx]), "n_steps": record[idx]}))
    return out


def mc_migration(model: CreditModel, y0: Sequence[float], t: float, cfg: SimConfig,
                 threads: int | None = None) -> McEstimate:
    """Empirical ``m x m`` migration matrix at horizon ``t`` with binomial standard errors."""
    return mc_migration_grid(model, y0, [t], cfg, threads)[0]
