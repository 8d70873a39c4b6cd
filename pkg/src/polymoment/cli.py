"""Command line experiment runner.

``polymoment run cfg.json`` executes one job and writes a CSV table with the
columns in :data:`CSV_COLUMNS`; ``validate`` checks a config and ``schema``
prints the JSON schema.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .config import ConfigError, ExperimentConfig, schema_text, validate_config
from .errors import NumericalError
from .expmv import resolvent_norm
from .generator import BKModel, CIRModel, CreditModel, build_generator, perturb_generator
from .models import cir_bond_price, credit_analytic_1d, credit_analytic_2d_commuting
from .montecarlo import default_threads, mc_bk_yield, mc_cir_bond, mc_migration_grid
from .pricing import bond_price_sensitivity, bond_prices, migration_matrices

CSV_COLUMNS = ("job", "model", "order", "tenor", "value", "reference",
               "ref_kind", "ref_se", "abs_error", "wall_ms")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


@dataclass(frozen=True)
class ResultRow:
    job: str
    model: str
    order: int
    tenor: float
    value: float
    reference: float | None = None
    ref_kind: str = ""
    ref_se: float | None = None
    wall_ms: float | None = None

    @property
    def abs_error(self) -> float | None:
        return None if self.reference is None else abs(self.value - self.reference)

    def as_record(self, timing: bool = False) -> list[str]:
        def num(v):
            return "" if v is None else repr(float(v))

        return [self.job, self.model, str(self.order), num(self.tenor), num(self.value),
                num(self.reference), self.ref_kind, num(self.ref_se), num(self.abs_error),
                num(self.wall_ms) if timing else ""]


class _Clock:
    def __init__(self):
        self.start = time.perf_counter()

    def ms(self) -> float:
        return 1e3 * (time.perf_counter() - self.start)


# ---------------------------------------------------------------------------
# references
# ---------------------------------------------------------------------------


def _generator(cfg: ExperimentConfig, order: int, model=None):
    return build_generator(model or cfg.model, order, cfg.projection, **cfg.generator_kwargs())


def _analytic_migration(model: CreditModel, y, t: float) -> np.ndarray | None:
    """Closed-form migration matrix when the model admits one, else ``None``."""
    if model.n == 1:
        return credit_analytic_1d(model.Q[0], model.K[0, 0], model.mu[0], model.sigma[0], y[0], t).P
    if model.n == 2 and np.count_nonzero(model.K - np.diag(np.diag(model.K))) == 0:
        Q1, Q2 = model.Q
        if np.linalg.norm(Q1 @ Q2 - Q2 @ Q1, "fro") <= 1e-10:
            cir = [(model.K[i, i], model.mu[i], model.sigma[i]) for i in range(2)]
            return credit_analytic_2d_commuting(Q1, Q2, cir[0], cir[1], y, t).P
    return None


def _credit_references(cfg: ExperimentConfig, threads: int | None):
    """Per-tenor ``(P_ref, SE or None, kind)``; Monte Carlo only when requested."""
    model, y = cfg.model, cfg.state
    if cfg.job != "McBenchmark":
        refs = [_analytic_migration(model, y, t) for t in cfg.tenors]
        if all(r is not None for r in refs):
            return [(r, None, "analytic") for r in refs]
    if cfg.mc is None:
        return [(None, None, "")] * len(cfg.tenors)
    est = mc_migration_grid(model, y, cfg.tenors, _grid_sim(cfg), threads)
    return [(e.value, e.std_error, "monte-carlo") for e in est]


def _grid_sim(cfg: ExperimentConfig):
    """Snap the MC step so that every tenor lands on the simulation grid."""
    sim = cfg.mc
    if len(cfg.tenors) == 1:
        return sim
    for n in range(1, 10_001):
        h = sim.dt / n
        if all(abs(round(t / h) * h - t) <= 1e-9 * max(t, 1.0) for t in cfg.tenors):
            return replace(sim, dt=h)
    raise ValueError("tenors are not commensurate with mc.dt")


# ---------------------------------------------------------------------------
# jobs
# ---------------------------------------------------------------------------


def _price_rows(cfg: ExperimentConfig, threads: int | None, yields: bool) -> Iterator[ResultRow]:
    model, x = cfg.model, cfg.state
    tenors = np.asarray(cfg.tenors)
    refs = []
    for tau in cfg.tenors:
        if isinstance(model, CIRModel) and cfg.job != "McBenchmark":
            p = cir_bond_price(model.theta, model.mu, model.sigma, x, tau)
            refs.append((-math.log(p) / tau if yields else p, None, "analytic"))
        elif cfg.mc is None:
            refs.append((None, None, ""))
        elif isinstance(model, CIRModel):
            est = mc_cir_bond(model, x, tau, cfg.mc, threads)
            if yields:
                refs.append((-math.log(est.value) / tau, est.std_error / (est.value * tau), "monte-carlo"))
            else:
                refs.append((est.value, est.std_error, "monte-carlo"))
        else:
            est = mc_bk_yield(model, x, tau, cfg.mc, threads)
            if yields:
                refs.append((est.value, est.std_error, "monte-carlo"))
            else:
                refs.append((est.extra["price"], est.extra["price_se"], "monte-carlo"))
    tag = model.tag + (":yield" if yields else "")
    for order in cfg.orders:
        clock = _Clock()
        prices = bond_prices(_generator(cfg, order), x, tenors, cfg.tol)
        values = -np.log(prices) / tenors if yields else prices
        ms = clock.ms()
        for tau, v, (ref, se, kind) in zip(cfg.tenors, values, refs):
            yield ResultRow(cfg.id, tag, order, tau, float(v), ref, kind, se, ms)


def _credit_rows(cfg: ExperimentConfig, threads: int | None) -> Iterator[ResultRow]:
    refs = _credit_references(cfg, threads)
    m = cfg.model.m
    for order in cfg.orders:
        clock = _Clock()
        P = migration_matrices(_generator(cfg, order), cfg.state, cfg.tenors, cfg.tol)
        ms = clock.ms()
        for tau, Pt, (ref, se, kind) in zip(cfg.tenors, P, refs):
            for i in range(m):
                for j in range(m):
                    yield ResultRow(cfg.id, f"credit[{i},{j}]", order, tau, float(Pt[i, j]),
                                    None if ref is None else float(ref[i, j]), kind,
                                    None if se is None else float(se[i, j]), ms)
            if ref is not None:
                mae = float(np.mean(np.abs(Pt - ref)))
                yield ResultRow(cfg.id, "credit[mae]", order, tau, mae, 0.0, kind, None, ms)


def _stability_rows(cfg: ExperimentConfig) -> Iterator[ResultRow]:
    for order in cfg.orders:
        A = _generator(cfg, order).A
        eye = np.eye(A.shape[0])
        for lam in cfg.lambdas:
            clock = _Clock()
            value = resolvent_norm(A, lam)
            ms = clock.ms()
            ref = float(np.linalg.norm(np.linalg.inv(lam * eye - A), 2))
            yield ResultRow(cfg.id, f"{cfg.family}:resolvent", order, lam, value, ref, "dense-inverse", None, ms)


def _price_derivative(cfg: ExperimentConfig, name: str, tenors: np.ndarray, order: int) -> np.ndarray:
    """Richardson-extrapolated central difference of the approximate bond price."""
    model = cfg.model
    p = getattr(model, name)
    h = 1e-3 * max(abs(p), 1e-2)
    params = {q: getattr(model, q) for q in model.parameters}

    def price(value):
        bumped = type(model)(**{**params, name: value}, discounted=model.discounted)
        return bond_prices(_generator(cfg, order, bumped), cfg.state, tenors, cfg.tol)

    if p - 2 * h < 0 and name != "mu":
        # one-sided second-order stencil for parameters sitting at zero
        return (-3 * price(p) + 4 * price(p + h) - price(p + 2 * h)) / (2 * h)
    d1 = (price(p + h) - price(p - h)) / (2 * h)
    d2 = (price(p + 2 * h) - price(p - 2 * h)) / (4 * h)
    return (4 * d1 - d2) / 3


def _sensitivity_rows(cfg: ExperimentConfig) -> Iterator[ResultRow]:
    model, x = cfg.model, cfg.state
    tenors = np.asarray(cfg.tenors)
    for order in cfg.orders:
        gen = _generator(cfg, order)
        for name in cfg.parameters:
            clock = _Clock()
            dA = perturb_generator(model, name, order, cfg.projection)
            values = [bond_price_sensitivity(gen, dA, x, tau, cfg.quad_steps, cfg.tol) for tau in cfg.tenors]
            ms = clock.ms()
            fd = _price_derivative(cfg, name, tenors, order)
            for tau, v, r in zip(cfg.tenors, values, fd):
                yield ResultRow(cfg.id, f"{model.tag}:d/d{name}", order, tau, float(v), float(r),
                                "finite-difference", None, ms)


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list[ResultRow]:
    """Execute one job; rows are ordered by order, then tenor, then model tag."""
    job = cfg.job
    if job == "StabilityScan":
        rows = list(_stability_rows(cfg))
    elif job == "SensitivityCheck":
        rows = list(_sensitivity_rows(cfg))
    elif isinstance(cfg.model, CreditModel):
        rows = list(_credit_rows(cfg, threads))
    else:
        yields = job in ("ConvergenceStudy", "McBenchmark")
        rows = list(_price_rows(cfg, threads, yields))
    rows.sort(key=lambda r: (r.order, r.tenor))
    return rows


def write_csv(rows: list[ResultRow], stream, timing: bool = False) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_record(timing))


def format_csv(rows: list[ResultRow], timing: bool = False) -> str:
    buf = io.StringIO()
    write_csv(rows, buf, timing)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polymoment", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a job config and write CSV")
    run.add_argument("config")
    run.add_argument("--out", help="CSV path (default: config 'output', else stdout)")
    run.add_argument("--threads", type=int, help="Monte Carlo worker threads (env POLYMOMENT_THREADS)")
    run.add_argument("--seed", type=int, help="override mc.seed")
    run.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    val = sub.add_parser("validate", help="check a job config")
    val.add_argument("config")
    sub.add_parser("schema", help="print the config JSON schema")
    return parser


def _load(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"<file>: {exc}"]) from None
    return validate_config(text)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        sys.stdout.write(schema_text())
        return EXIT_OK
    try:
        cfg = _load(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({cfg.job}, {cfg.family})")
            return EXIT_OK
        if args.seed is not None:
            if cfg.mc is None:
                raise ConfigError(["--seed: config has no mc section"])
            try:
                cfg = replace(cfg, mc=replace(cfg.mc, seed=args.seed))
            except ValueError as exc:
                raise ConfigError([f"--seed: {exc}"]) from None
        if args.threads is not None and args.threads < 1:
            raise ConfigError(["--threads: must be >= 1"])
        threads = args.threads or default_threads()
        rows = run_experiment(cfg, threads)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out = args.out or cfg.output
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh, args.timing)
    else:
        write_csv(rows, sys.stdout, args.timing)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
