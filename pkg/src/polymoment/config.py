"""Experiment configuration: JSON schema validation plus cross-field invariants."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any

import jsonschema
import numpy as np

from .expmv import DEFAULT_TOL
from .generator import (
    BKModel,
    CIRModel,
    CreditModel,
    ModelSpec,
    ProjectionSpec,
    validate_generator_matrix,
)
from .montecarlo import SimConfig

JOBS = ("PriceCir", "PriceBk", "CreditMigrate", "StabilityScan",
        "ConvergenceStudy", "McBenchmark", "SensitivityCheck")
JOB_FAMILIES = {
    "PriceCir": {"cir"},
    "PriceBk": {"bk"},
    "CreditMigrate": {"credit"},
    "StabilityScan": {"cir", "bk", "credit"},
    "ConvergenceStudy": {"cir", "credit"},
    "McBenchmark": {"cir", "bk", "credit"},
    "SensitivityCheck": {"cir", "bk"},
}


class ConfigError(ValueError):
    """Configuration rejected; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@lru_cache(maxsize=1)
def schema_text() -> str:
    return resources.files("polymoment").joinpath("schema.json").read_text(encoding="utf-8")


def load_schema() -> dict:
    return json.loads(schema_text())


@dataclass(frozen=True)
class ExperimentConfig:
    job: str
    id: str
    model: ModelSpec
    state: float | np.ndarray
    orders: tuple[int, ...]
    tenors: tuple[float, ...] = ()
    lambdas: tuple[float, ...] = ()
    projection: ProjectionSpec = field(default_factory=ProjectionSpec.taylor)
    series_center: float | None = None
    guard: int | None = None
    mc: SimConfig | None = None
    tol: float = DEFAULT_TOL
    parameters: tuple[str, ...] = ()
    quad_steps: int = 256
    output: str | None = None

    @property
    def family(self) -> str:
        return self.model.tag

    def generator_kwargs(self) -> dict:
        if self.family != "bk":
            return {}
        return {"series_center": self.series_center, "guard": self.guard}


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else p)
    return out or "<root>"


def _schema_errors(raw: Any) -> list[str]:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        errors.append(f"{_path(err.absolute_path)}: {err.message}")
    return errors


def _increasing(values) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


def _build_model(spec: dict, errors: list[str]) -> ModelSpec | None:
    family = spec["family"]
    discounted = spec.get("discounted", True)
    try:
        if family == "cir":
            return CIRModel(spec["theta"], spec["mu"], spec["sigma"], discounted)
        if family == "bk":
            if "mean_rate" in spec:
                return BKModel.from_rate_moments(spec["mean_rate"], spec["rate_std"], spec["theta"], discounted)
            return BKModel(spec["theta"], spec["mu"], spec["sigma"], discounted)
    except ValueError as exc:
        errors.append(f"model: {exc}")
        return None

    mu = np.asarray(spec["mu"], dtype=float)
    n = mu.size
    ok = True
    K = spec["K"]
    if len(K) != n or any(len(row) != n for row in K):
        errors.append(f"model.K: must be {n}x{n} to match model.mu")
        ok = False
    if len(spec["sigma"]) != n:
        errors.append(f"model.sigma: must have {n} entries to match model.mu")
        ok = False
    if len(spec["Q"]) != n:
        errors.append(f"model.Q: expected {n} generator matrices, got {len(spec['Q'])}")
        ok = False
    shapes = set()
    for i, Q in enumerate(spec["Q"]):
        m = len(Q)
        if any(len(row) != m for row in Q):
            errors.append(f"model.Q[{i}]: must be square")
            ok = False
            continue
        shapes.add(m)
        try:
            validate_generator_matrix(Q, f"Q[{i}]")
        except ValueError as exc:
            for msg in str(exc).split("; "):
                row = msg.split(" row ")[1].split(":")[0] if " row " in msg else None
                where = f"model.Q[{i}][{row}]" if row is not None else f"model.Q[{i}]"
                errors.append(f"{where}: {msg}")
            ok = False
    if len(shapes) > 1:
        errors.append("model.Q: all generator matrices must share one size")
        ok = False
    if not ok:
        return None
    try:
        return CreditModel(K, mu, spec["sigma"], [np.asarray(q, dtype=float) for q in spec["Q"]])
    except ValueError as exc:
        errors.append(f"model: {exc}")
        return None


def _build_state(spec: dict, model: ModelSpec, errors: list[str]):
    state = spec["state"]
    if isinstance(model, CreditModel):
        state = np.asarray(state, dtype=float)
        if state.shape != (model.n,):
            errors.append(f"model.state: must have {model.n} entries")
            return None
        return state
    if isinstance(state, list):
        errors.append("model.state: must be a number for a short-rate model")
        return None
    # BK works with the log-rate
    return math.log(state) if isinstance(model, BKModel) else float(state)


def validate_dict(raw: Any) -> ExperimentConfig:
    errors = _schema_errors(raw)
    if isinstance(raw, dict):
        # ordering checks also run on structurally invalid input so all problems are reported
        for key in ("orders", "tenors", "lambdas"):
            vals = raw.get(key)
            if (isinstance(vals, list) and all(isinstance(v, (int, float)) for v in vals)
                    and not _increasing(vals)):
                errors.append(f"{key}: must be strictly increasing")
    if errors:
        raise ConfigError(errors)

    job = raw["job"]
    mspec = raw["model"]
    family = mspec["family"]
    if family not in JOB_FAMILIES[job]:
        errors.append(f"model.family: job {job} does not support family {family!r} "
                      f"(allowed: {', '.join(sorted(JOB_FAMILIES[job]))})")
    orders = raw["orders"]

    pspec = raw.get("projection", {})
    projection = None
    try:
        projection = ProjectionSpec(pspec.get("kind", "taylor"), pspec.get("x0"))
    except ValueError as exc:
        errors.append(f"projection: {exc}")
    if family == "bk" and pspec.get("kind") == "finite_section":
        errors.append("projection.kind: Black-Karasinski requires a Taylor projection")
    if family != "bk" and ("series_center" in pspec or "guard" in pspec):
        errors.append("projection: series_center and guard apply only to the bk family")
    if projection is not None and projection.x0 is not None:
        size = np.size(projection.x0)
        n = len(mspec["mu"]) if family == "credit" and isinstance(mspec.get("mu"), list) else 1
        if size not in (1, n):
            errors.append(f"projection.x0: must be a scalar or have {n} entries")

    mc = None
    if "mc" in raw:
        try:
            mc = SimConfig(**{"dt": 1.0 / 250.0, "seed": 0, **raw["mc"]})
        except ValueError as exc:
            errors.append(f"mc: {exc}")
        if raw["mc"].get("antithetic") and family == "cir":
            errors.append("mc.antithetic: not available for exact CIR sampling")

    if "parameters" in raw and job != "SensitivityCheck":
        errors.append("parameters: only used by SensitivityCheck")

    model = _build_model(mspec, errors)
    state = _build_state(mspec, model, errors) if model is not None else None
    if model is not None and "parameters" in raw:
        for i, p in enumerate(raw["parameters"]):
            if p not in model.parameters:
                errors.append(f"parameters[{i}]: unknown parameter {p!r} for {family}")
    if errors:
        raise ConfigError(errors)

    return ExperimentConfig(
        job=job,
        id=raw.get("id", job),
        model=model,
        state=state,
        orders=tuple(orders),
        tenors=tuple(float(t) for t in raw.get("tenors", ())),
        lambdas=tuple(float(v) for v in raw.get("lambdas", ())),
        projection=projection,
        series_center=pspec.get("series_center"),
        guard=pspec.get("guard"),
        mc=mc,
        tol=raw.get("tol", DEFAULT_TOL),
        parameters=tuple(raw.get("parameters", model.parameters)),
        quad_steps=raw.get("quad_steps", 256),
        output=raw.get("output"),
    )


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate raw JSON text.

    Raises
    ------
    ConfigError
        With every structural and invariant violation, each prefixed by the
        offending field path.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<root>: invalid JSON: {exc}"]) from None
    return validate_dict(raw)
