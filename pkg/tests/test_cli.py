from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import pytest

from polymoment.cli import format_csv, main, run_experiment
from polymoment.config import ConfigError, load_schema, validate_config, validate_dict
from polymoment.generator import BKModel, CIRModel, CreditModel

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
HEADER = "job,model,order,tenor,value,reference,ref_kind,ref_se,abs_error,wall_ms"
JARROW = [[-0.11, 0.1, 0.01], [0.05, -0.15, 0.1], [0.0, 0.0, 0.0]]

CIR_MODEL = {"family": "cir", "theta": 0.1, "mu": 0.03, "sigma": 0.05, "state": 0.03}
CREDIT_MODEL = {"family": "credit", "K": [[0.8]], "mu": [1.0], "sigma": [0.5], "Q": [JARROW], "state": [1.0]}


def minimal(**overrides):
    cfg = {"job": "PriceCir", "model": dict(CIR_MODEL), "orders": [5, 10], "tenors": [1, 5]}
    cfg.update(overrides)
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestValidate:
    def test_minimal(self):
        cfg = validate_dict(minimal())
        assert cfg.family == "cir"
        assert isinstance(cfg.model, CIRModel)
        assert cfg.orders == (5, 10) and cfg.tenors == (1.0, 5.0)

    def test_empty_orders_names_field(self):
        with pytest.raises(ConfigError) as exc:
            validate_dict(minimal(orders=[]))
        assert any(e.startswith("orders") for e in exc.value.errors)

    def test_bad_q_row_sum_names_row(self):
        Q = [row[:] for row in JARROW]
        Q[1][2] = 0.2
        model = {**CREDIT_MODEL, "Q": [Q]}
        with pytest.raises(ConfigError) as exc:
            validate_dict({"job": "CreditMigrate", "model": model, "orders": [5], "tenors": [1]})
        assert any("model.Q[0][1]" in e for e in exc.value.errors)

    def test_errors_are_aggregated(self):
        raw = minimal(orders=[10, 5], tenors=[5, 1])
        raw["model"]["theta"] = -1.0
        with pytest.raises(ConfigError) as exc:
            validate_dict(raw)
        assert len(exc.value.errors) >= 2

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            validate_dict(minimal(bogus=1))

    def test_family_job_mismatch(self):
        with pytest.raises(ConfigError, match="family"):
            validate_dict(minimal(job="PriceBk"))

    def test_bk_moment_parameterisation(self):
        raw = {"job": "PriceBk", "orders": [5], "tenors": [1],
               "model": {"family": "bk", "theta": 0.02, "mean_rate": 0.03, "rate_std": 0.06, "state": 0.01}}
        cfg = validate_dict(raw)
        assert isinstance(cfg.model, BKModel)
        assert cfg.state == pytest.approx(math.log(0.01), rel=1e-15)

    def test_cir_antithetic_rejected(self):
        raw = minimal(job="McBenchmark", mc={"n_paths": 1000, "antithetic": True})
        with pytest.raises(ConfigError, match="antithetic"):
            validate_dict(raw)

    def test_mc_required_for_benchmark(self):
        with pytest.raises(ConfigError):
            validate_dict(minimal(job="McBenchmark"))

    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="JSON"):
            validate_config("{not json")

    def test_credit_model(self):
        cfg = validate_dict({"job": "CreditMigrate", "model": CREDIT_MODEL, "orders": [5], "tenors": [1]})
        assert isinstance(cfg.model, CreditModel) and cfg.model.m == 3

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
    def test_shipped_configs_validate(self, path):
        validate_config(path.read_text())

    def test_schema_is_valid_draft(self):
        from jsonschema import Draft202012Validator

        Draft202012Validator.check_schema(load_schema())


class TestMain:
    def test_validate_ok(self, tmp_path, capsys):
        assert main(["validate", write(tmp_path, minimal())]) == 0
        assert "ok" in capsys.readouterr().out

    def test_validate_invalid_exit_2(self, tmp_path, capsys):
        assert main(["validate", write(tmp_path, minimal(orders=[]))]) == 2
        assert "orders" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.json")]) == 2

    def test_numerical_failure_exit_3(self, tmp_path, capsys):
        defective = [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, 0.0]]
        raw = {"job": "CreditMigrate", "model": {**CREDIT_MODEL, "Q": [defective]}, "orders": [5], "tenors": [1]}
        assert main(["run", write(tmp_path, raw), "--out", str(tmp_path / "o.csv")]) == 3
        assert "numerical error" in capsys.readouterr().err

    def test_schema_command(self, capsys):
        assert main(["schema"]) == 0
        assert json.loads(capsys.readouterr().out) == load_schema()

    def test_run_writes_header_and_rows(self, tmp_path):
        out = tmp_path / "out.csv"
        assert main(["run", write(tmp_path, minimal()), "--out", str(out)]) == 0
        text = out.read_text()
        assert text.splitlines()[0] == HEADER
        rows = read_rows(text)
        assert [(r["order"], r["tenor"]) for r in rows] == [("5", "1.0"), ("5", "5.0"), ("10", "1.0"), ("10", "5.0")]
        assert all(r["wall_ms"] == "" and r["ref_kind"] == "analytic" for r in rows)
        for r in rows:
            assert float(r["abs_error"]) == abs(float(r["value"]) - float(r["reference"]))

    def test_byte_identical_reruns(self, tmp_path):
        raw = minimal(job="McBenchmark", orders=[5], tenors=[1], mc={"n_paths": 20_000, "dt": 0.25, "seed": 3})
        path = write(tmp_path, raw)
        outs = []
        for i, threads in enumerate(["1", "4", "1"]):
            out = tmp_path / f"o{i}.csv"
            assert main(["run", path, "--out", str(out), "--threads", threads]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_seed_override(self, tmp_path):
        raw = minimal(job="McBenchmark", orders=[5], tenors=[1], mc={"n_paths": 1000, "dt": 0.25, "seed": 3})
        path = write(tmp_path, raw)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["run", path, "--out", str(a)])
        main(["run", path, "--out", str(b), "--seed", "4"])
        ra, rb = read_rows(a.read_text()), read_rows(b.read_text())
        assert ra[0]["value"] == rb[0]["value"]
        assert ra[0]["reference"] != rb[0]["reference"]
        assert ra[0]["ref_kind"] == "monte-carlo" and float(ra[0]["ref_se"]) > 0

    def test_seed_without_mc_is_invalid(self, tmp_path):
        assert main(["run", write(tmp_path, minimal()), "--seed", "1"]) == 2

    def test_timing_fills_wall_ms(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["run", write(tmp_path, minimal()), "--out", str(out), "--timing"]) == 0
        assert all(float(r["wall_ms"]) >= 0 for r in read_rows(out.read_text()))

    def test_stdout_output(self, tmp_path, capsys):
        assert main(["run", write(tmp_path, minimal(orders=[5], tenors=[1]))]) == 0
        assert capsys.readouterr().out.splitlines()[0] == HEADER


class TestJobs:
    def test_convergence_study(self):
        cfg = validate_dict(minimal(job="ConvergenceStudy", orders=[5, 30], tenors=[1, 10]))
        rows = run_experiment(cfg)
        assert {r.model for r in rows} == {"cir:yield"}
        errs = {(r.order, r.tenor): r.abs_error for r in rows}
        assert max(errs[(30, 1.0)], errs[(30, 10.0)]) <= 1e-11
        assert errs[(5, 10.0)] > errs[(30, 10.0)]

    def test_stability_scan(self):
        cfg = validate_dict({"job": "StabilityScan", "model": CIR_MODEL, "orders": [5, 10], "lambdas": [1, 10]})
        rows = run_experiment(cfg)
        assert len(rows) == 4
        for r in rows:
            assert r.model == "cir:resolvent"
            assert r.value == pytest.approx(r.reference, rel=1e-10)

    def test_credit_migrate(self):
        cfg = validate_dict({"job": "CreditMigrate", "model": CREDIT_MODEL, "orders": [20], "tenors": [1]})
        rows = run_experiment(cfg)
        assert len(rows) == 10
        mae = [r for r in rows if r.model == "credit[mae]"][0]
        assert mae.value <= 1e-10 and mae.reference == 0.0

    def test_sensitivity_check(self):
        raw = minimal(job="SensitivityCheck", orders=[10], tenors=[1], parameters=["mu"], quad_steps=1024)
        rows = run_experiment(validate_dict(raw))
        assert len(rows) == 1 and rows[0].model == "cir:d/dmu"
        assert rows[0].value == pytest.approx(rows[0].reference, rel=1e-5)

    def test_row_order_is_stable(self):
        cfg = validate_dict(minimal(orders=[5, 10, 15], tenors=[1, 2, 5]))
        rows = run_experiment(cfg)
        keys = [(r.order, r.tenor) for r in rows]
        assert keys == sorted(keys)
        assert format_csv(rows) == format_csv(run_experiment(cfg))
