import json

import numpy as np
import pytest

from tamed_langevin.errors import ConfigError
from tamed_langevin.harness import cli, experiments
from tamed_langevin.harness.checks import Check, all_gating_passed, in_band
from tamed_langevin.harness.config import (ExperimentKind, bundled_spec_path, env_out,
                                           env_threads, load_spec, spec_from_dict)
from tamed_langevin.harness.experiments import run_experiment

BUNDLED = ["stability", "accuracy", "density", "rates", "nn_benchmark", "property_suite"]


def small_stability(**params):
    p = {"dim": 100, "n_iters": 60, "burn_in": 20, "lambdas": [0.1, 0.01],
         "schemes": ["ULA", "kTULA", "tRLMC"]}
    p.update(params)
    return {"experiment": {"kind": "STABILITY_TABLE", "name": "small", "replicates": 3,
                           "base_seed": 11}, "parameters": p}


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_specs_load(name):
    assert bundled_spec_path(name).exists()
    spec = load_spec(name)
    assert spec.name == name and spec.replicates >= 1


def test_presets():
    desk = load_spec("stability", preset="desk")
    paper = load_spec("stability", preset="paper")
    assert (desk.parameters["n_iters"], desk.parameters["burn_in"], desk.replicates) == \
        (20_000, 5_000, 10)
    assert (paper.parameters["n_iters"], paper.parameters["burn_in"], paper.replicates) == \
        (200_000, 50_000, 30)
    assert paper.parameters["dim"] == 100 and paper.parameters["x0_first"] == 200.0
    assert paper.parameters["lambdas"] == [0.1, 0.01, 0.001] and paper.parameters["beta"] == 1.0
    nn = load_spec("nn_benchmark", preset="paper").parameters
    assert (nn["n_train"], nn["n_test"], nn["width"], nn["epochs"], len(nn["seeds"])) == \
        (4000, 1000, 100, 20, 5)


def test_seed_override():
    assert load_spec("rates", seed=99).base_seed == 99


@pytest.mark.parametrize("doc,path", [
    ({"parameters": {}}, "experiment"),
    ({"experiment": {"kind": "NOPE"}}, "experiment.kind"),
    ({"experiment": {"kind": "RATE_CHECK", "replicates": 0}}, "experiment.replicates"),
    ({"experiment": {"kind": "RATE_CHECK", "base_seed": -3}}, "experiment.base_seed"),
    ({"experiment": {"kind": "STABILITY_TABLE"}}, "parameters.n_iters"),
    ({"experiment": {"kind": "RATE_CHECK"}, "extra": {}}, "extra"),
    ({"experiment": {"kind": "RATE_CHECK"}, "parameters": {"schemes": ["kTULA", "euler"]}},
     "parameters.schemes[1]"),
    ({"experiment": {"kind": "RATE_CHECK"}, "parameters": {"n_mc": 0}}, "parameters.n_mc"),
    ({"experiment": {"kind": "NN_BENCHMARK", "preset": "desk"},
      "parameters": {"methods": ["SGD", "lbfgs"]}},
     "parameters.methods[1]"),
    ({"experiment": {"kind": "PROPERTY_SUITE"}, "parameters": {"taming": {"a": "x"}}},
     "parameters.taming.a"),
    ({"experiment": {"kind": "STABILITY_TABLE", "preset": "huge"}}, "experiment.preset"),
])
def test_config_errors_name_the_key(doc, path):
    with pytest.raises(ConfigError) as exc:
        spec_from_dict(doc, source="f.toml")
    assert exc.value.path == f"f.toml:{path}"


def test_burn_in_must_be_below_iterations():
    with pytest.raises(ConfigError, match="burn_in"):
        spec_from_dict(small_stability(burn_in=60))


def test_invalid_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[experiment\nkind = 1")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_spec(p)
    with pytest.raises(ConfigError, match="not found"):
        load_spec(tmp_path / "missing.toml")


def test_env_overrides(monkeypatch):
    monkeypatch.delenv("TAMED_LANGEVIN_THREADS", raising=False)
    assert env_threads() == 1
    monkeypatch.setenv("TAMED_LANGEVIN_THREADS", "3")
    assert env_threads() == 3
    monkeypatch.setenv("TAMED_LANGEVIN_THREADS", "lots")
    with pytest.raises(ConfigError):
        env_threads()
    monkeypatch.setenv("TAMED_LANGEVIN_OUT", "/tmp/x")
    assert env_out() == "/tmp/x"


def test_check_helpers():
    assert in_band("x", 0.5, 0, 1).passed and not in_band("x", None, 0, 1).passed
    assert not in_band("x", float("nan"), 0, 1).passed
    assert all_gating_passed([Check("a", True), Check("b", False, gating=False)])
    assert Check("b", False, gating=False).line().startswith("INFO")


@pytest.fixture(scope="module")
def stability_report():
    return run_experiment(spec_from_dict(small_stability()))


def test_stability_table_shape(stability_report):
    rep = stability_report
    rows = {(a["method"], a["lambda"]): a for a in rep.aggregates}
    assert rows[("ULA", 0.1)]["metric"] == "explosion_iter"
    assert rows[("ULA", 0.1)]["mean"] == 4.0 and rows[("ULA", 0.01)]["mean"] == 4.0
    assert rows[("kTULA", 0.1)]["metric"] == "second_moment_error"
    assert len(rep.records) == 3 * 6
    assert rep.passed
    table = rep.tables["table.csv"].splitlines()
    assert table[0] == "method,metric,lambda,mean,sd,n" and len(table) == 7


def test_aggregates_recomputable_from_records(stability_report):
    rep = stability_report
    for agg in rep.aggregates:
        recs = [r for r in rep.records
                if r["config"]["scheme"] == agg["method"] and r["config"]["lambda"] == agg["lambda"]]
        key = "explosion_iter" if agg["method"] == "ULA" else "second_moment_error"
        vals = [r[key] for r in recs if r[key] is not None]
        assert agg["mean"] == pytest.approx(np.mean(vals), rel=1e-14)
        assert agg["sd"] == pytest.approx(np.std(vals, ddof=1), rel=1e-12, abs=1e-15)


def test_rerun_is_byte_identical(stability_report):
    again = run_experiment(spec_from_dict(small_stability()))
    assert again.numeric_digest() == stability_report.numeric_digest()
    a = json.loads(again.to_json())
    b = json.loads(stability_report.to_json())
    for d in (a, b):
        d["provenance"].pop("timestamp")
    assert a == b


def test_worker_count_does_not_change_numbers(stability_report):
    par = run_experiment(spec_from_dict(small_stability()), threads=2)
    assert par.numeric_digest() == stability_report.numeric_digest()


def test_different_seed_changes_numbers(stability_report):
    doc = small_stability()
    doc["experiment"]["base_seed"] = 12
    assert run_experiment(spec_from_dict(doc)).numeric_digest() != \
        stability_report.numeric_digest()


def test_single_replicate_has_no_sd():
    doc = small_stability(schemes=["kTULA"], lambdas=[0.1])
    doc["experiment"]["replicates"] = 1
    rep = run_experiment(spec_from_dict(doc))
    assert rep.aggregates[0]["sd"] is None
    assert json.loads(rep.to_json())["aggregates"][0]["sd"] is None


def test_report_files(tmp_path, stability_report):
    root = stability_report.write(tmp_path)
    data = json.loads((root / "report.json").read_text())
    assert data["spec"]["experiment"]["kind"] == "STABILITY_TABLE"
    assert data["spec"]["parameters"]["taming"] == {"a": 1.0, "L": 2.0, "ell": 1.0}
    assert set(data["provenance"]) >= {"build_id", "seed", "timestamp"}
    assert data["numeric_digest"] == stability_report.numeric_digest()
    for name in ("table.csv", "replicates.csv", "checks.csv"):
        assert (root / name).exists()


def test_partial_failure_marks_missing(monkeypatch):
    real = experiments._run_sampler_group

    def flaky(params, configs):
        if configs[0].scheme.value == "tRLMC":
            raise RuntimeError("worker died")
        return real(params, configs)

    monkeypatch.setattr(experiments, "_run_sampler_group", flaky)
    rep = run_experiment(spec_from_dict(small_stability(lambdas=[0.1])))
    assert len(rep.missing) == 1 and rep.missing[0]["scheme"] == "tRLMC"
    assert len(rep.missing[0]["seeds"]) == 3
    assert not rep.passed


def test_density_outputs():
    doc = small_stability(schemes=["kTULA"], lambdas=[0.01], n_iters=2000, burn_in=500)
    doc["experiment"]["kind"] = "DENSITY_FIGURE"
    rep = run_experiment(spec_from_dict(doc))
    assert "density_kTULA_lambda0.01.csv" in rep.tables
    assert rep.tables["trace_kTULA_lambda0.01.csv"].startswith("replicate,iteration,sq_norm")


def test_nn_benchmark_small():
    doc = {"experiment": {"kind": "NN_BENCHMARK", "name": "nn"},
           "parameters": {"n_train": 200, "n_test": 50, "width": 10, "epochs": 2,
                          "seeds": [1, 2], "lrs": [0.1, 0.3]}}
    rep = run_experiment(spec_from_dict(doc))
    assert len(rep.records) == 5 * 2 * 2
    assert "summary.csv" in rep.tables and "traces/kTULA_lr0.3_seed1.csv" in rep.tables
    names = {c.name for c in rep.checks}
    assert "nn_kTULA_below_SGD[lr=0.3]" in names and "nn_all_final_mse_below_1" in names


def write_spec(tmp_path, doc, name="s.toml"):
    lines = []
    for table, body in doc.items():
        lines.append(f"[{table}]")
        for k, v in body.items():
            lines.append(f"{k} = {json.dumps(v)}")
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def test_cli_check_passes(tmp_path, capsys):
    assert cli.main(["check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS dissipativity" in out and "FAIL" not in out
    assert (tmp_path / "property_suite" / "report.json").exists()


def test_cli_run_and_env_out(tmp_path, monkeypatch):
    spec = write_spec(tmp_path, small_stability(lambdas=[0.1]))
    monkeypatch.setenv("TAMED_LANGEVIN_OUT", str(tmp_path / "envout"))
    assert cli.main(["run", str(spec), "--threads", "2"]) == 0
    assert (tmp_path / "envout" / "small" / "table.csv").exists()


def test_cli_failed_check_exits_one(tmp_path):
    doc = small_stability(schemes=["kTULA"], lambdas=[0.1], n_iters=300, burn_in=100)
    doc["experiment"]["kind"] = "ACCURACY_TABLE"
    assert cli.main(["run", str(write_spec(tmp_path, doc)), "--out", str(tmp_path)]) == 1


def test_cli_config_errors_exit_two(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.toml")]) == 2
    bad = write_spec(tmp_path, {"experiment": {"kind": "STABILITY_TABLE"}})
    assert cli.main(["run", str(bad)]) == 2
    assert "parameters.n_iters" in capsys.readouterr().err
    assert cli.main(["rates", "euler"]) == 2


@pytest.mark.parametrize("argv", [["check", "--bogus"], ["frobnicate"], ["run"],
                                  ["check", "--seed", "-1"], ["check", "--threads", "0"],
                                  ["check", "--preset", "huge"]])
def test_cli_usage_errors_exit_two(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_cli_quadrature(capsys):
    assert cli.main(["quadrature"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["second_moment"] == pytest.approx(1.0417972964871562, abs=1e-12)
