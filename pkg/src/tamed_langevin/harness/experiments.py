"""Run an ExperimentSpec, assemble an ExperimentReport and write its files.

Replicates run in worker processes when ``threads > 1``. Every replicate owns
its generator, so the split across workers never changes the numbers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from ..diagnostics import (density_histogram, error_rates, mean_sd, quadrature_second_moment,
                           second_moment_error, sign_balance)
from ..drifts import FixedFeatureNet, double_well, teacher_student_data
from ..optim import Method, config_grid, run_benchmark
from ..rng import replicate_seed
from ..samplers import SamplerConfig, Scheme, run_chains
from . import checks as C
from .config import ExperimentKind, ExperimentSpec

log = logging.getLogger(__name__)


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    records: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    timestamp: str = ""

    @property
    def passed(self) -> bool:
        return C.all_gating_passed(self.checks) and not self.missing

    def numeric_payload(self) -> dict:
        return {"records": self.records, "aggregates": self.aggregates,
                "checks": [c.to_dict() for c in self.checks], "missing": self.missing}

    def numeric_digest(self) -> str:
        blob = json.dumps(_jsonable(self.numeric_payload()), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def provenance(self) -> dict:
        return {"build_id": f"tamed_langevin-{__version__}", "seed": self.spec.base_seed,
                "timestamp": self.timestamp, "python": platform.python_version(),
                "numpy": np.__version__}

    def to_dict(self) -> dict:
        return _jsonable({"spec": self.spec.to_dict(), "provenance": self.provenance(),
                          **self.numeric_payload(), "passed": self.passed,
                          "numeric_digest": self.numeric_digest()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, out_dir) -> Path:
        """Write ``report.json`` and every table under ``out_dir/<name>``."""
        root = Path(out_dir) / self.spec.name
        root.mkdir(parents=True, exist_ok=True)
        (root / "report.json").write_text(self.to_json() + "\n")
        for rel, text in self.tables.items():
            p = root / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        return root


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating))
                                          else v) for v in r])
    return buf.getvalue()


def _map(fn, tasks, threads: int):
    """Apply ``fn`` to each task tuple; exceptions come back as values."""
    def safe(t):
        try:
            return fn(*t)
        except Exception as exc:  # recorded as a missing cell
            log.error("task failed: %r", exc)
            return exc
    if threads <= 1 or len(tasks) <= 1:
        return [safe(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        futs = [pool.submit(fn, *t) for t in tasks]
        out = []
        for f in futs:
            try:
                out.append(f.result())
            except Exception as exc:
                log.error("task failed: %r", exc)
                out.append(exc)
        return out


def _chunks(seq, n):
    n = max(1, min(n, len(seq)))
    k, m = divmod(len(seq), n)
    out, i = [], 0
    for j in range(n):
        step = k + (1 if j < m else 0)
        out.append(seq[i:i + step])
        i += step
    return out


# ---------------------------------------------------------------------------
# sampling experiments


def _drift(p):
    t = p["taming"]
    return double_well(p["dim"], a=t["a"], L=t["L"], ell=t["ell"])


def _run_sampler_group(params: dict, configs: list):
    return run_chains(configs, _drift(params))


def sampling_cells(spec: ExperimentSpec):
    """``(scheme, lam, configs)`` per cell; cell ``c`` replicate ``r`` uses seed
    ``replicate_seed(replicate_seed(base, c), r)``."""
    p = spec.parameters
    x0 = np.zeros(p["dim"])
    x0[0] = p["x0_first"]
    cells = []
    for c, (scheme, lam) in enumerate((Scheme.parse(s), lam)
                                      for s in p["schemes"] for lam in p["lambdas"]):
        cell_seed = replicate_seed(spec.base_seed, c)
        cfgs = [SamplerConfig(scheme=scheme, lam=lam, beta=p["beta"], n_iters=p["n_iters"],
                              x0=x0, burn_in=p["burn_in"], seed=replicate_seed(cell_seed, r),
                              trace_every=p["trace_every"])
                for r in range(spec.replicates)]
        cells.append((scheme, lam, cfgs))
    return cells


def _run_sampling(spec: ExperimentSpec, threads: int):
    cells = sampling_cells(spec)
    tasks, owners = [], []
    for ci, (_, _, cfgs) in enumerate(cells):
        for chunk in _chunks(cfgs, threads):
            tasks.append((spec.parameters, chunk))
            owners.append(ci)
    results = _map(_run_sampler_group, tasks, threads)
    by_cell = {ci: [] for ci in range(len(cells))}
    missing = []
    for ci, task, res in zip(owners, tasks, results):
        scheme, lam, _ = cells[ci]
        if isinstance(res, Exception):
            missing.append({"scheme": scheme.value, "lambda": lam,
                            "seeds": [c.seed for c in task[1]], "error": repr(res)})
        else:
            by_cell[ci].extend(res)
    return [(s, lam, by_cell[ci]) for ci, (s, lam, _) in enumerate(cells)], missing


def _sampling_report(spec: ExperimentSpec, threads: int, accuracy: bool, stability: bool,
                     report: ExperimentReport):
    ref = quadrature_second_moment(spec.parameters["beta"])
    cells, report.missing = _run_sampling(spec, threads)
    rows = []
    for scheme, lam, recs in cells:
        errs = []
        for r, rec in enumerate(recs):
            s = rec.summary()
            s["replicate"] = r
            s["second_moment_error"] = None if rec.exploded or not rec.n_samples else \
                second_moment_error(rec, ref)
            if s["second_moment_error"] is not None:
                errs.append(s["second_moment_error"])
            report.records.append(s)
        if scheme is Scheme.ULA:
            times = [rec.explosion_iter for rec in recs if rec.exploded]
            mean, sd = mean_sd(times)
            agg = {"method": scheme.value, "metric": "explosion_iter", "lambda": lam,
                   "mean": mean, "sd": sd, "n": len(times), "n_stable": len(recs) - len(times)}
            report.aggregates.append(agg)
            if stability:
                ok = len(times) == len(recs) and all(
                    C.EXPLOSION_BAND[0] <= t <= C.EXPLOSION_BAND[1] for t in times)
                report.checks.append(C.Check(
                    f"ula_explodes[lambda={lam:g}]", ok and bool(recs), mean,
                    f"every replicate in [{C.EXPLOSION_BAND[0]}, {C.EXPLOSION_BAND[1]}]",
                    f"times={times}, stable={len(recs) - len(times)}"))
        else:
            mean, sd = mean_sd(errs)
            n_exploded = sum(rec.exploded for rec in recs)
            agg = {"method": scheme.value, "metric": "second_moment_error", "lambda": lam,
                   "mean": mean, "sd": sd, "n": len(errs), "n_exploded": n_exploded}
            finite = [rec for rec in recs if not rec.exploded]
            bal = sign_balance(finite) if finite else None
            agg["sign_balance"] = bal
            report.aggregates.append(agg)
            if stability:
                report.checks.append(C.Check(
                    f"{scheme.value}_finite[lambda={lam:g}]",
                    n_exploded == 0 and all(rec.iters_done == rec.config.n_iters for rec in recs)
                    and bool(recs),
                    float(n_exploded), "0 explosions", f"replicates={len(recs)}"))
            if accuracy:
                band = C.accuracy_band(scheme.value, lam)
                if band is not None:
                    report.checks.append(C.in_band(
                        f"{scheme.value}_second_moment_error[lambda={lam:g}]", mean, *band,
                        f"sd={sd}, n={len(errs)}"))
                if math.isclose(lam, 0.01):
                    report.checks.append(C.in_band(
                        f"{scheme.value}_sign_balance[lambda={lam:g}]", bal,
                        *C.SIGN_BALANCE_BAND))
        rows.append(agg)
    report.tables["table.csv"] = _csv(
        ["method", "metric", "lambda", "mean", "sd", "n"],
        [[a["method"], a["metric"], a["lambda"], a["mean"], a["sd"], a["n"]] for a in rows])
    report.tables["replicates.csv"] = _csv(
        ["method", "lambda", "replicate", "seed", "exploded", "explosion_iter", "iters_done",
         "second_moment_error"],
        [[r["config"]["scheme"], r["config"]["lambda"], r["replicate"], r["config"]["seed"],
          int(r["exploded"]), r["explosion_iter"], r["iters_done"], r["second_moment_error"]]
         for r in report.records])
    return cells, ref


def _density_report(spec: ExperimentSpec, threads: int, report: ExperimentReport):
    cells, ref = _sampling_report(spec, threads, accuracy=False, stability=False,
                                  report=report)
    bins = spec.parameters.get("bins", 80)
    for scheme, lam, recs in cells:
        finite = [r for r in recs if not r.exploded]
        if not finite:
            continue
        tag = f"{scheme.value}_lambda{lam:g}"
        hist = density_histogram(finite, ref, bins=bins)
        report.tables[f"density_{tag}.csv"] = _csv(
            list(hist.keys()), list(zip(*hist.values())))
        trace_rows = []
        for r, rec in enumerate(finite):
            trace_rows += [[r, int(i), float(v)] for i, v in zip(rec.trace_iters, rec.sq_norm_trace)]
        report.tables[f"trace_{tag}.csv"] = _csv(["replicate", "iteration", "sq_norm"], trace_rows)
        bal = sign_balance(finite)
        report.checks.append(C.in_band(f"{scheme.value}_sign_balance[lambda={lam:g}]", bal,
                                       *C.SIGN_BALANCE_BAND))


# ---------------------------------------------------------------------------
# rates


def _run_rates(params: dict, scheme: str, seed: int):
    t = params["taming"]
    drift = double_well(1, a=t["a"], L=t["L"], ell=t["ell"])
    lambdas = [2.0 ** -k for k in params["lambda_exponents"]]
    return error_rates(scheme, drift, [params["x0"]], lambdas, params["n_mc"], seed,
                       beta=params["beta"], substeps=params["ref_substeps"])


def rate_checks(weak, strong) -> list:
    out = []
    for est, band in ((weak, C.WEAK_SLOPE_BAND), (strong, C.STRONG_SLOPE_BAND)):
        name = f"{est.scheme}_{est.kind}_slope"
        out.append(C.in_band(name, est.slope, *band, f"r_squared={est.r_squared:.4f}"))
        out.append(C.Check(f"{est.scheme}_{est.kind}_r_squared",
                           est.r_squared >= C.MIN_R_SQUARED, est.r_squared,
                           f">={C.MIN_R_SQUARED}", f"flagged={int(np.sum(est.flagged))}"))
    return out


def _rates_report(spec: ExperimentSpec, threads: int, report: ExperimentReport):
    p = spec.parameters
    schemes = [Scheme.parse(s).value for s in p["schemes"]]
    tasks = [(p, s, replicate_seed(spec.base_seed, i)) for i, s in enumerate(schemes)]
    for s, res in zip(schemes, _map(_run_rates, tasks, threads)):
        if isinstance(res, Exception):
            report.missing.append({"scheme": s, "error": repr(res)})
            continue
        for est in res:
            report.records.append({"scheme": s, "kind": est.kind,
                                   "lambdas": est.lambdas.tolist(), "errors": est.errors.tolist(),
                                   "stderrs": est.stderrs.tolist(),
                                   "flagged": [bool(f) for f in est.flagged]})
            report.aggregates.append(est.summary())
            report.tables[f"rate_{s}_{est.kind}.csv"] = est.to_csv()
        report.checks += rate_checks(*res)


# ---------------------------------------------------------------------------
# neural-network benchmark


def nn_setup(p: dict):
    train_d, test_d = teacher_student_data(p["data_seed"], p["n_train"], p["n_test"],
                                           p["input_dim"], p["teacher_width"], p["noise_sd"])
    net = FixedFeatureNet.random(p["input_dim"], p["width"], seed=p["feature_seed"],
                                 reg_eta=p["eta"])
    return train_d, test_d, net


def _nn_configs(p: dict, seed_offset: int):
    seeds = [(s + seed_offset) % 2**64 for s in p["seeds"]]
    return config_grid(p["methods"], p["lrs"], seeds,
                       momentum=p["momentum"], beta_inv_temp=p["beta"], epochs=p["epochs"],
                       batch_size=p["batch_size"], init_sd=p["init_sd"])


def _run_nn_group(p: dict, configs: list):
    train_d, test_d, net = nn_setup(p)
    return run_benchmark(train_d, test_d, net, configs, a=p["a"], ell=p["ell"]).cells


def nn_checks(result) -> list:
    out = []
    k, s = result.mean_final("kTULA", 0.3), result.mean_final("SGD", 0.3)
    if k is not None and s is not None:
        out.append(C.Check("nn_kTULA_below_SGD[lr=0.3]", k < s, k - s, "kTULA - SGD < 0",
                           f"kTULA={k:.6g}, SGD={s:.6g}"))
    finals = [c.final_test_mse for c in result.cells]
    worst = max(finals) if finals else math.nan
    ok = bool(finals) and all(math.isfinite(v) and v < 1.0 for v in finals)
    out.append(C.Check("nn_all_final_mse_below_1", ok, worst, "<1.0",
                       f"cells={len(finals)}"))

    def max_norm(method, lr):
        vals = [max(c.trace.param_norm) for c in result.cells
                if c.trace is not None and c.trace.param_norm
                and c.config.method is Method.parse(method) and math.isclose(c.config.lr, lr)]
        return max(vals) if vals else None

    adam = max_norm("Adam", 0.1)
    for m in ("kTULA", "tRLMC"):
        v = max_norm(m, 0.1)
        if adam is not None and v is not None:
            out.append(C.Check(f"nn_{m}_norm_below_Adam[lr=0.1]", v < adam, v,
                               f"<{adam:.6g}", "max parameter norm over epochs"))
    return out


def _nn_report(spec: ExperimentSpec, threads: int, report: ExperimentReport):
    from ..optim import BenchmarkResult
    p = spec.parameters
    configs = _nn_configs(p, spec.base_seed)
    chunks = _chunks(configs, threads)
    cells = []
    for chunk, res in zip(chunks, _map(_run_nn_group, [(p, ch) for ch in chunks], threads)):
        if isinstance(res, Exception):
            report.missing += [{"config": c.to_dict(), "error": repr(res)} for c in chunk]
        else:
            cells += res
    result = BenchmarkResult(cells)
    for c in cells:
        rec = {"config": c.config.to_dict(), "error": c.error,
               "final_test_mse": c.final_test_mse}
        if c.trace is not None:
            rec["test_mse"] = c.trace.test_mse
            rec["param_norm"] = c.trace.param_norm
            rec["train_objective"] = c.trace.train_objective
            tag = f"{c.config.method.value}_lr{c.config.lr:g}_seed{c.config.seed}"
            report.tables[f"traces/{tag}.csv"] = c.trace.to_csv()
        report.records.append(rec)
    report.aggregates = result.summary_rows()
    report.tables["summary.csv"] = result.summary_csv()
    report.checks += nn_checks(result)
    return result


# ---------------------------------------------------------------------------


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentReport:
    report = ExperimentReport(spec=spec,
                              timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"))
    kind = spec.kind
    if kind is ExperimentKind.STABILITY_TABLE:
        _sampling_report(spec, threads, accuracy=False, stability=True, report=report)
    elif kind is ExperimentKind.ACCURACY_TABLE:
        _sampling_report(spec, threads, accuracy=True, stability=False, report=report)
    elif kind is ExperimentKind.DENSITY_FIGURE:
        _density_report(spec, threads, report)
    elif kind is ExperimentKind.RATE_CHECK:
        _rates_report(spec, threads, report)
    elif kind is ExperimentKind.NN_BENCHMARK:
        _nn_report(spec, threads, report)
    elif kind is ExperimentKind.PROPERTY_SUITE:
        report.checks = C.property_suite(spec.parameters, spec.base_seed)
        report.records = [c.to_dict() for c in report.checks]
    report.tables.setdefault("checks.csv", _csv(
        ["name", "status", "value", "target", "detail"],
        [[c.name, ("PASS" if c.passed else "FAIL") if c.gating else "INFO", c.value, c.target,
          c.detail] for c in report.checks]))
    return report


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)
