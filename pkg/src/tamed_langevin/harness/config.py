"""Experiment specs: TOML files with an ``[experiment]`` header and ``[parameters]``.

Presets overlay a named parameter set on top of whatever the file says.
"""

from __future__ import annotations

import copy
import enum
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError

ENV_OUT = "TAMED_LANGEVIN_OUT"
ENV_THREADS = "TAMED_LANGEVIN_THREADS"


class ExperimentKind(str, enum.Enum):
    STABILITY_TABLE = "STABILITY_TABLE"
    ACCURACY_TABLE = "ACCURACY_TABLE"
    DENSITY_FIGURE = "DENSITY_FIGURE"
    RATE_CHECK = "RATE_CHECK"
    NN_BENCHMARK = "NN_BENCHMARK"
    PROPERTY_SUITE = "PROPERTY_SUITE"


SAMPLING_DEFAULTS = {
    "dim": 100,
    "beta": 1.0,
    "x0_first": 200.0,
    "lambdas": [0.1, 0.01, 0.001],
    "schemes": ["ULA", "kTULA", "tRLMC"],
    "trace_every": 10,
    "taming": {"a": 1.0, "L": 2.0, "ell": 1.0},
}

DEFAULTS = {
    ExperimentKind.STABILITY_TABLE: SAMPLING_DEFAULTS,
    ExperimentKind.ACCURACY_TABLE: {**SAMPLING_DEFAULTS, "schemes": ["kTULA", "tRLMC"],
                                    "lambdas": [0.1, 0.01]},
    ExperimentKind.DENSITY_FIGURE: {**SAMPLING_DEFAULTS, "schemes": ["kTULA", "tRLMC"],
                                    "lambdas": [0.01], "bins": 80},
    ExperimentKind.RATE_CHECK: {
        "schemes": ["kTULA", "tRLMC"], "x0": 2.0, "beta": 1.0,
        "lambda_exponents": [4, 5, 6, 7, 8, 9], "n_mc": 100_000, "ref_substeps": 1000,
        "taming": {"a": 1.0, "L": 2.0, "ell": 1.0},
    },
    ExperimentKind.NN_BENCHMARK: {
        "methods": ["SGD", "Adam", "AMSGrad", "kTULA", "tRLMC"], "lrs": [0.1, 0.2, 0.3],
        "input_dim": 20, "teacher_width": 80, "noise_sd": 0.05, "batch_size": 128,
        "beta": 1e6, "a": 1e-2, "ell": 4.0, "eta": 0.05, "momentum": 0.9, "init_sd": 0.1,
        "data_seed": 0, "feature_seed": 12345,
    },
    ExperimentKind.PROPERTY_SUITE: {
        "dims": [1, 10, 100], "lambdas": [0.1, 0.01, 0.001], "n_points": 1000,
        "point_scale": 10.0, "lipschitz_radius": 10.0, "n_pairs": 1000,
        "n_grad_points": 100, "n_noise": 100_000, "noise_lambda": 0.01,
        "taming": {"a": 1.0, "L": 2.0, "ell": 1.0},
    },
}

_SAMPLING_DESK = {"n_iters": 20_000, "burn_in": 5_000, "replicates": 10}
_SAMPLING_PAPER = {"n_iters": 200_000, "burn_in": 50_000, "replicates": 30}

PRESETS = {
    "desk": {
        ExperimentKind.STABILITY_TABLE: _SAMPLING_DESK,
        ExperimentKind.ACCURACY_TABLE: _SAMPLING_DESK,
        ExperimentKind.DENSITY_FIGURE: _SAMPLING_DESK,
        ExperimentKind.RATE_CHECK: {"n_mc": 100_000},
        ExperimentKind.NN_BENCHMARK: {"n_train": 1000, "n_test": 250, "width": 50,
                                      "epochs": 10, "seeds": [1, 2, 3]},
        ExperimentKind.PROPERTY_SUITE: {},
    },
    "paper": {
        ExperimentKind.STABILITY_TABLE: _SAMPLING_PAPER,
        ExperimentKind.ACCURACY_TABLE: _SAMPLING_PAPER,
        ExperimentKind.DENSITY_FIGURE: _SAMPLING_PAPER,
        ExperimentKind.RATE_CHECK: {"n_mc": 100_000},
        ExperimentKind.NN_BENCHMARK: {"n_train": 4000, "n_test": 1000, "width": 100,
                                      "epochs": 20, "seeds": [1, 2, 3, 4, 5]},
        ExperimentKind.PROPERTY_SUITE: {},
    },
}

# keys every kind needs after defaults and presets are applied
REQUIRED = {
    ExperimentKind.STABILITY_TABLE: ["n_iters", "burn_in"],
    ExperimentKind.ACCURACY_TABLE: ["n_iters", "burn_in"],
    ExperimentKind.DENSITY_FIGURE: ["n_iters", "burn_in"],
    ExperimentKind.RATE_CHECK: [],
    ExperimentKind.NN_BENCHMARK: ["n_train", "n_test", "width", "epochs", "seeds"],
    ExperimentKind.PROPERTY_SUITE: [],
}


@dataclass
class ExperimentSpec:
    kind: ExperimentKind
    name: str
    parameters: dict = field(default_factory=dict)
    replicates: int = 1
    base_seed: int = 0
    preset: str | None = None

    def to_dict(self) -> dict:
        return {"experiment": {"kind": self.kind.value, "name": self.name,
                               "replicates": self.replicates, "base_seed": self.base_seed,
                               "preset": self.preset},
                "parameters": copy.deepcopy(self.parameters)}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def spec_from_dict(doc: dict, preset: str | None = None, seed: int | None = None,
                   source: str = "<spec>") -> ExperimentSpec:
    exp = doc.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError(f"{source}:experiment", "missing [experiment] table")
    unknown = set(doc) - {"experiment", "parameters"}
    if unknown:
        raise ConfigError(f"{source}:{sorted(unknown)[0]}", "unknown top-level table")
    try:
        kind = ExperimentKind(str(exp.get("kind", "")).upper())
    except ValueError:
        raise ConfigError(f"{source}:experiment.kind",
                          f"must be one of {[k.value for k in ExperimentKind]}") from None
    params = doc.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{source}:parameters", "must be a table")
    replicates = exp.get("replicates", 1)
    base_seed = exp.get("base_seed", 0) if seed is None else seed
    preset = preset if preset is not None else exp.get("preset")

    merged = _merge(DEFAULTS[kind], params)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"{source}:experiment.preset", f"unknown preset {preset!r}")
        over = dict(PRESETS[preset][kind])
        if "replicates" in over:
            replicates = over.pop("replicates")
        merged = _merge(merged, over)

    if not isinstance(replicates, int) or isinstance(replicates, bool) or replicates < 1:
        raise ConfigError(f"{source}:experiment.replicates", "must be an integer >= 1")
    if not isinstance(base_seed, int) or not 0 <= base_seed < 2**64:
        raise ConfigError(f"{source}:experiment.base_seed", "must be an unsigned 64-bit integer")
    for key in REQUIRED[kind]:
        if key not in merged:
            raise ConfigError(f"{source}:parameters.{key}", "required (set it or pass --preset)")
    _validate(kind, merged, source)
    return ExperimentSpec(kind=kind, name=str(exp.get("name", kind.value.lower())),
                          parameters=merged, replicates=replicates, base_seed=base_seed,
                          preset=preset)


def _validate(kind: ExperimentKind, p: dict, source: str) -> None:
    def need(key, ok, msg):
        if key in p and not ok(p[key]):
            raise ConfigError(f"{source}:parameters.{key}", msg)

    pos_int = lambda v: isinstance(v, int) and not isinstance(v, bool) and v > 0
    need("dim", pos_int, "must be a positive integer")
    need("n_iters", pos_int, "must be a positive integer")
    need("burn_in", lambda v: isinstance(v, int) and 0 <= v < p.get("n_iters", v + 1),
         "must satisfy 0 <= burn_in < n_iters")
    need("beta", lambda v: isinstance(v, (int, float)) and v > 0, "must be positive")
    need("lambdas", lambda v: isinstance(v, list) and v and all(0 < x < 1 for x in v),
         "must be a non-empty list in (0, 1)")
    need("n_mc", pos_int, "must be a positive integer")
    need("epochs", lambda v: isinstance(v, int) and v >= 0, "must be a non-negative integer")
    need("seeds", lambda v: isinstance(v, list) and v and all(isinstance(s, int) for s in v),
         "must be a non-empty list of integers")
    from ..samplers import Scheme
    from ..optim import Method
    for key, parse in (("schemes", Scheme.parse), ("methods", Method.parse)):
        for i, name in enumerate(p.get(key, [])):
            try:
                parse(name)
            except ValueError as exc:
                raise ConfigError(f"{source}:parameters.{key}[{i}]", str(exc)) from None
    tam = p.get("taming")
    if tam is not None:
        for k in ("a", "L", "ell"):
            if k not in tam or not isinstance(tam[k], (int, float)):
                raise ConfigError(f"{source}:parameters.taming.{k}", "must be a number")


def bundled_spec_path(name: str) -> Path:
    ref = resources.files("tamed_langevin") / "specs" / f"{name}.toml"
    return Path(str(ref))


def load_spec(path, preset: str | None = None, seed: int | None = None) -> ExperimentSpec:
    """Read a spec file; a bare name like ``stability`` resolves to a bundled spec."""
    p = Path(path)
    if not p.exists() and p.suffix == "":
        p = bundled_spec_path(str(path))
    if not p.exists():
        raise ConfigError(str(path), "spec file not found")
    try:
        doc = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(p), f"invalid TOML: {exc}") from None
    return spec_from_dict(doc, preset=preset, seed=seed, source=str(p))


def env_threads(default: int = 1) -> int:
    raw = os.environ.get(ENV_THREADS)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(ENV_THREADS, f"not an integer: {raw!r}") from None
    if n < 1:
        raise ConfigError(ENV_THREADS, "must be >= 1")
    return n


def env_out(default: str = "out") -> str:
    return os.environ.get(ENV_OUT, default)
