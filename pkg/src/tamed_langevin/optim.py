"""Baseline optimisers and the fixed-feature network benchmark.

SGD with momentum, Adam and AMSGrad follow the PyTorch update conventions.
The Langevin optimisers run one kTULA or tRLMC step with the mini-batch
gradient as drift.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diagnostics import mean_sd
from .drifts import Dataset, DriftSpec, FixedFeatureNet, nn_objective
from .errors import ParameterError
from .rng import make_rng, replicate_seed
from .samplers import NoisePair, draw_noise_pairs, trlmc_step
from .taming import tame

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    SGD_MOMENTUM = "SGD"
    ADAM = "Adam"
    AMSGRAD = "AMSGrad"
    KTULA = "kTULA"
    TRLMC = "tRLMC"

    @classmethod
    def parse(cls, name) -> "Method":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "_")
        for m in cls:
            if key in (m.value.lower(), m.name.lower()):
                return m
        raise ParameterError(f"unknown method {name!r}")

    @property
    def is_langevin(self) -> bool:
        return self in (Method.KTULA, Method.TRLMC)


@dataclass(frozen=True)
class OptimizerConfig:
    method: Method
    lr: float
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    beta_inv_temp: float = 1e6
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    init_sd: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.method.is_langevin and not self.beta_inv_temp >= 1:
            raise ParameterError(f"beta must be >= 1 for Langevin methods, got {self.beta_inv_temp}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return {"method": self.method.value, "lr": self.lr, "momentum": self.momentum,
                "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
                "adam_eps": self.adam_eps, "beta_inv_temp": self.beta_inv_temp,
                "epochs": self.epochs, "batch_size": self.batch_size, "seed": self.seed,
                "init_sd": self.init_sd}


@dataclass
class OptState:
    theta: np.ndarray
    t: int = 0
    velocity: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    v_max: Optional[np.ndarray] = None
    skipped: int = 0
    rng: Optional[np.random.Generator] = field(default=None, repr=False)

    @classmethod
    def zeros_like(cls, theta, rng=None) -> "OptState":
        theta = np.array(theta, dtype=float)
        z = np.zeros_like(theta)
        return cls(theta=theta, velocity=z.copy(), m=z.copy(), v=z.copy(), v_max=z.copy(),
                   rng=rng)


def _check(state: OptState, grad) -> bool:
    grad = np.asarray(grad)
    if grad.shape != state.theta.shape:
        raise ParameterError(f"gradient shape {grad.shape} != parameter shape {state.theta.shape}")
    if not np.all(np.isfinite(grad)):
        state.skipped += 1
        return False
    return True


def sgd_momentum_step(state: OptState, grad, config: OptimizerConfig) -> OptState:
    if _check(state, grad):
        state.velocity = config.momentum * state.velocity + grad
        state.theta = state.theta - config.lr * state.velocity
        state.t += 1
    return state


def adam_step(state: OptState, grad, config: OptimizerConfig, amsgrad: bool = False) -> OptState:
    if not _check(state, grad):
        return state
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    second = state.v
    if amsgrad:
        state.v_max = np.maximum(state.v_max, state.v)
        second = state.v_max
    bc1 = 1 - b1**state.t
    bc2 = 1 - b2**state.t
    denom = np.sqrt(second / bc2) + config.adam_eps
    state.theta = state.theta - config.lr / bc1 * state.m / denom
    return state


def amsgrad_step(state: OptState, grad, config: OptimizerConfig) -> OptState:
    return adam_step(state, grad, config, amsgrad=True)


def langevin_optimizer_step(state: OptState, objective: DriftSpec, config: OptimizerConfig,
                            noise=None) -> OptState:
    """One kTULA or tRLMC step on ``objective`` (usually a mini-batch view).

    ``noise`` overrides the Gaussian draw: a vector for kTULA, a
    :class:`NoisePair` for tRLMC.
    """
    lam, beta = config.lr, config.beta_inv_temp
    tamed = tame(objective, lam)
    d = state.theta.shape[0]
    if config.method is Method.KTULA:
        xi = state.rng.standard_normal(d) if noise is None else noise
        new = state.theta - lam * tamed(state.theta) + math.sqrt(2 * lam / beta) * xi
    elif config.method is Method.TRLMC:
        if noise is None:
            tau, dW_tau, dW = draw_noise_pairs(state.rng, lam, d, 1)
            noise = NoisePair(float(tau[0]), dW_tau[0], dW[0])
        new = trlmc_step(state.theta, tamed, beta, noise)
    else:
        raise ParameterError(f"{config.method.value} is not a Langevin method")
    if np.all(np.isfinite(new)):
        state.theta = new
        state.t += 1
    else:
        state.skipped += 1
    return state


@dataclass
class TrainTrace:
    """Per-epoch metrics; ``initial`` holds the same metrics before training."""

    train_objective: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    param_norm: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)

    def record(self, train_obj: float, test_mse: float, norm: float) -> None:
        self.train_objective.append(train_obj)
        self.test_mse.append(test_mse)
        self.param_norm.append(norm)

    @property
    def final_test_mse(self) -> float:
        return self.test_mse[-1] if self.test_mse else self.initial["test_mse"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_objective", "test_mse", "param_norm"])
        w.writerow([0, repr(self.initial["train_objective"]), repr(self.initial["test_mse"]),
                    repr(self.initial["param_norm"])])
        for k, row in enumerate(zip(self.train_objective, self.test_mse, self.param_norm), 1):
            w.writerow([k] + [repr(float(v)) for v in row])
        return buf.getvalue()


def test_mse(net: FixedFeatureNet, theta, data: Dataset) -> float:
    r = data.y - net.predict(theta, data.z)
    return float(np.mean(r * r))


test_mse.__test__ = False  # not a pytest test


def batch_schedule(seed: int, n: int, batch_size: int, epochs: int):
    """Mini-batch index arrays for every epoch, shared by all methods for a seed."""
    rng = make_rng(replicate_seed(seed, 0))
    for _ in range(epochs):
        perm = rng.permutation(n)
        yield [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def initial_theta(seed: int, dim: int, sd: float) -> np.ndarray:
    return sd * make_rng(seed).standard_normal(dim)


def train(objective: DriftSpec, net: FixedFeatureNet, test: Dataset,
          config: OptimizerConfig) -> TrainTrace:
    """Train from a seeded Gaussian initialisation, recording per-epoch metrics."""
    if objective.n_data is None:
        raise ParameterError(f"objective {objective.name!r} is not data-driven")
    n = objective.n_data
    state = OptState.zeros_like(
        initial_theta(config.seed, objective.dim, config.init_sd),
        rng=make_rng(replicate_seed(config.seed, 1)),
    )
    trace = TrainTrace()
    th = state.theta
    trace.initial = {"train_objective": objective.eval_u(th), "test_mse": test_mse(net, th, test),
                     "param_norm": float(np.linalg.norm(th))}
    method = config.method
    with np.errstate(over="ignore", invalid="ignore"):
        for batches in batch_schedule(config.seed, n, config.batch_size, config.epochs):
            for idx in batches:
                if method.is_langevin:
                    langevin_optimizer_step(state, objective.minibatch(idx), config)
                    continue
                g = objective.subset_h(state.theta, idx)
                if method is Method.SGD_MOMENTUM:
                    sgd_momentum_step(state, g, config)
                elif method is Method.ADAM:
                    adam_step(state, g, config)
                else:
                    amsgrad_step(state, g, config)
            th = state.theta
            trace.record(objective.eval_u(th), test_mse(net, th, test), float(np.linalg.norm(th)))
    if state.skipped:
        log.warning("%s lr=%g seed=%d skipped %d non-finite steps",
                    method.value, config.lr, config.seed, state.skipped)
    return trace


@dataclass
class BenchmarkCell:
    config: OptimizerConfig
    trace: Optional[TrainTrace]
    error: Optional[str] = None

    @property
    def final_test_mse(self) -> float:
        return self.trace.final_test_mse if self.trace is not None else float("nan")


@dataclass
class BenchmarkResult:
    cells: list

    def summary_rows(self) -> list[dict]:
        groups: dict = {}
        for c in self.cells:
            groups.setdefault((c.config.method.value, c.config.lr), []).append(c)
        rows = []
        for (method, lr), cells in groups.items():
            vals = [c.final_test_mse for c in cells
                    if c.trace is not None and math.isfinite(c.final_test_mse)]
            mean, sd = mean_sd(vals)
            rows.append({"method": method, "lr": lr, "mean_final_test_mse": mean,
                         "sd_final_test_mse": sd, "n_seeds": len(vals),
                         "n_failed": len(cells) - len(vals)})
        return rows

    def mean_final(self, method, lr) -> Optional[float]:
        method = Method.parse(method).value
        for row in self.summary_rows():
            if row["method"] == method and math.isclose(row["lr"], lr):
                return row["mean_final_test_mse"]
        return None

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "lr", "mean_final_test_mse", "sd_final_test_mse", "n_seeds",
                    "n_failed"])
        for r in self.summary_rows():
            w.writerow([r["method"], repr(r["lr"]), _fmt(r["mean_final_test_mse"]),
                        _fmt(r["sd_final_test_mse"]), r["n_seeds"], r["n_failed"]])
        return buf.getvalue()


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def run_benchmark(train_data: Dataset, test_data: Dataset, net: FixedFeatureNet,
                  configs: Sequence[OptimizerConfig], a: float = 1e-2,
                  ell: float = 4.0) -> BenchmarkResult:
    """Train every config; failures are recorded per cell and do not stop the run."""
    objective = nn_objective(train_data, net, a=a, ell=ell)
    cells = []
    for cfg in configs:
        try:
            cells.append(BenchmarkCell(cfg, train(objective, net, test_data, cfg)))
        except (ArithmeticError, ParameterError, FloatingPointError) as exc:
            log.error("benchmark cell %s failed: %s", cfg.to_dict(), exc)
            cells.append(BenchmarkCell(cfg, None, repr(exc)))
    return BenchmarkResult(cells)


def config_grid(methods, lrs, seeds, **common) -> list[OptimizerConfig]:
    return [OptimizerConfig(method=m, lr=lr, seed=s, **common)
            for m in methods for lr in lrs for s in seeds]
