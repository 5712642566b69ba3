"""One-step kernels and chains for ULA, kTULA, tRLMC and a fine-step reference.

All kernels discretise ``dX = -h(X) dt + sqrt(2/beta) dW``. Kernels accept a
single state of shape ``(d,)`` or a batch ``(n, d)``; noise arguments must
broadcast against the state.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .drifts import DriftSpec
from .errors import DiagnosticError, ParameterError
from .rng import make_rng
from .taming import TamedDrift, lambda_max_ktula, lambda_max_trlmc_computable, tame

log = logging.getLogger(__name__)

EXPLOSION_NORM = 1e300
NOISE_BLOCK = 2048


class Scheme(str, enum.Enum):
    ULA = "ULA"
    KTULA = "kTULA"
    TRLMC = "tRLMC"
    REFERENCE = "REFERENCE"

    @classmethod
    def parse(cls, name) -> "Scheme":
        if isinstance(name, cls):
            return name
        for s in cls:
            if s.value.lower() == str(name).lower():
                return s
        raise ParameterError(f"unknown scheme {name!r}; expected one of {[s.value for s in cls]}")


@dataclass(frozen=True)
class SamplerConfig:
    scheme: Scheme
    lam: float
    beta: float
    n_iters: int
    x0: tuple
    burn_in: int = 0
    seed: int = 0
    ref_substeps: int = 1000
    trace_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))
        if not 0.0 < self.lam < 1.0:
            raise ParameterError(f"lambda must lie in (0, 1), got {self.lam}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if self.n_iters < 1 or not 0 <= self.burn_in < self.n_iters:
            raise ParameterError(
                f"need 0 <= burn_in < n_iters, got burn_in={self.burn_in}, n_iters={self.n_iters}"
            )
        if not 0 <= self.seed < 2**64:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.ref_substeps < 1 or self.trace_every < 1:
            raise ParameterError("ref_substeps and trace_every must be positive")

    @property
    def dim(self) -> int:
        return len(self.x0)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value, "lambda": self.lam, "beta": self.beta,
            "n_iters": self.n_iters, "burn_in": self.burn_in, "seed": self.seed,
            "x0": list(self.x0), "ref_substeps": self.ref_substeps,
            "trace_every": self.trace_every,
        }


@dataclass(frozen=True)
class NoisePair:
    """Brownian increments over ``[0, tau*lam]`` and ``[0, lam]`` on one path."""

    tau: float
    dW_tau: np.ndarray
    dW: np.ndarray


def draw_noise_pairs(rng: np.random.Generator, lam: float, dim: int, n: int):
    """``n`` independent noise pairs as arrays ``tau (n,)``, ``dW_tau, dW (n, d)``."""
    tau = rng.random(n)
    xi = rng.standard_normal((n, 2, dim))
    dW_tau = np.sqrt(tau * lam)[:, None] * xi[:, 0]
    dW = dW_tau + np.sqrt((1.0 - tau) * lam)[:, None] * xi[:, 1]
    return tau, dW_tau, dW


def draw_noise_pair(rng: np.random.Generator, lam: float, dim: int) -> NoisePair:
    tau, dW_tau, dW = draw_noise_pairs(rng, lam, dim, 1)
    return NoisePair(float(tau[0]), dW_tau[0], dW[0])


def ula_step(x, drift: DriftSpec, lam: float, beta: float, noise):
    return x - lam * drift.eval_h(x) + math.sqrt(2.0 * lam / beta) * noise


def ktula_step(x, tamed: TamedDrift, beta: float, noise):
    lam = tamed.lam
    return x - lam * tamed(x) + math.sqrt(2.0 * lam / beta) * noise


def trlmc_step(x, tamed: TamedDrift, beta: float, np_: NoisePair):
    """Randomised midpoint step: drift evaluated at an interpolated state.

    ``np_.tau`` may be a scalar or an array of shape ``(n,)`` for batches.
    """
    lam = tamed.lam
    sigma = math.sqrt(2.0 / beta)
    tau = np.asarray(np_.tau, dtype=float)
    if tau.ndim:
        tau = tau[:, None]
    mid = x - lam * tamed(x) * tau + sigma * np_.dW_tau
    return x - lam * tamed(mid) + sigma * np_.dW


def reference_step(x, drift: DriftSpec, lam: float, beta: float, increments):
    """Integrate over time ``lam`` with ``len(increments)`` tamed Euler substeps.

    ``increments[k]`` is the Brownian increment of substep ``k`` (variance
    ``lam / substeps``); their sum is the aggregate increment over the step.
    Taming uses the inner step size.
    """
    increments = np.asarray(increments, dtype=float)
    m = increments.shape[0]
    inner = tame(drift, lam / m)
    sigma = math.sqrt(2.0 / beta)
    y = np.array(x, dtype=float)
    for k in range(m):
        y = y - inner.lam * inner(y) + sigma * increments[k]
    if not np.all(np.isfinite(y)):
        raise DiagnosticError(f"reference integrator produced a non-finite state (lambda={lam}, substeps={m})")
    return y


def coupled_reference(x, drift: DriftSpec, lam: float, beta: float, substeps: int,
                      rng: np.random.Generator, n: int):
    """Reference step for ``n`` coupled copies, streaming the Brownian path.

    Returns ``(y, tau, W_tau, W_lam)`` where ``W_lam`` is the aggregate
    increment the reference consumed and ``W_tau`` is the same path sampled at
    the uniform time ``tau*lam`` via a Brownian bridge, so a scheme fed
    ``(tau, W_tau, W_lam)`` shares the reference's path exactly.
    """
    if substeps < 1:
        raise ParameterError("substeps must be positive")
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    inner = tame(drift, lam / substeps)
    delta = inner.lam
    sigma = math.sqrt(2.0 / beta)
    sd = math.sqrt(delta)

    tau = rng.random(n)
    bridge_z = rng.standard_normal((n, dim))
    pos = tau * substeps
    k_tau = np.minimum(pos.astype(np.int64), substeps - 1)
    frac = (pos - k_tau)[:, None]
    bridge_sd = np.sqrt(frac * (1.0 - frac) * delta)

    order = np.argsort(k_tau, kind="stable")
    k_sorted = k_tau[order]
    starts = np.searchsorted(k_sorted, np.arange(substeps), side="left")
    stops = np.searchsorted(k_sorted, np.arange(substeps), side="right")

    y = np.broadcast_to(x, (n, dim)).copy()
    w = np.zeros((n, dim))
    w_tau = np.empty((n, dim))
    for k in range(substeps):
        inc = sd * rng.standard_normal((n, dim))
        if stops[k] > starts[k]:
            idx = order[starts[k]:stops[k]]
            w_tau[idx] = w[idx] + frac[idx] * inc[idx] + bridge_sd[idx] * bridge_z[idx]
        y -= delta * inner(y)
        y += sigma * inc
        w += inc
    if not np.all(np.isfinite(y)):
        raise DiagnosticError(f"reference integrator produced a non-finite state (lambda={lam})")
    return y, tau, w_tau, w


def noise_checksum(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def is_exploded(x) -> bool:
    """Non-finite coordinate or norm above ``EXPLOSION_NORM``."""
    s = float(x @ x)
    if s <= 1e200:
        return False
    m = float(np.max(np.abs(x)))
    if not math.isfinite(m) or m > EXPLOSION_NORM:
        return True
    return m * float(np.linalg.norm(x / m)) > EXPLOSION_NORM


@dataclass
class ChainState:
    x: np.ndarray
    iter: int = 0
    exploded: bool = False
    explosion_iter: Optional[int] = None
    rng_state: dict = field(default_factory=dict, repr=False)

    def mark_exploded(self, n: int) -> None:
        if self.explosion_iter is None:
            self.exploded = True
            self.explosion_iter = n


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one chain.

    ``first_coord`` holds the first coordinate of every post-burn-in state;
    ``sq_norm_trace`` holds ``|X_n|^2`` every ``trace_every`` iterations.
    ``explosion_iter`` is the 0-based index of the update that left the
    finite region, i.e. the number of updates completed before it.
    """

    config: SamplerConfig
    drift: str
    exploded: bool
    explosion_iter: Optional[int]
    iters_done: int
    final_state: np.ndarray
    first_coord: np.ndarray
    sq_norm_trace: np.ndarray
    trace_iters: np.ndarray

    @property
    def n_samples(self) -> int:
        return len(self.first_coord)

    def summary(self) -> dict:
        fc = self.first_coord
        return {
            "config": self.config.to_dict(),
            "drift": self.drift,
            "exploded": self.exploded,
            "explosion_iter": self.explosion_iter,
            "iters_done": self.iters_done,
            "n_samples": self.n_samples,
            "first_coord_second_moment": float(np.mean(fc * fc)) if len(fc) else None,
            "first_coord_positive_fraction": float(np.mean(fc > 0)) if len(fc) else None,
            "final_sq_norm": float(self.final_state @ self.final_state) if not self.exploded else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


Observer = Callable[[int, np.ndarray], None]


def _noise_blocks(config: SamplerConfig, rng: np.random.Generator):
    """Yield per-replicate noise blocks; iteration ``i`` of a block is one update."""
    d, lam = config.dim, config.lam
    scheme = config.scheme
    while True:
        if scheme is Scheme.TRLMC:
            yield draw_noise_pairs(rng, lam, d, NOISE_BLOCK)
        elif scheme is Scheme.REFERENCE:
            m = config.ref_substeps
            yield (math.sqrt(lam / m) * rng.standard_normal((1, m, d)),)
        else:
            yield (rng.standard_normal((NOISE_BLOCK, d)),)


def _kernel(config: SamplerConfig, drift: DriftSpec):
    lam, beta = config.lam, config.beta
    scheme = config.scheme
    if scheme is Scheme.ULA:
        return lambda x, z: ula_step(x, drift, lam, beta, z[0])
    if scheme is Scheme.REFERENCE:
        return lambda x, z: np.stack(
            [reference_step(xr, drift, lam, beta, zr) for xr, zr in zip(x, z[0])])
    tamed = tame(drift, lam)
    if scheme is Scheme.KTULA:
        if lam > lambda_max_ktula(drift):
            log.warning("kTULA step %g exceeds the guaranteed step bound %g for %s",
                        lam, lambda_max_ktula(drift), drift.name)
        return lambda x, z: ktula_step(x, tamed, beta, z[0])
    if lam > lambda_max_trlmc_computable(drift):
        log.warning("tRLMC step %g exceeds min(1, 1/(8a)) for %s", lam, drift.name)
    log.debug("tRLMC step bound has non-numeric branches; only min(1, 1/(8a)) enforced")
    return lambda x, z: trlmc_step(x, tamed, beta, NoisePair(*z))


def _same_protocol(configs):
    ref = configs[0].to_dict()
    ref.pop("seed")
    for c in configs[1:]:
        other = c.to_dict()
        other.pop("seed")
        if other != ref:
            raise ParameterError("batched chains must differ only in their seed")


def run_chains(configs, drift: DriftSpec, observers=None) -> list[RunRecord]:
    """Run replicate chains that share a protocol and differ only in seed.

    Replicates advance together as rows of one array, but each draws its
    noise from its own generator, so every record equals what a lone
    :func:`run_chain` with the same config returns. ``observers`` is an
    optional list (one entry per replicate) of observer lists.
    """
    configs = list(configs)
    if not configs:
        return []
    _same_protocol(configs)
    cfg = configs[0]
    if cfg.dim != drift.dim:
        raise ParameterError(f"x0 has dimension {cfg.dim}, drift has {drift.dim}")
    R = len(configs)
    observers = [list(o) for o in observers] if observers is not None else [[] for _ in configs]
    if len(observers) != R:
        raise ParameterError("need one observer list per replicate")

    rngs = [make_rng(c.seed) for c in configs]
    sources = [_noise_blocks(c, g) for c, g in zip(configs, rngs)]
    step = _kernel(cfg, drift)
    states = [ChainState(x=np.array(c.x0, dtype=float)) for c in configs]

    burn, every = cfg.burn_in, cfg.trace_every
    first = np.empty((R, cfg.n_iters - burn))
    n_slots = cfg.n_iters // every + 1
    trace = np.empty((R, n_slots))
    x = np.array([s.x for s in states])
    trace[:, 0] = _row_sq_norm(x)
    active = np.ones(R, dtype=bool)
    done = np.zeros(R, dtype=np.int64)
    block = None
    period = NOISE_BLOCK if cfg.scheme is not Scheme.REFERENCE else 1

    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(cfg.n_iters):
            i = n % period
            if i == 0:
                block = [np.stack(parts) for parts in zip(*(next(src) for src in sources))]
            x_new = step(x, [b[:, i] for b in block])
            sq = _row_sq_norm(x_new)
            suspect = active & ~(sq <= 1e200)
            for r in np.flatnonzero(suspect):
                if is_exploded(x_new[r]):
                    states[r].mark_exploded(n)
                    active[r] = False
            if not active.any():
                break
            if active.all():
                x = x_new
            else:
                x[active] = x_new[active]
                sq = np.where(active, sq, np.nan)
            done[active] = n + 1
            if (n + 1) % every == 0:
                trace[:, (n + 1) // every] = sq
            if n >= burn:
                first[:, n - burn] = x[:, 0]
                for r in range(R):
                    if active[r]:
                        for obs in observers[r]:
                            obs(n, x[r])

    records = []
    for r, (c, st) in enumerate(zip(configs, states)):
        n_done = int(done[r])
        kept = max(0, n_done - burn)
        n_trace = n_done // every + 1
        records.append(RunRecord(
            config=c, drift=drift.name, exploded=st.exploded,
            explosion_iter=st.explosion_iter, iters_done=n_done,
            final_state=x[r].copy(), first_coord=first[r, :kept].copy(),
            sq_norm_trace=trace[r, :n_trace].copy(),
            trace_iters=np.arange(n_trace, dtype=np.int64) * every,
        ))
        st.x, st.iter = x[r].copy(), n_done
        st.rng_state = rngs[r].bit_generator.state
    return records


def run_chain(config: SamplerConfig, drift: DriftSpec,
              observers: Iterable[Observer] = ()) -> RunRecord:
    """Iterate the configured scheme from ``config.x0``.

    Observers receive ``(n, X_{n+1})`` for every post-burn-in update ``n``.
    The chain halts at the first explosion, which is recorded rather than
    raised.
    """
    return run_chains([config], drift, [list(observers)])[0]


def _row_sq_norm(x):
    return np.sum(x * x, axis=-1)


SAMPLE_MAGIC = b"TLSAMP01"
_HEADER = struct.Struct("<8sII")


class BinarySampleWriter:
    """Observer spilling states as little-endian float64 after a 16-byte header.

    Header: 8-byte magic, uint32 dimension, uint32 sample count. The count is
    patched on :meth:`close`.
    """

    def __init__(self, path, dim: int):
        self.path = path
        self.dim = dim
        self.count = 0
        self._fh = open(path, "wb")
        self._fh.write(_HEADER.pack(SAMPLE_MAGIC, dim, 0))

    def __call__(self, n: int, x: np.ndarray) -> None:
        self._fh.write(np.asarray(x, dtype="<f8").tobytes())
        self.count += 1

    def close(self) -> None:
        self._fh.seek(0)
        self._fh.write(_HEADER.pack(SAMPLE_MAGIC, self.dim, self.count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_samples(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, dim, count = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != SAMPLE_MAGIC:
            raise ParameterError(f"{path}: not a sample file (magic {magic!r})")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != dim * count:
        raise ParameterError(f"{path}: expected {dim * count} values, found {data.size}")
    return data.reshape(count, dim)
