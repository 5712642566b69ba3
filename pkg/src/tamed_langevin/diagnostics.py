"""Reference marginals, chain statistics, and local-error order estimation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from .drifts import DriftSpec
from .errors import DiagnosticError, ParameterError
from .rng import make_rng, replicate_seed
from .samplers import (NoisePair, RunRecord, Scheme, coupled_reference, reference_step,
                       trlmc_step)
from .taming import tame


def double_well_potential(x):
    x2 = x * x
    return 0.25 * x2 * x2 - 0.5 * x2


@dataclass(frozen=True)
class MarginalReference:
    """One-dimensional marginal ``exp(-beta u)/Z`` of the double well, tabulated."""

    beta: float
    grid: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    second_moment: float
    mean: float
    mass: float

    @property
    def grid_lo(self) -> float:
        return float(self.grid[0])

    @property
    def grid_hi(self) -> float:
        return float(self.grid[-1])

    @property
    def grid_n(self) -> int:
        return len(self.grid)

    def pdf(self, x):
        return np.interp(x, self.grid, self.density, left=0.0, right=0.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws from the tabulated density."""
        cdf = cumulative_trapezoid(self.density, self.grid, initial=0.0)
        cdf /= cdf[-1]
        return np.interp(rng.random(n), cdf, self.grid)


def quadrature_second_moment(beta: float, lo: float = -4.0, hi: float = 4.0,
                             n: int = 20001) -> MarginalReference:
    """Trapezoid-rule normaliser and second moment of the double-well marginal."""
    if not lo < hi:
        raise ParameterError(f"need lo < hi, got [{lo}, {hi}]")
    if n < 3 or n % 2 == 0:
        raise ParameterError(f"grid size must be odd and >= 3, got {n}")
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    x = np.linspace(lo, hi, n)
    w = np.exp(-beta * double_well_potential(x))
    z = trapezoid(w, x)
    dens = w / z
    return MarginalReference(
        beta=beta, grid=x, density=dens,
        second_moment=float(trapezoid(x * x * dens, x)),
        mean=float(trapezoid(x * dens, x)),
        mass=float(trapezoid(dens, x)),
    )


def second_moment_error(record: RunRecord, ref: MarginalReference) -> float:
    """``|mean(X_1^2) - E_pi[X_1^2]|`` over the post-burn-in samples."""
    if record.exploded:
        raise DiagnosticError(
            f"record exploded at iteration {record.explosion_iter}; no second moment")
    if record.n_samples == 0:
        raise DiagnosticError("record has no post-burn-in samples")
    fc = record.first_coord
    return abs(float(np.mean(fc * fc)) - ref.second_moment)


def mean_sd(values) -> tuple[Optional[float], Optional[float]]:
    """Mean and sample standard deviation; ``None`` where undefined."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return None, None
    with np.errstate(over="ignore", invalid="ignore"):
        sd = float(np.std(v, ddof=1)) if v.size > 1 else None
        return float(np.mean(v)), sd


@dataclass(frozen=True)
class ExplosionSummary:
    mean: Optional[float]
    sd: Optional[float]
    count_exploded: int
    count_stable: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "count_exploded": self.count_exploded,
                "count_stable": self.count_stable}


def explosion_stats(records: Sequence[RunRecord]) -> ExplosionSummary:
    if not records:
        raise ParameterError("need at least one record")
    times = [r.explosion_iter for r in records if r.exploded]
    mean, sd = mean_sd(times)
    return ExplosionSummary(mean, sd, len(times), len(records) - len(times))


def sign_balance(records: Sequence[RunRecord]) -> float:
    """Pooled fraction of post-burn-in first coordinates that are positive."""
    fc = np.concatenate([r.first_coord for r in records])
    if fc.size == 0:
        raise DiagnosticError("no post-burn-in samples")
    return float(np.mean(fc > 0))


def moment_trend_pvalue(record: RunRecord, n_blocks: int = 20) -> float:
    """p-value of a linear trend in block means of post-burn-in ``|X_n|^2``.

    Blocking tames the autocorrelation that would make a raw regression
    over-confident.
    """
    keep = record.trace_iters > record.config.burn_in
    tr = record.sq_norm_trace[keep]
    if tr.size < 2 * n_blocks:
        raise DiagnosticError(f"only {tr.size} trace points after burn-in")
    usable = tr.size - tr.size % n_blocks
    blocks = tr[:usable].reshape(n_blocks, -1).mean(axis=1)
    return float(stats.linregress(np.arange(n_blocks), blocks).pvalue)


def density_histogram(records: Sequence[RunRecord], ref: MarginalReference,
                      bins: int = 80, lo: float = -3.0, hi: float = 3.0) -> dict:
    """Empirical first-coordinate density against the target on shared bins."""
    fc = np.concatenate([r.first_coord for r in records])
    counts, edges = np.histogram(fc, bins=bins, range=(lo, hi))
    width = edges[1] - edges[0]
    centres = 0.5 * (edges[1:] + edges[:-1])
    return {
        "bin_centre": centres.tolist(),
        "empirical": (counts / (fc.size * width)).tolist(),
        "target": ref.pdf(centres).tolist(),
    }


# ---------------------------------------------------------------------------
# local error orders


@dataclass(frozen=True)
class RateEstimate:
    lambdas: np.ndarray
    errors: np.ndarray
    stderrs: np.ndarray
    flagged: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    kind: str = ""
    scheme: str = ""

    def __post_init__(self):
        lam = np.asarray(self.lambdas)
        if lam.size < 4 or np.any(np.diff(lam) >= 0):
            raise ParameterError("rate grids need >= 4 strictly decreasing step sizes")

    @property
    def conclusive(self) -> bool:
        return self.r_squared > 0.95

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "error", "stderr", "flagged"])
        for row in zip(self.lambdas, self.errors, self.stderrs, self.flagged):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                        int(bool(row[3]))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"kind": self.kind, "scheme": self.scheme, "slope": self.slope,
                "intercept": self.intercept, "r_squared": self.r_squared,
                "conclusive": self.conclusive, "n_points": int(self.lambdas.size),
                "n_flagged": int(np.sum(self.flagged))}


def fit_rate(lambdas, errors, stderrs, kind: str = "", scheme: str = "") -> RateEstimate:
    """Least-squares slope of ``log error`` on ``log lambda``.

    Points whose error is below three standard errors sit on the Monte Carlo
    noise floor; they are flagged and left out of the fit.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    errors = np.asarray(errors, dtype=float)
    stderrs = np.asarray(stderrs, dtype=float)
    flagged = errors < 3.0 * stderrs
    use = ~flagged
    if use.sum() < 2:
        slope = intercept = r2 = float("nan")
    else:
        fit = stats.linregress(np.log(lambdas[use]), np.log(errors[use]))
        slope, intercept, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
    return RateEstimate(lambdas, errors, stderrs, flagged, slope, intercept, r2, kind, scheme)


@dataclass(frozen=True)
class LocalError:
    lam: float
    weak: float
    weak_se: float
    strong: float
    strong_se: float
    n_mc: int


def _scheme_step(scheme: Scheme, x, drift: DriftSpec, lam: float, beta: float,
                 tau, w_tau, w_lam):
    sigma = math.sqrt(2.0 / beta)
    if scheme is Scheme.ULA:
        return x - lam * drift.eval_h(x) + sigma * w_lam
    tamed = tame(drift, lam)
    if scheme is Scheme.KTULA:
        return x - lam * tamed(x) + sigma * w_lam
    if scheme is Scheme.TRLMC:
        return trlmc_step(x, tamed, beta, NoisePair(tau, w_tau, w_lam))
    raise ParameterError(f"no local error for scheme {scheme.value}")


def local_error(scheme, drift: DriftSpec, x0, lam: float, n_mc: int, seed: int,
                beta: float = 1.0, substeps: int = 1000, batch: int = 5000) -> LocalError:
    """Weak and strong one-step error of ``scheme`` against the reference.

    Scheme and reference share the Brownian path (common random numbers), so
    the weak error is the norm of the mean paired difference.
    """
    scheme = Scheme.parse(scheme)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rng = make_rng(seed)
    d = x0.shape[-1]
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    q1 = q2 = 0.0
    left = n_mc
    while left > 0:
        n = min(batch, left)
        y, tau, w_tau, w_lam = coupled_reference(x0, drift, lam, beta, substeps, rng, n)
        xs = _scheme_step(scheme, np.broadcast_to(x0, (n, d)), drift, lam, beta, tau, w_tau, w_lam)
        diff = xs - y
        s1 += diff.sum(axis=0)
        s2 += diff.T @ diff
        sq = np.sum(diff * diff, axis=1)
        q1 += sq.sum()
        q2 += (sq * sq).sum()
        left -= n
    m = s1 / n_mc
    cov = s2 / n_mc - np.outer(m, m)
    weak = float(np.linalg.norm(m))
    if weak > 0:
        weak_se = math.sqrt(max(float(m @ cov @ m), 0.0) / n_mc) / weak
    else:
        weak_se = math.sqrt(max(float(np.trace(cov)), 0.0) / n_mc)
    mean_sq = q1 / n_mc
    var_sq = max(q2 / n_mc - mean_sq**2, 0.0)
    strong = math.sqrt(mean_sq)
    strong_se = math.sqrt(var_sq / n_mc) / (2 * strong) if strong > 0 else 0.0
    return LocalError(lam, weak, weak_se, strong, strong_se, n_mc)


def error_rates(scheme, drift: DriftSpec, x0, lambdas, n_mc: int, seed: int,
                beta: float = 1.0, substeps: int = 1000) -> tuple[RateEstimate, RateEstimate]:
    """Weak and strong rate estimates from one coupled sweep over ``lambdas``."""
    scheme = Scheme.parse(scheme)
    lambdas = np.asarray(lambdas, dtype=float)
    points = [local_error(scheme, drift, x0, lam, n_mc, replicate_seed(seed, i), beta, substeps)
              for i, lam in enumerate(lambdas)]
    weak = fit_rate(lambdas, [p.weak for p in points], [p.weak_se for p in points],
                    "weak", scheme.value)
    strong = fit_rate(lambdas, [p.strong for p in points], [p.strong_se for p in points],
                      "strong", scheme.value)
    return weak, strong


def weak_error_rate(scheme, drift, x0, lambdas, n_mc, seed, **kw) -> RateEstimate:
    return error_rates(scheme, drift, x0, lambdas, n_mc, seed, **kw)[0]


def strong_error_rate(scheme, drift, x0, lambdas, n_mc, seed, **kw) -> RateEstimate:
    return error_rates(scheme, drift, x0, lambdas, n_mc, seed, **kw)[1]


def ou_weak_error_ktula(a: float, x0: float, lam: float) -> float:
    """Exact one-step weak error of kTULA on ``h = a x``: ``|x((1-a lam) - e^{-a lam})|``."""
    return abs(x0 * ((1.0 - a * lam) - math.exp(-a * lam)))


def reference_refinement_gap(drift: DriftSpec, x0, lam: float, beta: float,
                             coarse: int, fine: int, n: int, seed: int) -> float:
    """RMS gap between reference steps at two resolutions on one Brownian path."""
    if fine % coarse:
        raise ParameterError("fine substeps must be a multiple of coarse substeps")
    rng = make_rng(seed)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.shape[-1]
    inc = math.sqrt(lam / fine) * rng.standard_normal((fine, n, d))
    coarse_inc = inc.reshape(coarse, fine // coarse, n, d).sum(axis=1)
    x = np.broadcast_to(x0, (n, d))
    gap = reference_step(x, drift, lam, beta, inc) - reference_step(x, drift, lam, beta, coarse_inc)
    return float(np.sqrt(np.mean(np.sum(gap * gap, axis=1))))
