"""The taming transform and empirical checks of its structural bounds.

``h_lam(x) = a x + (h(x) - a x) / sqrt(1 + lam * |x|**(2(ell+1)))``

The checks evaluate each inequality pointwise on a sample and report the
worst slack. They are sweeps over finite samples, not certificates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .drifts import DriftSpec
from .errors import ParameterError

ROUNDOFF = 1e-9


@dataclass(frozen=True)
class TamingConstants:
    L0: float
    lambda_max_ktula: float

    @classmethod
    def from_drift(cls, base: DriftSpec) -> "TamingConstants":
        a, L, ell = base.a, base.L, base.ell
        L0 = 2 * a + 4 * L + (ell + 1) * (2 * L + a)
        return cls(L0=L0, lambda_max_ktula=min(1.0, 1.0 / (8 * a), 1.0 / (6 * L0) ** 2))


def lambda_max_ktula(base: DriftSpec) -> float:
    return TamingConstants.from_drift(base).lambda_max_ktula


def lambda_max_trlmc_computable(base: DriftSpec) -> float:
    """Only the closed-form branches ``min(1, 1/(8a))`` of the tRLMC guard.

    The remaining branches depend on proof constants with no numeric value.
    """
    return min(1.0, 1.0 / (8 * base.a))


def _sq_norm(x):
    return np.sum(x * x, axis=-1)


@dataclass(frozen=True)
class TamedDrift:
    base: DriftSpec
    lam: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ParameterError(f"lambda must lie in (0, 1), got {self.lam}")

    def denominator(self, x):
        return np.sqrt(1.0 + self.lam * _sq_norm(x) ** (self.base.ell + 1))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a = self.base.a
        ax = a * x
        return ax + (self.base.eval_h(x) - ax) / self.denominator(x)[..., None]

    eval = __call__


def tame(base: DriftSpec, lam: float) -> TamedDrift:
    return TamedDrift(base, lam)


@dataclass(frozen=True)
class CheckReport:
    check: str
    drift: str
    lam: float
    n_points: int
    worst_slack: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.check:<22} {self.drift:<18} lambda={self.lam:<8g} "
                f"n={self.n_points:<6d} worst_slack={self.worst_slack:.6g}")


def _points(points, dim):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != dim:
        raise ParameterError(f"points have dimension {pts.shape[-1]}, drift has {dim}")
    return pts


def check_dissipativity(td: TamedDrift, points) -> CheckReport:
    """``<h_lam(x), x> >= a|x|^2 - b``; slack is LHS - RHS."""
    base = td.base
    x = _points(points, base.dim)
    sq = _sq_norm(x)
    slack = np.sum(td(x) * x, axis=-1) - base.a * sq + base.b
    ok = bool(np.all(slack >= -ROUNDOFF * (1.0 + sq)))
    return CheckReport("dissipativity", base.name, td.lam, len(x), float(slack.min()), ok)


def taming_error_sides(td: TamedDrift, x):
    """Both sides of ``|h - h_lam|^2 <= 4 lam^2 (L+a)^2 (1 + |x|^(6(ell+1)))``."""
    base = td.base
    diff = base.eval_h(x) - td(x)
    lhs = _sq_norm(diff)
    rhs = 4 * td.lam**2 * (base.L + base.a) ** 2 * (1.0 + _sq_norm(x) ** (3 * (base.ell + 1)))
    return lhs, rhs


def check_taming_error(td: TamedDrift, points) -> CheckReport:
    """Slack is reported relative to the bound: ``(RHS - LHS) / RHS``."""
    x = _points(points, td.base.dim)
    lhs, rhs = taming_error_sides(td, x)
    ok = bool(np.all(lhs <= rhs * (1.0 + ROUNDOFF)))
    slack = (rhs - lhs) / rhs
    return CheckReport("taming_error", td.base.name, td.lam, len(x), float(slack.min()), ok)


def taming_error_ratio(base: DriftSpec, x, lambdas) -> np.ndarray:
    """``|h(x) - h_lam(x)| / lam`` along a grid of step sizes."""
    x = np.asarray(x, dtype=float)
    hx = base.eval_h(x)
    return np.array([np.linalg.norm(hx - tame(base, lam)(x)) / lam for lam in lambdas])


def lipschitz_bound(td: TamedDrift) -> float:
    return TamingConstants.from_drift(td.base).L0 / math.sqrt(td.lam)


def check_lipschitz(td: TamedDrift, pairs) -> CheckReport:
    """Largest ``|h_lam(x) - h_lam(y)| / |x - y|`` over the given pairs.

    ``pairs`` is ``(x, y)`` with matching shapes ``(n, d)``; coincident pairs
    are skipped. Slack is ``bound - max_ratio``.
    """
    x, y = (_points(p, td.base.dim) for p in pairs)
    dx = np.sqrt(_sq_norm(x - y))
    keep = dx > 0
    x, y, dx = x[keep], y[keep], dx[keep]
    bound = lipschitz_bound(td)
    if len(dx) == 0:
        return CheckReport("lipschitz", td.base.name, td.lam, 0, bound, True)
    ratio = np.sqrt(_sq_norm(td(x) - td(y))) / dx
    worst = float(ratio.max())
    return CheckReport("lipschitz", td.base.name, td.lam, len(dx), bound - worst, worst <= bound)


def check_growth(td: TamedDrift, points) -> tuple[CheckReport, CheckReport]:
    """Both growth forms: ``(2a+L)(1+|x|^(ell+1))`` and ``2a|x| + 2L/sqrt(lam)``.

    The second report is informational; its premise is not checked.
    """
    base = td.base
    x = _points(points, base.dim)
    norm = np.sqrt(_sq_norm(x))
    mag = np.sqrt(_sq_norm(td(x)))
    poly = (2 * base.a + base.L) * (1.0 + norm ** (base.ell + 1))
    lin = 2 * base.a * norm + 2 * base.L / math.sqrt(td.lam)
    reports = []
    for name, rhs in (("growth_poly", poly), ("growth_linear", lin)):
        slack = (rhs - mag) / rhs
        ok = bool(np.all(mag <= rhs * (1.0 + ROUNDOFF)))
        reports.append(CheckReport(name, base.name, td.lam, len(x), float(slack.min()), ok))
    return reports[0], reports[1]


def check_pointwise_convergence(base: DriftSpec, points, n_halvings: int = 20) -> CheckReport:
    """``|h_lam(x) - h(x)|`` must not increase as lam runs over 2^-1 .. 2^-n.

    Slack is the worst relative increase between consecutive grid points
    (negated), so any positive increase fails.
    """
    x = _points(points, base.dim)
    lambdas = 2.0 ** -np.arange(1, n_halvings + 1)
    hx = base.eval_h(x)
    gaps = np.stack([np.sqrt(_sq_norm(hx - tame(base, lam)(x))) for lam in lambdas])
    rises = (gaps[1:] - gaps[:-1]) / (1.0 + gaps[:-1])
    worst = float(-rises.max()) if len(rises) else 0.0
    ok = bool(np.all(rises <= ROUNDOFF)) and bool(np.all(gaps[-1] <= gaps[0] + ROUNDOFF))
    return CheckReport("pointwise_convergence", base.name, float(lambdas[-1]), len(x), worst, ok)


def sample_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    """Uniform points in the closed Euclidean ball of the given radius."""
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return g * r[:, None]
