"""Drift fields with the structural constants the tamed schemes need.

A :class:`DriftSpec` bundles a vector field ``h`` (and, for gradient fields,
its potential ``u``) with the dissipativity constants ``(a, b)`` and the
polynomial growth constants ``(L, ell)``. Drifts act on the last axis, so a
batch of points of shape ``(..., d)`` can be evaluated in one call where the
drift is elementwise.
"""

from __future__ import annotations

import csv
import math
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import ParameterError
from .rng import make_rng

Array = np.ndarray


@dataclass(frozen=True)
class DriftSpec:
    dim: int
    eval_h: Callable[[Array], Array]
    a: float
    b: float
    L: float
    ell: float
    name: str
    eval_u: Optional[Callable[[Array], float]] = None
    # (x, idx) -> h restricted to a data subset; set by data-driven objectives
    subset_h: Optional[Callable[[Array, Array], Array]] = field(default=None, repr=False)
    subset_u: Optional[Callable[[Array, Array], float]] = field(default=None, repr=False)
    n_data: Optional[int] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError(f"dim must be positive, got {self.dim}")
        if not self.a > 0 or self.b < 0 or not self.L > 0 or self.ell < 0:
            raise ParameterError(
                f"invalid constants a={self.a}, b={self.b}, L={self.L}, ell={self.ell}"
            )

    def with_constants(self, **kw) -> "DriftSpec":
        return dataclasses.replace(self, **kw)

    def minibatch(self, idx: Array) -> "DriftSpec":
        """View of the drift evaluated on the data rows ``idx`` only."""
        if self.subset_h is None:
            raise ParameterError(f"drift {self.name!r} has no data to subsample")
        sub_h, sub_u = self.subset_h, self.subset_u
        return dataclasses.replace(
            self,
            eval_h=lambda x: sub_h(x, idx),
            eval_u=None if sub_u is None else (lambda x: sub_u(x, idx)),
        )

    def constants(self) -> dict:
        return {"a": self.a, "b": self.b, "L": self.L, "ell": self.ell}


def double_well(dim: int, a: float = 1.0, L: float = 2.0, ell: float = 1.0) -> DriftSpec:
    """Separable double well ``u(x) = sum(x**4/4 - x**2/2)``, ``h = x**3 - x``.

    Per coordinate ``x**4 - x**2 >= a x**2 - (a+1)**2/4``, so the
    dissipativity offset is ``b = dim * (a+1)**2 / 4`` (``b = dim`` at a=1).
    ``L`` and ``ell`` only enter through the taming map.
    """
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")

    def h(x):
        x = np.asarray(x, dtype=float)
        return x * x * x - x

    def u(x):
        x = np.asarray(x, dtype=float)
        x2 = x * x
        return np.sum(0.25 * x2 * x2 - 0.5 * x2, axis=-1)

    return DriftSpec(
        dim=dim, eval_h=h, eval_u=u, a=a, b=dim * (a + 1.0) ** 2 / 4.0,
        L=L, ell=ell, name=f"double_well_d{dim}",
    )


REGISTRY = {
    "double_well": double_well,
}


def linear_drift(dim: int, a: float = 1.0) -> DriftSpec:
    """``h(x) = a x``; the taming map leaves it unchanged."""
    return DriftSpec(
        dim=dim, eval_h=lambda x: a * np.asarray(x, dtype=float),
        eval_u=lambda x: 0.5 * a * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1),
        a=a, b=0.0, L=a, ell=0.0, name=f"linear_d{dim}",
    )


REGISTRY["linear"] = linear_drift


def silu(x):
    return x * expit(x)


def silu_prime(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True)
class FixedFeatureNet:
    """One hidden layer with frozen input features ``c`` (width x input_dim).

    Trainable parameters are packed as ``theta = (W, bias)`` of length
    ``2 * width``.
    """

    features: Array
    reg_eta: float = 0.05

    @classmethod
    def random(cls, input_dim: int, width: int, seed: int, reg_eta: float = 0.05):
        if input_dim < 1 or width < 1:
            raise ParameterError("input_dim and width must be positive")
        rng = make_rng(seed)
        c = rng.standard_normal((width, input_dim)) / np.sqrt(input_dim)
        return cls(features=c, reg_eta=reg_eta)

    @property
    def width(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_params(self) -> int:
        return 2 * self.width

    def split(self, theta: Array) -> tuple[Array, Array]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ParameterError(
                f"theta has shape {theta.shape}, network expects ({self.n_params},)"
            )
        return theta[: self.width], theta[self.width :]

    def predict(self, theta: Array, z: Array) -> Array:
        w, bias = self.split(theta)
        return silu(np.asarray(z, dtype=float) @ self.features.T + bias) @ w


@dataclass(frozen=True)
class Dataset:
    z: Array
    y: Array

    def __post_init__(self):
        if self.z.ndim != 2 or self.y.shape != (self.z.shape[0],):
            raise ParameterError(f"inconsistent dataset shapes {self.z.shape}, {self.y.shape}")

    def __len__(self):
        return self.y.shape[0]

    def save(self, path) -> None:
        """Write a comma-separated file with header ``z1..zk,y``."""
        k = self.z.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"z{i + 1}" for i in range(k)] + ["y"])
            for zi, yi in zip(self.z, self.y):
                w.writerow([repr(float(v)) for v in zi] + [repr(float(yi))])

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "y":
            raise ParameterError(f"{path}: last column must be 'y', got {header[-1]!r}")
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(z=arr[:, :-1], y=arr[:, -1].copy())


def teacher_student_data(
    seed: int,
    n_train: int,
    n_test: int,
    input_dim: int,
    teacher_width: int,
    noise_sd: float,
) -> tuple[Dataset, Dataset]:
    """Gaussian inputs labelled by a random fixed-feature teacher plus noise."""
    if min(n_train, n_test, input_dim, teacher_width) < 1:
        raise ParameterError("all sizes must be positive")
    rng = make_rng(seed)
    teacher = FixedFeatureNet(
        features=rng.standard_normal((teacher_width, input_dim)) / np.sqrt(input_dim)
    )
    w = rng.standard_normal(teacher_width) / np.sqrt(teacher_width)
    bias = rng.standard_normal(teacher_width)
    theta = np.concatenate([w, bias])
    n = n_train + n_test
    z = rng.standard_normal((n, input_dim))
    y = teacher.predict(theta, z)
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(n)
    return Dataset(z[:n_train], y[:n_train]), Dataset(z[n_train:], y[n_train:])


class _NNLoss:
    """Mean squared error of a FixedFeatureNet plus the sextic penalty."""

    def __init__(self, data: Dataset, net: FixedFeatureNet):
        if len(data) == 0:
            raise ParameterError("dataset is empty")
        if data.z.shape[1] != net.input_dim:
            raise ParameterError(
                f"data has {data.z.shape[1]} inputs, network expects {net.input_dim}"
            )
        self.net = net
        self.y = data.y
        # pre-activations minus the trainable bias
        self.proj = data.z @ net.features.T

    def _rows(self, idx):
        if idx is None:
            return self.proj, self.y
        return self.proj[idx], self.y[idx]

    def value(self, theta, idx=None) -> float:
        w, bias = self.net.split(theta)
        proj, y = self._rows(idx)
        r = y - silu(proj + bias) @ w
        return float(np.mean(r * r) + self.net.reg_eta / 6.0 * np.sum(np.asarray(theta) ** 6))

    def grad(self, theta, idx=None) -> Array:
        w, bias = self.net.split(theta)
        proj, y = self._rows(idx)
        pre = proj + bias
        act = silu(pre)
        r = y - act @ w
        scale = -2.0 / y.shape[0]
        g_w = scale * (r @ act)
        g_b = scale * w * (r @ silu_prime(pre))
        theta = np.asarray(theta, dtype=float)
        return np.concatenate([g_w, g_b]) + self.net.reg_eta * theta ** 5


def nn_objective(
    data: Dataset, net: FixedFeatureNet, a: float = 1e-2, ell: float = 4.0, L: float = 1.0
) -> DriftSpec:
    """Regularised empirical risk of ``net`` on ``data`` as a gradient drift.

    ``a`` and ``ell`` are the taming constants. No finite dissipativity
    offset is derived for this objective, so ``b`` is ``inf``; ``L`` is a
    nominal value used only by step-size guards.
    """
    loss = _NNLoss(data, net)
    return DriftSpec(
        dim=net.n_params,
        eval_h=loss.grad,
        eval_u=loss.value,
        a=a, b=math.inf, L=L, ell=ell,
        name=f"nn_w{net.width}_n{len(data)}",
        subset_h=loss.grad,
        subset_u=loss.value,
        n_data=len(data),
    )
