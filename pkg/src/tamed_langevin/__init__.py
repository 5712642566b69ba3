"""Tamed Langevin samplers (kTULA, tRLMC) for targets with super-linear drift."""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .drifts import DriftSpec, double_well, linear_drift, nn_objective
from .errors import ConfigError, DiagnosticError, ParameterError
from .samplers import SamplerConfig, Scheme, run_chain, run_chains
from .taming import TamedDrift, tame

__all__ = [
    "ConfigError", "DiagnosticError", "DriftSpec", "ParameterError", "SamplerConfig",
    "Scheme", "TamedDrift", "__version__", "double_well", "linear_drift", "nn_objective",
    "run_chain", "run_chains", "tame",
]
