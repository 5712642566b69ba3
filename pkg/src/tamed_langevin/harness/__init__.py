"""Experiment specs, orchestration, reports and the command-line entry point."""

from .config import ExperimentKind, ExperimentSpec, load_spec, spec_from_dict
from .experiments import ExperimentReport, run_experiment

__all__ = ["ExperimentKind", "ExperimentReport", "ExperimentSpec", "load_spec",
           "run_experiment", "spec_from_dict"]
