# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Experiment configs, the benchmark runner, plot data and the command line."""
from .config import (
    EXPERIMENTS,
    ExperimentConfig,
    SolverEntry,
    load_experiment_config,
    parse_experiment_config,
)
from .plotdata import PLOT_KINDS, emit_plotdata, load_summary
from .runner import ExperimentRunner, build_problem_instance, run_experiment, trace_csv_text

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "ExperimentRunner",
    "PLOT_KINDS",
    "SolverEntry",
    "build_problem_instance",
    "emit_plotdata",
    "load_experiment_config",
    "load_summary",
    "parse_experiment_config",
    "run_experiment",
    "trace_csv_text",
]
