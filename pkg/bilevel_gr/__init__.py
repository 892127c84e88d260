# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Bilevel optimization with first-order response gradients, the usual
hypergradient baselines, benchmark problems and metrics."""
from .core import BilevelOracle, CountingOracle, oracle_self_test  # type:ignore
from .metrics import MetricReport, f1_corruption, fid_gaussian, js_histogram, mode_count, rel_err_series  # type:ignore
from .solvers import (
    BilevelSolver,
    SolverConfig,
    SolverTrace,
    SolverVariant,
    TraceStatus,
    fast_gr_response,
    implicit_cg_response,
    inner_descent,
    neumann_response,
    rhg_hypergradient,
    run_solver,
    total_hypergradient,
)  # type:ignore
from .version import __version__  # type:ignore

__all__ = [
    "BilevelOracle",
    "BilevelSolver",
    "CountingOracle",
    "MetricReport",
    "SolverConfig",
    "SolverTrace",
    "SolverVariant",
    "TraceStatus",
    "__version__",
    "f1_corruption",
    "fast_gr_response",
    "fid_gaussian",
    "implicit_cg_response",
    "inner_descent",
    "js_histogram",
    "mode_count",
    "neumann_response",
    "oracle_self_test",
    "rel_err_series",
    "rhg_hypergradient",
    "run_solver",
    "total_hypergradient",
]
