# Copyright 2026, bilevel-gr authors. All rights reserved.

import logging, os
from bilevel_gr import SolverConfig, f1_corruption, run_solver  # type: ignore
from bilevel_gr.problems import HyperCleanSpec, hyperclean_oracle  # type: ignore

logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger(__name__)

outer_iters = int(os.environ.get("BILEVEL_GR_EXAMPLE_ITERS", "500"))

# Learn per-sample weights that push the corrupted training labels out
problem = hyperclean_oracle(HyperCleanSpec(n_train=200, n_val=200, n_test=200, classes=3, feature_dim=10, seed=1))
theta0, omega0 = problem.initial_point()

config = SolverConfig(variant="FastGR", alpha=5e-4, beta=1.0, outer_iters=outer_iters, stop_rel_tol=float("inf"))
trace = run_solver(problem.oracle, config, theta0, omega0)

report = f1_corruption(trace.theta, problem.truth_mask)
logger.info(f"status: {trace.status.value}")
logger.info(f"corruption F1: {report.value:.3f} {report.details}")
logger.info(f"test accuracy: {problem.test_accuracy(trace.omega):.3f}")
