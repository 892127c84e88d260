# Copyright 2026, bilevel-gr authors. All rights reserved.

import logging, os
import numpy as np
from bilevel_gr import SolverConfig, run_solver  # type: ignore
from bilevel_gr.problems import ToySpec, toy_oracle, toy_reference  # type: ignore

logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger(__name__)

outer_iters = int(os.environ.get("BILEVEL_GR_EXAMPLE_ITERS", "5000"))

spec = ToySpec(a=2.0, c=2.0, n=1)
oracle = toy_oracle(spec)
reference = toy_reference(spec)
logger.info(f"Reference optimum: {reference.to_dict()}")

# FastGR against the baselines, all started at (3, 3)
for variant, inner_steps in [("FastGR", 1), ("ADI", 1), ("ImplicitCG", 100), ("RHG", 10)]:
    config = SolverConfig(
        variant=variant,
        alpha=0.5,
        beta=0.1,
        inner_steps=inner_steps,
        outer_iters=outer_iters,
        stop_rel_tol=float("inf"),
    )
    trace = run_solver(oracle, config, np.array([3.0]), np.array([3.0]), reference)
    logger.info(
        f"{variant}: status={trace.status.value} theta={trace.theta.tolist()} "
        f"theta_rel_err={trace.final.theta_rel_err} grad_evals={trace.final.grad_eval_count}"
    )
