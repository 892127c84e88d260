# Copyright 2026, bilevel-gr authors. All rights reserved.

import logging
import numpy as np
from bilevel_gr import SolverConfig, run_solver
from bilevel_gr.problems import ToySpec, toy_oracle, toy_reference

logging.basicConfig(level=logging.DEBUG)

spec = ToySpec(a=2.0, c=2.0, n=1)
reference = toy_reference(spec)
print(reference.to_dict())

# EXAMPLE USAGE BELOW

config = SolverConfig(variant="FastGR", alpha=0.5, beta=0.1, outer_iters=5000, stop_rel_tol=float("inf"))
trace = run_solver(toy_oracle(spec), config, np.array([3.0]), np.array([3.0]), reference)
print(trace.status, trace.theta, trace.final.theta_rel_err)
