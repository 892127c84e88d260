# Copyright 2026, bilevel-gr authors. All rights reserved.

import logging, os
from bilevel_gr import SolverConfig, fid_gaussian, js_histogram, mode_count, run_solver  # type: ignore
from bilevel_gr.metrics import default_js_grid  # type: ignore
from bilevel_gr.problems import GANProblemSpec, MOGSpec, gan_oracle, mog_sampler  # type: ignore
from bilevel_gr.problems.gan import generate_samples, initial_point  # type: ignore

logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger(__name__)

outer_iters = int(os.environ.get("BILEVEL_GR_EXAMPLE_ITERS", "2000"))

# A small generator / discriminator pair on the 8-mode ring
mog = MOGSpec(family="ring2d", components=8, batch=128)
spec = GANProblemSpec(mog=mog, loss="vanilla", hidden_width=64, seed=0)
oracle = gan_oracle(spec)

for variant in ("ADI", "FastGR"):
    config = SolverConfig(
        variant=variant,
        optimizer="adam",
        alpha=1e-3,
        beta=1e-3,
        adam_beta1=0.5,
        outer_iters=outer_iters,
        stop_rel_tol=float("inf"),
        record_theta=False,
    )
    theta0, omega0 = initial_point(spec, seed=0)
    trace = run_solver(oracle, config, theta0, omega0)

    generated = generate_samples(spec, trace.theta, 2500, seed=7)
    real, centers = mog_sampler(mog, seed=8, batch=2500)
    modes = mode_count(generated, centers, mog.sigma)
    js = js_histogram(real, generated, default_js_grid(centers, mog.sigma))
    fid = fid_gaussian(real, generated)
    logger.info(f"{variant}: status={trace.status.value} modes={modes.value} js={js.value:.4f} fid={fid.value:.4f}")
