# Copyright 2026, bilevel-gr authors. All rights reserved.

"""The quadratic pair F_OL = |theta|^2 + |omega|^2, F_CL = |omega - theta|^2.

The inner solution is omega(theta) = theta, so phi(theta) = 2 |theta|^2 and
the exact hypergradient is 4 theta.
"""

import numpy as np

from ..core import BilevelOracle  # type:ignore
from ..errors import ConfigurationError  # type:ignore


def quadratic_pair_oracle(dim: int = 1) -> BilevelOracle:
    if dim < 1:
        raise ConfigurationError(f"dim must be >= 1, got {dim}")
    return BilevelOracle(
        f_ol=lambda theta, omega: float(theta @ theta + omega @ omega),
        f_cl=lambda theta, omega: float((omega - theta) @ (omega - theta)),
        grad_theta_ol=lambda theta, omega: 2.0 * theta,
        grad_omega_ol=lambda theta, omega: 2.0 * omega,
        grad_theta_cl=lambda theta, omega: -2.0 * (omega - theta),
        grad_omega_cl=lambda theta, omega: 2.0 * (omega - theta),
        hvp_omega_omega_cl=lambda theta, omega, v: 2.0 * np.asarray(v, dtype=np.float64),
        cross_vjp_cl=lambda theta, omega, u: -2.0 * np.asarray(u, dtype=np.float64),
        dims=(dim, dim),
        name=f"quadratic_pair(dim={dim})",
    )


def quadratic_pair_hypergradient(theta: np.ndarray) -> np.ndarray:
    return 4.0 * np.asarray(theta, dtype=np.float64)
