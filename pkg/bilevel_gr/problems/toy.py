# Copyright 2026, bilevel-gr authors. All rights reserved.

"""The analytic toy problem

    min_theta (theta - a)^2 + sum_i (omega_i - a - c_i)^2
    s.t. omega_i in argmin sin(theta + omega_i - c_i)

with theta a scalar (m = 1) and omega in R^n. Every inner minimizer puts the
sine argument on a branch -pi/2 + 2k*pi, which gives a closed-form optimum.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from ..core import BilevelOracle  # type:ignore
from ..errors import ConfigurationError  # type:ignore
from ..internal_utils import broadcast_vector, is_all_finite  # type:ignore

_logger = logging.getLogger(__name__)

BRANCH_OFFSET = -0.5 * math.pi
BRANCH_PERIOD = 2.0 * math.pi
BRUTE_FORCE_GRID_POINTS = 4001
BRUTE_FORCE_ZOOM_POINTS = 201
BRUTE_FORCE_ZOOM_ROUNDS = 8
AGREEMENT_TOL = 1e-6

# Optima quoted in the literature for specific settings, keyed by (a, c, n).
_QUOTED_OPTIMA: Dict[Tuple[float, Tuple[float, ...], int], Tuple[float, float]] = {
    (2.0, (2.0,), 1): (0.75 * math.pi, 0.75 * math.pi - 2.0),
}


@dataclass(frozen=True)
class ToySpec:
    a: float = 2.0
    c: Union[float, Sequence[float]] = 2.0
    n: int = 1

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigurationError(f"Toy problem needs n >= 1, got {self.n}")
        c = broadcast_vector(self.c, int(self.n), name="c")
        if not is_all_finite(c, self.a):
            raise ConfigurationError("Toy problem parameters a and c must be finite")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "c", tuple(float(x) for x in c))

    @property
    def c_vector(self) -> np.ndarray:
        return np.array(self.c, dtype=np.float64)


def toy_oracle(spec: ToySpec) -> BilevelOracle:
    a = spec.a
    c = spec.c_vector

    def argument(theta, omega):
        return theta[0] + omega - c

    def f_ol(theta, omega):
        return float((theta[0] - a) ** 2 + np.sum((omega - a - c) ** 2))

    def f_cl(theta, omega):
        return float(np.sum(np.sin(argument(theta, omega))))

    def grad_theta_ol(theta, omega):
        return np.array([2.0 * (theta[0] - a)])

    def grad_omega_ol(theta, omega):
        return 2.0 * (omega - a - c)

    def grad_theta_cl(theta, omega):
        return np.array([float(np.sum(np.cos(argument(theta, omega))))])

    def grad_omega_cl(theta, omega):
        return np.cos(argument(theta, omega))

    def hvp_omega_omega_cl(theta, omega, v):
        return -np.sin(argument(theta, omega)) * v

    def cross_vjp_cl(theta, omega, u):
        return np.array([float(np.sum(-np.sin(argument(theta, omega)) * u))])

    def point_sampler(rng):
        return rng.uniform(a - 3.0, a + 3.0, size=1), rng.uniform(a - 3.0, a + 3.0, size=spec.n)

    return BilevelOracle(
        f_ol=f_ol,
        f_cl=f_cl,
        grad_theta_ol=grad_theta_ol,
        grad_omega_ol=grad_omega_ol,
        grad_theta_cl=grad_theta_cl,
        grad_omega_cl=grad_omega_cl,
        hvp_omega_omega_cl=hvp_omega_omega_cl,
        cross_vjp_cl=cross_vjp_cl,
        dims=(1, spec.n),
        point_sampler=point_sampler,
        name=f"toy(n={spec.n})",
    )


class ToyReference:
    """Optimum of the toy problem.

    Attributes:
        theta, omega, phi: the brute-force-confirmed optimum
        closed_form: (theta, omega, phi) from the branch formula
        closed_form_matches: False when brute force disagreed with the formula;
            the brute-force result is reported in that case
        discrepancy: True when anything disagreed (formula or a quoted optimum)
        notes: human-readable descriptions of every disagreement
    """

    def __init__(
        self,
        *,
        theta: np.ndarray,
        omega: np.ndarray,
        phi: float,
        closed_form: Tuple[np.ndarray, np.ndarray, float],
        closed_form_matches: bool,
        notes: List[str],
    ):
        self.theta = theta
        self.omega = omega
        self.phi = phi
        self.closed_form = closed_form
        self.closed_form_matches = closed_form_matches
        self.notes = notes
        self.discrepancy = (not closed_form_matches) or len(notes) > 0

    def __str__(self):
        return (
            f"ToyReference(theta={self.theta.tolist()}, phi={self.phi!r}, "
            f"discrepancy={self.discrepancy})"
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "theta": self.theta.tolist(),
            "omega": self.omega.tolist(),
            "phi": self.phi,
            "closed_form_matches": self.closed_form_matches,
            "discrepancy": self.discrepancy,
            "notes": list(self.notes),
        }


def _nearest_branches(x: np.ndarray) -> np.ndarray:
    # the three branch points -pi/2 + 2k*pi around x, stacked on a new last axis
    k = np.round((x - BRANCH_OFFSET) / BRANCH_PERIOD)
    ks = np.stack([k - 1.0, k, k + 1.0], axis=-1)
    return BRANCH_OFFSET + BRANCH_PERIOD * ks


def _inner_best_response(spec: ToySpec, theta: np.ndarray) -> np.ndarray:
    """omega(theta) for a batch of thetas, shape (G, n): per coordinate, the
    inner minimizer on the branch closest to the outer target a + c_i."""
    c = spec.c_vector
    target = theta[:, None] + spec.a  # sin argument at omega_i = a + c_i
    branches = _nearest_branches(target)[:, None, :]  # (G, 1, 3)
    candidates = branches - theta[:, None, None] + c[None, :, None]  # omega_i per branch
    cost = (candidates - spec.a - c[None, :, None]) ** 2
    best = np.argmin(cost, axis=-1)
    return np.take_along_axis(candidates, best[..., None], axis=-1)[..., 0]


def toy_value(spec: ToySpec, theta: Union[float, np.ndarray]) -> np.ndarray:
    """phi(theta) = F_OL(theta, omega(theta)) evaluated on each given theta."""
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    omega = _inner_best_response(spec, theta)
    return (theta - spec.a) ** 2 + np.sum((omega - spec.a - spec.c_vector) ** 2, axis=1)


def _closed_form(spec: ToySpec) -> Tuple[np.ndarray, np.ndarray, float]:
    n = spec.n
    # C is the branch point closest to 2a
    branches = _nearest_branches(np.array(2.0 * spec.a))
    big_c = float(branches[np.argmin(np.abs(branches - 2.0 * spec.a))])
    theta = ((1 - n) * spec.a + n * big_c) / (1 + n)
    omega = big_c + spec.c_vector - theta
    phi = (big_c - 2.0 * spec.a) ** 2 - (big_c - 2.0 * spec.a) ** 2 / (1 + n)
    return np.array([theta]), omega, float(phi)


def _brute_force(spec: ToySpec) -> Tuple[np.ndarray, np.ndarray, float]:
    half_width = math.pi + 1.0
    grid = np.linspace(spec.a - half_width, spec.a + half_width, BRUTE_FORCE_GRID_POINTS)
    spacing = grid[1] - grid[0]
    best = float(grid[np.argmin(toy_value(spec, grid))])
    for _ in range(BRUTE_FORCE_ZOOM_ROUNDS):
        grid = np.linspace(best - 2.0 * spacing, best + 2.0 * spacing, BRUTE_FORCE_ZOOM_POINTS)
        spacing = grid[1] - grid[0]
        best = float(grid[np.argmin(toy_value(spec, grid))])
    theta = np.array([best])
    omega = _inner_best_response(spec, theta)[0]
    phi = float(toy_value(spec, theta)[0])
    return theta, omega, phi


def toy_reference(spec: ToySpec) -> ToyReference:
    """Closed-form optimum, verified by a grid search over theta with exact
    per-coordinate inner minimization."""
    cf_theta, cf_omega, cf_phi = _closed_form(spec)
    bf_theta, bf_omega, bf_phi = _brute_force(spec)
    notes = []
    matches = abs(cf_theta[0] - bf_theta[0]) <= AGREEMENT_TOL * max(1.0, abs(cf_theta[0])) and abs(
        cf_phi - bf_phi
    ) <= AGREEMENT_TOL * max(1.0, abs(cf_phi))
    if matches:
        theta, omega, phi = cf_theta, cf_omega, cf_phi
    else:
        theta, omega, phi = bf_theta, bf_omega, bf_phi
        notes.append(
            f"closed form theta={cf_theta[0]!r}, phi={cf_phi!r} disagrees with brute force "
            f"theta={bf_theta[0]!r}, phi={bf_phi!r}; reporting brute force"
        )

    quoted = _QUOTED_OPTIMA.get((spec.a, spec.c, spec.n))
    if quoted is not None:
        quoted_theta, quoted_omega = quoted
        if abs(quoted_theta - theta[0]) > AGREEMENT_TOL or abs(quoted_omega - omega[0]) > AGREEMENT_TOL:
            notes.append(
                f"quoted optimum (theta, omega)=({quoted_theta!r}, {quoted_omega!r}) differs from "
                f"the verified ({theta[0]!r}, {omega[0]!r}); omega_i = C + c_i - theta holds for the latter"
            )
    for note in notes:
        _logger.warning(f"toy_reference(a={spec.a}, n={spec.n}): {note}")
    return ToyReference(
        theta=theta,
        omega=omega,
        phi=phi,
        closed_form=(cf_theta, cf_omega, cf_phi),
        closed_form_matches=bool(matches),
        notes=notes,
    )
