# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Bilevel problem abstraction: first-order gradient oracles and
finite-difference second-order operators for methods that need them."""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, OracleEvaluationError  # type:ignore
from .internal_utils import (
    _build_non_finite_message,
    as_param_vector,
    is_all_finite,
)  # type:ignore

# theta (outer, length m) and omega (inner, length n) are flat float64 vectors
ParamVector = np.ndarray

ValueFunction = Callable[[ParamVector, ParamVector], float]
GradientFunction = Callable[[ParamVector, ParamVector], ParamVector]
ProductFunction = Callable[[ParamVector, ParamVector, ParamVector], ParamVector]
PointSampler = Callable[[np.random.Generator], Tuple[ParamVector, ParamVector]]

DEFAULT_FD_EPS = 1e-4
SELF_TEST_FD_STEP = 1e-5
SELF_TEST_MAX_COORDINATES = 200
SELF_TEST_RANDOM_DIRECTIONS = 4

GRADIENT_NAMES = ("grad_theta_ol", "grad_omega_ol", "grad_theta_cl", "grad_omega_cl")

_logger = logging.getLogger(__name__)


class BilevelOracle:
    """A bundle of the outer (OL) and inner (CL) energies and their gradients.

    Attributes:
        f_ol, f_cl: (theta, omega) -> float
        grad_theta_ol, grad_theta_cl: (theta, omega) -> vector of length m
        grad_omega_ol, grad_omega_cl: (theta, omega) -> vector of length n
        hvp_omega_omega_cl: optional (theta, omega, v) -> [d2 F_CL / d omega2] v
        cross_vjp_cl: optional (theta, omega, u) -> [d2 F_CL / d omega d theta]^T u
        dims: (m, n)
    Note:
        Stochastic problems pass a batch_binder; at_batch(index) then returns
        a deterministic oracle over that minibatch. Deterministic oracles
        return themselves.
    """

    name: str
    dims: Tuple[int, int]
    f_ol: ValueFunction
    f_cl: ValueFunction
    grad_theta_ol: GradientFunction
    grad_omega_ol: GradientFunction
    grad_theta_cl: GradientFunction
    grad_omega_cl: GradientFunction
    hvp_omega_omega_cl: Optional[ProductFunction]
    cross_vjp_cl: Optional[ProductFunction]
    reentrant: bool
    batch_index: Optional[int]

    def __init__(
        self,
        *,
        f_ol: ValueFunction,
        f_cl: ValueFunction,
        grad_theta_ol: GradientFunction,
        grad_omega_ol: GradientFunction,
        grad_theta_cl: GradientFunction,
        grad_omega_cl: GradientFunction,
        dims: Tuple[int, int],
        hvp_omega_omega_cl: Optional[ProductFunction] = None,
        cross_vjp_cl: Optional[ProductFunction] = None,
        omega_post_update: Optional[Callable[[ParamVector], ParamVector]] = None,
        batch_binder: Optional[Callable[[int], "BilevelOracle"]] = None,
        batch_index: Optional[int] = None,
        point_sampler: Optional[PointSampler] = None,
        reentrant: bool = True,
        name: str = "oracle",
    ):
        m, n = int(dims[0]), int(dims[1])
        if m <= 0 or n <= 0:
            raise ConfigurationError(f"Oracle dims must be positive, got {dims}")
        self.name = name
        self.dims = (m, n)
        self.f_ol = f_ol
        self.f_cl = f_cl
        self.grad_theta_ol = grad_theta_ol
        self.grad_omega_ol = grad_omega_ol
        self.grad_theta_cl = grad_theta_cl
        self.grad_omega_cl = grad_omega_cl
        self.hvp_omega_omega_cl = hvp_omega_omega_cl
        self.cross_vjp_cl = cross_vjp_cl
        self.reentrant = reentrant
        self.batch_index = batch_index
        self._omega_post_update = omega_post_update
        self._batch_binder = batch_binder
        self._point_sampler = point_sampler

    def __str__(self):
        return f"BilevelOracle(name={self.name}, dims={self.dims})"

    @property
    def m(self) -> int:
        return self.dims[0]

    @property
    def n(self) -> int:
        return self.dims[1]

    @property
    def is_stochastic(self) -> bool:
        return self._batch_binder is not None

    def at_batch(self, index: int) -> "BilevelOracle":
        if self._batch_binder is None:
            return self
        return self._batch_binder(int(index))

    def post_update_omega(self, omega: ParamVector) -> ParamVector:
        if self._omega_post_update is None:
            return omega
        return self._omega_post_update(omega)

    def sample_point(self, rng: np.random.Generator) -> Tuple[ParamVector, ParamVector]:
        """A typical (theta, omega) for gradient checks; standard normal by default."""
        if self._point_sampler is not None:
            return self._point_sampler(rng)
        return rng.standard_normal(self.m), rng.standard_normal(self.n)


def fd_directional_jacobian(
    grad_fn: GradientFunction,
    theta: ParamVector,
    omega: ParamVector,
    direction: ParamVector,
    out_length: int,
    eps: float = DEFAULT_FD_EPS,
    diagnostics: Optional[List[str]] = None,
    label: str = "fd",
    report_round_off: bool = True,
) -> ParamVector:
    """Central difference of grad_fn along omega in the given direction.
    The direction is normalized before differencing and the result rescaled
    by its norm, so eps keeps the same meaning whatever the magnitude.
    Args:
        grad_fn: any gradient function of (theta, omega)
        direction: a vector of length n
        out_length: length of grad_fn's output (returned as zeros for a zero direction)
        diagnostics: warnings are appended here when given
        report_round_off: warn when both gradient evaluations are bitwise equal;
            off for gradients that often do not depend on omega at all
    Returns:
        (grad_fn(theta, omega + eps*d) - grad_fn(theta, omega - eps*d)) / (2*eps) * |v|
    """
    if eps <= 0:
        raise ConfigurationError(f"Finite-difference eps must be positive, got {eps}")
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return np.zeros(out_length)
    unit = direction / norm
    grad_plus = np.asarray(grad_fn(theta, omega + eps * unit), dtype=np.float64)
    grad_minus = np.asarray(grad_fn(theta, omega - eps * unit), dtype=np.float64)
    if report_round_off and np.array_equal(grad_plus, grad_minus):
        message = (
            f"{label}: both gradient evaluations are bitwise equal at eps={eps}, "
            f"|omega|={float(np.linalg.norm(omega)):.3g}; the difference is lost to round-off"
        )
        _logger.warning(message)
        if diagnostics is not None:
            diagnostics.append(message)
    return (grad_plus - grad_minus) / (2.0 * eps) * norm


def hvp_omega_omega_fd(
    oracle: BilevelOracle,
    theta: ParamVector,
    omega: ParamVector,
    v: ParamVector,
    eps: float = DEFAULT_FD_EPS,
    diagnostics: Optional[List[str]] = None,
) -> ParamVector:
    """[d2 F_CL / d omega2] v by central differences of grad_omega_cl."""
    return fd_directional_jacobian(
        oracle.grad_omega_cl,
        theta,
        omega,
        v,
        out_length=oracle.n,
        eps=eps,
        diagnostics=diagnostics,
        label="hvp_omega_omega_fd",
    )


def cross_vjp_fd(
    oracle: BilevelOracle,
    theta: ParamVector,
    omega: ParamVector,
    u: ParamVector,
    eps: float = DEFAULT_FD_EPS,
    diagnostics: Optional[List[str]] = None,
) -> ParamVector:
    """[d2 F_CL / d omega d theta]^T u by central differences of grad_theta_cl along omega.
    Mixed partials commute for the twice-differentiable energies in scope."""
    return fd_directional_jacobian(
        oracle.grad_theta_cl,
        theta,
        omega,
        u,
        out_length=oracle.m,
        eps=eps,
        diagnostics=diagnostics,
        label="cross_vjp_fd",
    )


class SelfTestReport:
    """Result of oracle_self_test.
    Attributes:
        max_rel_err (dict): worst relative error per gradient over all probes
        mode (dict): 'coordinate' or 'directional' per gradient
        failed (list): gradient names whose error exceeded tol
    """

    def __init__(
        self,
        *,
        oracle_name: str,
        max_rel_err: Dict[str, float],
        mode: Dict[str, str],
        tol: float,
        probes: int,
    ):
        self.oracle_name = oracle_name
        self.max_rel_err = max_rel_err
        self.mode = mode
        self.tol = tol
        self.probes = probes
        self.failed = [k for k in GRADIENT_NAMES if max_rel_err.get(k, 0.0) > tol]

    @property
    def passed(self) -> bool:
        return len(self.failed) == 0

    def __str__(self):
        errors = ", ".join(f"{k}={self.max_rel_err[k]:.2e}" for k in GRADIENT_NAMES)
        status = "passed" if self.passed else f"FAILED {self.failed}"
        return f"{self.oracle_name}: {status} (tol={self.tol:g}; {errors})"

    def to_dict(self) -> Dict[str, object]:
        return {
            "oracle": self.oracle_name,
            "max_rel_err": dict(self.max_rel_err),
            "mode": dict(self.mode),
            "tol": self.tol,
            "probes": self.probes,
            "failed": list(self.failed),
            "passed": self.passed,
        }


def _checked_value(fn: ValueFunction, theta, omega, name: str, probe: int) -> float:
    value = float(fn(theta, omega))
    if not np.isfinite(value):
        raise OracleEvaluationError(f"{name} returned {value}", function=name, probe=probe)
    return value


def _checked_gradient(fn: GradientFunction, theta, omega, name: str, probe: int, length: int):
    grad = as_param_vector(fn(theta, omega), length=length, name=name)
    if not is_all_finite(grad):
        raise OracleEvaluationError(
            _build_non_finite_message(name, grad), function=name, probe=probe
        )
    return grad


def _gradient_error(
    value_fn: Callable[[ParamVector], float],
    analytic: ParamVector,
    point: ParamVector,
    base_value: float,
    step: float,
    rng: np.random.Generator,
) -> Tuple[float, str]:
    floor = 1e-6 * max(1.0, abs(base_value))
    if point.shape[0] <= SELF_TEST_MAX_COORDINATES:
        numeric = np.empty_like(point)
        for j in range(point.shape[0]):
            shifted = point.copy()
            shifted[j] = point[j] + step
            f_plus = value_fn(shifted)
            shifted[j] = point[j] - step
            f_minus = value_fn(shifted)
            numeric[j] = (f_plus - f_minus) / (2.0 * step)
        denominator = max(float(np.linalg.norm(numeric)), floor)
        return float(np.linalg.norm(analytic - numeric)) / denominator, "coordinate"

    # Too many coordinates: check along the analytic gradient (catches any
    # rescaling) and a few random unit directions (catches structural errors).
    directions = []
    analytic_norm = float(np.linalg.norm(analytic))
    if analytic_norm > 0:
        directions.append(analytic / analytic_norm)
    for _ in range(SELF_TEST_RANDOM_DIRECTIONS):
        d = rng.standard_normal(point.shape[0])
        directions.append(d / np.linalg.norm(d))
    worst = 0.0
    for d in directions:
        numeric = (value_fn(point + step * d) - value_fn(point - step * d)) / (2.0 * step)
        predicted = float(analytic @ d)
        denominator = max(abs(numeric), 0.1 * analytic_norm, floor)
        worst = max(worst, abs(predicted - numeric) / denominator)
    return worst, "directional"


def oracle_self_test(
    oracle: BilevelOracle,
    probes: int = 3,
    seed: int = 0,
    tol: float = 1e-4,
    step: float = SELF_TEST_FD_STEP,
) -> SelfTestReport:
    """Compares all four gradients with central differences of f_ol / f_cl
    at random probe points.
    Args:
        oracle: the oracle to check
        probes: number of random (theta, omega) points
        seed: seeds the probe generator
        tol: relative error above which a gradient is flagged
    Returns:
        SelfTestReport with the worst relative error per gradient.
    Raises:
        OracleEvaluationError: a value or gradient was non-finite at a probe.
    """
    if probes < 1:
        raise ConfigurationError(f"probes must be >= 1, got {probes}")
    rng = np.random.default_rng(seed)
    m, n = oracle.dims
    max_rel_err = {name: 0.0 for name in GRADIENT_NAMES}
    mode = {}
    for probe in range(probes):
        theta, omega = oracle.sample_point(rng)
        theta = as_param_vector(theta, length=m, name="theta")
        omega = as_param_vector(omega, length=n, name="omega")
        f_ol = _checked_value(oracle.f_ol, theta, omega, "f_ol", probe)
        f_cl = _checked_value(oracle.f_cl, theta, omega, "f_cl", probe)
        checks = (
            ("grad_theta_ol", oracle.f_ol, f_ol, "theta"),
            ("grad_omega_ol", oracle.f_ol, f_ol, "omega"),
            ("grad_theta_cl", oracle.f_cl, f_cl, "theta"),
            ("grad_omega_cl", oracle.f_cl, f_cl, "omega"),
        )
        for name, value_fn, base_value, wrt in checks:
            if wrt == "theta":
                analytic = _checked_gradient(getattr(oracle, name), theta, omega, name, probe, m)

                def restricted(x, fn=value_fn):
                    return _checked_value(fn, x, omega, name, probe)

                err, used = _gradient_error(restricted, analytic, theta, base_value, step, rng)
            else:
                analytic = _checked_gradient(getattr(oracle, name), theta, omega, name, probe, n)

                def restricted(x, fn=value_fn):
                    return _checked_value(fn, theta, x, name, probe)

                err, used = _gradient_error(restricted, analytic, omega, base_value, step, rng)
            max_rel_err[name] = max(max_rel_err[name], err)
            mode[name] = used
    report = SelfTestReport(
        oracle_name=oracle.name,
        max_rel_err=max_rel_err,
        mode=mode,
        tol=tol,
        probes=probes,
    )
    if not report.passed:
        _logger.warning(f"Gradient self-test flagged {report.failed}: {report}")
    return report


class CountingOracle:
    """Wraps an oracle and counts what solvers ask of it.

    First-order gradient calls increment grad_eval_count; second-order
    products (analytic when the oracle supplies them, finite differences
    otherwise) increment hvp_eval_count; energies increment value_eval_count.
    """

    oracle: BilevelOracle
    fd_eps: float
    grad_eval_count: int
    hvp_eval_count: int
    value_eval_count: int
    diagnostics: List[str]

    def __init__(
        self,
        oracle: BilevelOracle,
        *,
        fd_eps: float = DEFAULT_FD_EPS,
        diagnostics: Optional[List[str]] = None,
    ):
        self.oracle = oracle
        self.fd_eps = fd_eps
        self.grad_eval_count = 0
        self.hvp_eval_count = 0
        self.value_eval_count = 0
        self.diagnostics = diagnostics if diagnostics is not None else []

    @property
    def dims(self) -> Tuple[int, int]:
        return self.oracle.dims

    def rebind(self, oracle: BilevelOracle) -> None:
        """Swaps the wrapped oracle (e.g. a new minibatch), keeping the counts."""
        self.oracle = oracle

    def f_ol(self, theta, omega) -> float:
        self.value_eval_count += 1
        return float(self.oracle.f_ol(theta, omega))

    def f_cl(self, theta, omega) -> float:
        self.value_eval_count += 1
        return float(self.oracle.f_cl(theta, omega))

    def grad_theta_ol(self, theta, omega) -> ParamVector:
        self.grad_eval_count += 1
        return np.asarray(self.oracle.grad_theta_ol(theta, omega), dtype=np.float64)

    def grad_omega_ol(self, theta, omega) -> ParamVector:
        self.grad_eval_count += 1
        return np.asarray(self.oracle.grad_omega_ol(theta, omega), dtype=np.float64)

    def grad_theta_cl(self, theta, omega) -> ParamVector:
        self.grad_eval_count += 1
        return np.asarray(self.oracle.grad_theta_cl(theta, omega), dtype=np.float64)

    def grad_omega_cl(self, theta, omega) -> ParamVector:
        self.grad_eval_count += 1
        return np.asarray(self.oracle.grad_omega_cl(theta, omega), dtype=np.float64)

    def hvp_omega_omega_cl(self, theta, omega, v) -> ParamVector:
        self.hvp_eval_count += 1
        if self.oracle.hvp_omega_omega_cl is not None:
            return np.asarray(self.oracle.hvp_omega_omega_cl(theta, omega, v), dtype=np.float64)
        return hvp_omega_omega_fd(
            self.oracle, theta, omega, v, eps=self.fd_eps, diagnostics=self.diagnostics
        )

    def cross_vjp_cl(self, theta, omega, u) -> ParamVector:
        self.hvp_eval_count += 1
        if self.oracle.cross_vjp_cl is not None:
            return np.asarray(self.oracle.cross_vjp_cl(theta, omega, u), dtype=np.float64)
        return cross_vjp_fd(
            self.oracle, theta, omega, u, eps=self.fd_eps, diagnostics=self.diagnostics
        )

    def hvp_omega_omega_ol(self, theta, omega, v) -> ParamVector:
        self.hvp_eval_count += 1
        return fd_directional_jacobian(
            self.oracle.grad_omega_ol,
            theta,
            omega,
            v,
            out_length=self.oracle.n,
            eps=self.fd_eps,
            diagnostics=self.diagnostics,
            label="hvp_omega_omega_ol",
        )

    def cross_vjp_ol(self, theta, omega, u) -> ParamVector:
        self.hvp_eval_count += 1
        return fd_directional_jacobian(
            self.oracle.grad_theta_ol,
            theta,
            omega,
            u,
            out_length=self.oracle.m,
            eps=self.fd_eps,
            diagnostics=self.diagnostics,
            label="cross_vjp_ol",
            report_round_off=False,
        )

    def post_update_omega(self, omega: ParamVector) -> ParamVector:
        return self.oracle.post_update_omega(omega)
