# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Bilevel solution strategies sharing one oracle interface and one trace format.

Variants:
    ADI         alternating gradient steps on omega and theta, no response term
    FastGR      inner steps, then the closed-form response gradient built from
                first-order gradients only (no Hessian or Jacobian products)
    ImplicitCG  inner solve to tolerance, response via conjugate gradient
    Neumann     inner solve to tolerance, response via a truncated Neumann series
    RHG         reverse-mode differentiation through the unrolled inner steps
    TRHG        RHG restricted to the last `truncate` inner steps
    BDA         unrolled inner steps on the aggregated direction
                (1 - mu) grad_omega F_CL + mu grad_omega F_OL
"""

import logging
import math
import re
import time
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from logging import Logger
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np

from .buffer_tracking import BufferTracker  # type:ignore
from .core import DEFAULT_FD_EPS, BilevelOracle, CountingOracle, ParamVector  # type:ignore
from .errors import (
    ConfigurationError,
    OracleEvaluationError,
    ShapeMismatchError,
    SolverDivergedError,
)  # type:ignore
from .internal_utils import as_param_vector, is_all_finite  # type:ignore
from .linalg import (
    DEGENERATE_GRADIENT_NORM,
    LinearOperator,
    cg_solve,
    neumann_hypergrad,
)  # type:ignore
from .nn import AdamState, adam_step  # type:ignore

_logger = logging.getLogger(__name__)


class SolverVariant(Enum):
    ADI = "ADI"
    FAST_GR = "FastGR"
    IMPLICIT_CG = "ImplicitCG"
    NEUMANN = "Neumann"
    RHG = "RHG"
    TRHG = "TRHG"
    BDA = "BDA"

    @classmethod
    def parse(cls, value: Union[str, "SolverVariant"]) -> "SolverVariant":
        if isinstance(value, cls):
            return value
        key = _normalize_name(str(value))
        for variant in cls:
            if _normalize_name(variant.value) == key:
                return variant
        if key in _VARIANT_ALIASES:
            return cls(_VARIANT_ALIASES[key])
        raise ConfigurationError(
            f"Unknown solver variant {value!r}; expected one of {[v.value for v in cls]}"
        )


def _normalize_name(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


_VARIANT_ALIASES = {
    "ours": "FastGR",
    "cg": "ImplicitCG",
    "ns": "Neumann",
    "truncatedrhg": "TRHG",
}

UNROLLED_VARIANTS = (SolverVariant.RHG, SolverVariant.TRHG, SolverVariant.BDA)
IMPLICIT_VARIANTS = (SolverVariant.IMPLICIT_CG, SolverVariant.NEUMANN)

DEFAULT_INNER_STEPS = {
    SolverVariant.ADI: 1,
    SolverVariant.FAST_GR: 1,
    SolverVariant.IMPLICIT_CG: 100,
    SolverVariant.NEUMANN: 100,
    SolverVariant.RHG: 10,
    SolverVariant.TRHG: 10,
    SolverVariant.BDA: 10,
}
RECORD_THETA_MAX_DIM = 4096
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class SolverConfig:
    """Settings of one solver run.

    inner_steps defaults to 1 for ADI / FastGR, 100 (a cap, with inner_tol as
    the target) for ImplicitCG / Neumann and 10 for the unrolled variants.
    truncate defaults to inner_steps, or half of it for TRHG. neumann_step
    defaults to alpha. record_theta defaults to True when theta has at most
    4096 entries. stop_rel_tol = inf disables the stopping rule.
    """

    variant: SolverVariant = SolverVariant.FAST_GR
    alpha: float = 0.1
    beta: float = 0.01
    inner_steps: Optional[int] = None
    outer_iters: int = 1000
    truncate: Optional[int] = None
    cg_tol: float = 1e-10
    cg_max_iter: int = 100
    neumann_terms: int = 50
    neumann_step: Optional[float] = None
    inner_tol: float = 1e-8
    bda_mu: float = 0.5
    stop_rel_tol: float = 1e-5
    seed: int = 0
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    fd_eps: float = DEFAULT_FD_EPS
    record_theta: Optional[bool] = None
    record_timing: bool = True

    def __post_init__(self):
        variant = SolverVariant.parse(self.variant)
        object.__setattr__(self, "variant", variant)
        for name in ("alpha", "beta", "cg_tol", "inner_tol", "fd_eps", "adam_eps"):
            value = float(getattr(self, name))
            if not value > 0:
                raise ConfigurationError(f"{name} must be positive, got {value}", key=name)
            object.__setattr__(self, name, value)
        for name in ("outer_iters", "cg_max_iter", "neumann_terms"):
            value = int(getattr(self, name))
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}", key=name)
            object.__setattr__(self, name, value)
        inner_steps = DEFAULT_INNER_STEPS[variant] if self.inner_steps is None else int(self.inner_steps)
        if inner_steps < 1:
            raise ConfigurationError(f"inner_steps must be >= 1, got {inner_steps}", key="inner_steps")
        object.__setattr__(self, "inner_steps", inner_steps)
        if self.truncate is None:
            truncate = max(1, inner_steps // 2) if variant == SolverVariant.TRHG else inner_steps
        else:
            truncate = int(self.truncate)
        if not 1 <= truncate <= inner_steps:
            raise ConfigurationError(
                f"truncate must be in [1, inner_steps={inner_steps}], got {truncate}", key="truncate"
            )
        object.__setattr__(self, "truncate", truncate)
        step = self.alpha if self.neumann_step is None else float(self.neumann_step)
        if not step > 0:
            raise ConfigurationError(f"neumann_step must be positive, got {step}", key="neumann_step")
        object.__setattr__(self, "neumann_step", step)
        if not 0.0 <= float(self.bda_mu) < 1.0:
            raise ConfigurationError(f"bda_mu must be in [0, 1), got {self.bda_mu}", key="bda_mu")
        object.__setattr__(self, "bda_mu", float(self.bda_mu))
        stop = float(self.stop_rel_tol)
        if math.isnan(stop) or stop < 0:
            raise ConfigurationError(f"stop_rel_tol must be >= 0, got {stop}", key="stop_rel_tol")
        object.__setattr__(self, "stop_rel_tol", stop)
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}", key="optimizer"
            )
        if self.optimizer == "adam" and variant in UNROLLED_VARIANTS:
            raise ConfigurationError(
                f"{variant.value} differentiates through plain gradient steps and requires optimizer sgd",
                key="optimizer",
            )
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= float(getattr(self, name)) < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1)", key=name)

    @property
    def stopping_enabled(self) -> bool:
        return not math.isinf(self.stop_rel_tol)

    def should_record_theta(self, m: int) -> bool:
        if self.record_theta is None:
            return m <= RECORD_THETA_MAX_DIM
        return bool(self.record_theta)

    def with_overrides(self, **changes: Any) -> "SolverConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["variant"] = self.variant.value
        return data

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], key_prefix: str = "solver") -> "SolverConfig":
        """Strict construction from a plain mapping (e.g. parsed YAML).
        Raises:
            ConfigurationError: an unknown key or an invalid value, naming the key path.
        """
        known = set(cls.field_names())
        for key in data:
            if key not in known:
                raise ConfigurationError(f"Unknown solver setting {key!r}", key=f"{key_prefix}.{key}")
        if "variant" not in data:
            raise ConfigurationError("Solver entry needs a variant", key=f"{key_prefix}.variant")
        values = dict(data)
        for name in ("stop_rel_tol", "alpha", "beta", "cg_tol", "inner_tol", "bda_mu", "fd_eps"):
            if name in values and isinstance(values[name], str):
                try:
                    values[name] = float(values[name].strip().lower().replace(".inf", "inf"))
                except ValueError:
                    raise ConfigurationError(
                        f"{name} must be a number, got {values[name]!r}", key=f"{key_prefix}.{name}"
                    )
        try:
            return cls(**values)
        except ConfigurationError as e:
            if e.key is not None and "." not in e.key:
                raise ConfigurationError(str(e).split(" (key:")[0], key=f"{key_prefix}.{e.key}")
            raise
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid solver setting: {e}", key=key_prefix)


class TraceStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass
class IterationRecord:
    iteration: int
    theta_rel_err: Optional[float]
    ol_rel_err: Optional[float]
    ol_value: float
    cl_value: float
    grad_norm_theta: float
    wall_ms: float
    grad_eval_count: int
    hvp_eval_count: int
    peak_tracked_bytes: int
    batch_index: Optional[int] = None


class SolverTrace:
    """Per-iteration records of one run plus its final state.

    records holds outer iterations 1..K (after each theta update); `initial`
    holds the values at the starting point. wall_ms and the evaluation counts
    are cumulative.
    """

    def __init__(
        self,
        *,
        variant: SolverVariant,
        config: Optional[SolverConfig] = None,
        records: Optional[List[IterationRecord]] = None,
        initial: Optional[IterationRecord] = None,
        status: TraceStatus = TraceStatus.MAX_ITERS,
        theta: Optional[np.ndarray] = None,
        omega: Optional[np.ndarray] = None,
        theta_history: Optional[List[np.ndarray]] = None,
        stop_iteration: Optional[int] = None,
        flags: Optional[Dict[str, int]] = None,
        diagnostics: Optional[List[str]] = None,
        message: Optional[str] = None,
        memory_report: Optional[Dict[str, Any]] = None,
    ):
        self.variant = variant
        self.config = config
        self.records = records if records is not None else []
        self.initial = initial
        self.status = status
        self.theta = theta
        self.omega = omega
        self.theta_history = theta_history
        self.stop_iteration = stop_iteration
        self.flags = flags if flags is not None else {}
        self.diagnostics = diagnostics if diagnostics is not None else []
        self.message = message
        self.memory_report = memory_report

    def __str__(self):
        final = self.final
        details = "" if final is None else (
            f", ol_value={final.ol_value!r}, theta_rel_err={final.theta_rel_err!r}"
        )
        return (
            f"SolverTrace(variant={self.variant.value}, status={self.status.value}, "
            f"iterations={self.iterations}{details})"
        )

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final(self) -> Optional[IterationRecord]:
        return self.records[-1] if self.records else None

    @property
    def diverged(self) -> bool:
        return self.status == TraceStatus.DIVERGED

    def validate(self) -> "SolverTrace":
        """Check if the run finished with finite parameters.
        Returns:
            (SolverTrace) This trace.
        Raises:
            SolverDivergedError: the run diverged.
        """
        if self.status == TraceStatus.DIVERGED:
            raise SolverDivergedError(
                message=f"{self.variant.value} diverged: {self.message}", trace=self
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant.value,
            "status": self.status.value,
            "iterations": self.iterations,
            "stop_iteration": self.stop_iteration,
            "flags": dict(self.flags),
            "message": self.message,
            "diagnostics": list(self.diagnostics),
        }


class InnerDescentResult(NamedTuple):
    omega: np.ndarray
    steps: int
    diverged_step: Optional[int] = None


class ResponseGradient(NamedTuple):
    g_r: np.ndarray
    degenerate_gradient: bool = False
    negative_curvature: bool = False
    neumann_diverged: bool = False
    iterations: int = 0


class UnrolledHypergradient(NamedTuple):
    hypergradient: np.ndarray
    omega: np.ndarray
    diverged_step: Optional[int] = None


OracleLike = Union[BilevelOracle, CountingOracle]


def _as_counting(oracle: OracleLike) -> CountingOracle:
    return oracle if isinstance(oracle, CountingOracle) else CountingOracle(oracle)


def inner_descent(
    oracle: OracleLike,
    theta: ParamVector,
    omega_start: ParamVector,
    alpha: float,
    steps: int,
    tol: Optional[float] = None,
    adam: Optional[AdamState] = None,
) -> InnerDescentResult:
    """Gradient descent on F_CL over omega with theta held fixed.
    Args:
        steps: number of updates (a cap when tol is given)
        tol: stop once |grad_omega F_CL| <= tol; the first update is always taken
        adam: when given, omega moves by Adam steps with this state instead of plain descent
    Returns:
        InnerDescentResult(omega, steps taken, index of the step that produced
        non-finite values or None)
    """
    if steps < 1:
        raise ConfigurationError(f"inner_descent needs steps >= 1, got {steps}")
    omega = np.array(omega_start, dtype=np.float64)
    taken = 0
    for step in range(steps):
        grad = oracle.grad_omega_cl(theta, omega)
        if not is_all_finite(grad):
            return InnerDescentResult(omega, taken, step)
        if tol is not None and step > 0 and float(np.linalg.norm(grad)) <= tol:
            break
        if adam is not None:
            omega, _ = adam_step(adam, omega, grad)
        else:
            omega = omega - alpha * grad
        omega = oracle.post_update_omega(omega)
        taken += 1
        if not is_all_finite(omega):
            return InnerDescentResult(omega, taken, step)
    return InnerDescentResult(omega, taken, None)


def fast_gr_response(oracle: OracleLike, theta: ParamVector, omega_hat: ParamVector) -> ResponseGradient:
    """G_R = -g_th * (g_cl . g_ol) / (g_cl . g_cl), with g_cl = grad_omega F_CL,
    g_ol = grad_omega F_OL and g_th = grad_theta F_CL at (theta, omega_hat).
    A vanishing g_cl gives G_R = 0 with degenerate_gradient set."""
    g_cl = oracle.grad_omega_cl(theta, omega_hat)
    g_ol = oracle.grad_omega_ol(theta, omega_hat)
    g_th = oracle.grad_theta_cl(theta, omega_hat)
    gram = float(g_cl @ g_cl)
    if math.sqrt(gram) < DEGENERATE_GRADIENT_NORM:
        return ResponseGradient(np.zeros_like(g_th), degenerate_gradient=True)
    return ResponseGradient(-g_th * (float(g_cl @ g_ol) / gram))


def total_hypergradient(
    oracle: OracleLike, theta: ParamVector, omega_hat: ParamVector, g_r: ParamVector
) -> np.ndarray:
    direct = oracle.grad_theta_ol(theta, omega_hat)
    if np.shape(g_r) != direct.shape:
        raise ShapeMismatchError(f"G_R must have shape {direct.shape}, got {np.shape(g_r)}")
    return direct + g_r


def _inner_hessian(oracle: CountingOracle, theta: ParamVector, omega_hat: ParamVector) -> LinearOperator:
    return LinearOperator(lambda v: oracle.hvp_omega_omega_cl(theta, omega_hat, v), omega_hat.shape[0])


def implicit_cg_response(
    oracle: OracleLike,
    theta: ParamVector,
    omega_hat: ParamVector,
    cg_tol: float = 1e-10,
    cg_max_iter: int = 100,
) -> ResponseGradient:
    """Solves [d2 F_CL / d omega2] B = -grad_omega F_OL by CG, returns cross_vjp(B)."""
    counting = _as_counting(oracle)
    rhs = -counting.grad_omega_ol(theta, omega_hat)
    solution = cg_solve(_inner_hessian(counting, theta, omega_hat), rhs, tol=cg_tol, max_iter=cg_max_iter)
    g_r = counting.cross_vjp_cl(theta, omega_hat, solution.x)
    return ResponseGradient(
        g_r, negative_curvature=solution.negative_curvature, iterations=solution.iters
    )


def neumann_response(
    oracle: OracleLike,
    theta: ParamVector,
    omega_hat: ParamVector,
    step: float,
    terms: int,
) -> ResponseGradient:
    """Like implicit_cg_response with the inverse Hessian replaced by a truncated Neumann series."""
    counting = _as_counting(oracle)
    rhs = -counting.grad_omega_ol(theta, omega_hat)
    series = neumann_hypergrad(_inner_hessian(counting, theta, omega_hat), rhs, step=step, terms=terms)
    g_r = counting.cross_vjp_cl(theta, omega_hat, series.x)
    return ResponseGradient(g_r, neumann_diverged=series.diverged, iterations=series.terms)


def rhg_hypergradient(
    oracle: OracleLike,
    theta: ParamVector,
    omega_start: ParamVector,
    alpha: float,
    K: int,
    truncate: Optional[int] = None,
    bda_mu: float = 0.0,
) -> UnrolledHypergradient:
    """d F_OL(theta, omega_K) / d theta through K unrolled inner steps.

    The forward pass records omega_0..omega_K. The reverse pass starts from
    p = grad_omega F_OL(omega_K), g = grad_theta F_OL(omega_K) and for
    k = K-1 down to K-truncate applies
        g <- g - alpha * cross_vjp(omega_k, p)
        p <- p - alpha * hvp(omega_k, p)
    With bda_mu > 0 the inner direction is (1 - mu) grad F_CL + mu grad F_OL and
    both Jacobians are mixed the same way. The omega post-update hook is
    treated as the identity in the reverse pass.
    """
    truncate = K if truncate is None else truncate
    if K < 1 or not 1 <= truncate <= K:
        raise ConfigurationError(f"Need K >= 1 and 1 <= truncate <= K, got K={K}, truncate={truncate}")
    counting = _as_counting(oracle)
    trajectory = [np.array(omega_start, dtype=np.float64)]
    for step in range(K):
        omega = trajectory[-1]
        direction = counting.grad_omega_cl(theta, omega)
        if bda_mu > 0.0:
            direction = (1.0 - bda_mu) * direction + bda_mu * counting.grad_omega_ol(theta, omega)
        following = counting.post_update_omega(omega - alpha * direction)
        if not is_all_finite(following):
            return UnrolledHypergradient(np.full(theta.shape[0], np.nan), following, step)
        trajectory.append(following)

    omega_final = trajectory[-1]
    adjoint = counting.grad_omega_ol(theta, omega_final)
    hypergradient = counting.grad_theta_ol(theta, omega_final)
    for k in range(K - 1, K - truncate - 1, -1):
        omega_k = trajectory[k]
        if bda_mu > 0.0:
            cross = (1.0 - bda_mu) * counting.cross_vjp_cl(theta, omega_k, adjoint) + bda_mu * counting.cross_vjp_ol(
                theta, omega_k, adjoint
            )
            curvature = (1.0 - bda_mu) * counting.hvp_omega_omega_cl(
                theta, omega_k, adjoint
            ) + bda_mu * counting.hvp_omega_omega_ol(theta, omega_k, adjoint)
        else:
            cross = counting.cross_vjp_cl(theta, omega_k, adjoint)
            curvature = counting.hvp_omega_omega_cl(theta, omega_k, adjoint)
        hypergradient = hypergradient - alpha * cross
        adjoint = adjoint - alpha * curvature
    return UnrolledHypergradient(hypergradient, omega_final, None)


class _StepResult(NamedTuple):
    direction: np.ndarray
    omega: np.ndarray
    diverged_at: Optional[str] = None
    response: Optional[ResponseGradient] = None


Reference = Union[Tuple[ParamVector, float], Any]


def _unpack_reference(reference: Reference) -> Tuple[Optional[np.ndarray], Optional[float]]:
    if reference is None:
        return None, None
    if hasattr(reference, "theta") and hasattr(reference, "phi"):
        return as_param_vector(reference.theta, name="reference theta"), float(reference.phi)
    theta_star, phi_star = reference
    theta_star = None if theta_star is None else as_param_vector(theta_star, name="reference theta")
    return theta_star, None if phi_star is None else float(phi_star)


def _relative_error(value: np.ndarray, target: np.ndarray) -> float:
    scale = float(np.linalg.norm(target))
    error = float(np.linalg.norm(value - target))
    return error / scale if scale > 0 else error


class BilevelSolver:
    """Runs one SolverConfig on one oracle.

    Attributes:
        clock: returns seconds; only differences are used
        tracker: receives every buffer the solver keeps alive, for peak_tracked_bytes
    """

    oracle: BilevelOracle
    config: SolverConfig
    logger: Logger
    clock: Callable[[], float]
    tracker: BufferTracker

    def __init__(
        self,
        oracle: BilevelOracle,
        config: SolverConfig,
        *,
        logger: Optional[Logger] = None,
        clock: Optional[Callable[[], float]] = None,
        tracker: Optional[BufferTracker] = None,
    ):
        self.oracle = oracle
        self.config = config
        self.logger = logger if logger is not None else _logger
        self.clock = clock if clock is not None else time.perf_counter
        self.tracker = tracker if tracker is not None else BufferTracker(label=config.variant.value)
        self._theta_adam: Optional[AdamState] = None
        self._omega_adam: Optional[AdamState] = None

    def _register_buffers(self, m: int, n: int) -> None:
        config = self.config
        variant = config.variant
        vector_bytes = 8
        self.tracker.allocate("theta", m * vector_bytes)
        self.tracker.allocate("theta_previous", m * vector_bytes)
        self.tracker.allocate("omega", n * vector_bytes)
        self.tracker.allocate("hypergradient", m * vector_bytes)
        self.tracker.allocate("inner_gradient", n * vector_bytes)
        if variant == SolverVariant.FAST_GR:
            self.tracker.allocate("grad_omega_ol", n * vector_bytes)
            self.tracker.allocate("grad_theta_cl", m * vector_bytes)
        elif variant == SolverVariant.IMPLICIT_CG:
            # x, r, p and A p
            self.tracker.allocate("cg_work", 4 * n * vector_bytes)
            self.tracker.allocate("grad_omega_ol", n * vector_bytes)
        elif variant == SolverVariant.NEUMANN:
            # term, partial sum and A term
            self.tracker.allocate("neumann_work", 3 * n * vector_bytes)
            self.tracker.allocate("grad_omega_ol", n * vector_bytes)
        elif variant in UNROLLED_VARIANTS:
            self.tracker.allocate("trajectory", (config.inner_steps + 1) * n * vector_bytes)
            self.tracker.allocate("adjoint", n * vector_bytes)
            self.tracker.allocate("grad_omega_ol", n * vector_bytes)
        if config.optimizer == "adam":
            self.tracker.allocate("adam_theta", 2 * m * vector_bytes)
            self.tracker.allocate("adam_omega", 2 * n * vector_bytes)

    def _step(self, oracle: CountingOracle, theta: np.ndarray, omega: np.ndarray) -> _StepResult:
        config = self.config
        variant = config.variant
        if variant in UNROLLED_VARIANTS:
            mu = config.bda_mu if variant == SolverVariant.BDA else 0.0
            unrolled = rhg_hypergradient(
                oracle, theta, omega, config.alpha, config.inner_steps, config.truncate, bda_mu=mu
            )
            if unrolled.diverged_step is not None:
                return _StepResult(unrolled.hypergradient, unrolled.omega, f"inner step {unrolled.diverged_step}")
            return _StepResult(unrolled.hypergradient, unrolled.omega)

        tol = config.inner_tol if variant in IMPLICIT_VARIANTS else None
        inner = inner_descent(
            oracle, theta, omega, config.alpha, config.inner_steps, tol=tol, adam=self._omega_adam
        )
        if inner.diverged_step is not None:
            return _StepResult(np.zeros_like(theta), inner.omega, f"inner step {inner.diverged_step}")
        omega_hat = inner.omega
        if variant == SolverVariant.ADI:
            return _StepResult(oracle.grad_theta_ol(theta, omega_hat), omega_hat)
        if variant == SolverVariant.FAST_GR:
            # degenerate g_cl gives G_R = 0, an ADI step
            response = fast_gr_response(oracle, theta, omega_hat)
        elif variant == SolverVariant.IMPLICIT_CG:
            response = implicit_cg_response(oracle, theta, omega_hat, config.cg_tol, config.cg_max_iter)
        else:
            response = neumann_response(oracle, theta, omega_hat, config.neumann_step, config.neumann_terms)
        direction = total_hypergradient(oracle, theta, omega_hat, response.g_r)
        return _StepResult(direction, omega_hat, response=response)

    def _count_flags(self, flags: Dict[str, int], response: Optional[ResponseGradient], iteration: int) -> None:
        if response is None:
            return
        for name in ("degenerate_gradient", "negative_curvature", "neumann_diverged"):
            if getattr(response, name):
                if name not in flags:
                    self.logger.warning(
                        f"{self.config.variant.value}: {name.replace('_', ' ')} at outer iteration {iteration}"
                    )
                flags[name] = flags.get(name, 0) + 1

    def run(
        self,
        theta0: ParamVector,
        omega0: ParamVector,
        reference: Reference = None,
    ) -> SolverTrace:
        """Runs outer iterations until the stopping rule or outer_iters.
        Args:
            theta0, omega0: starting point (copied)
            reference: optional (theta*, phi*) or an object with theta / phi
                attributes, used for theta_rel_err and ol_rel_err
        Returns:
            SolverTrace; divergence is reported through its status (see validate()).
        """
        config = self.config
        m, n = self.oracle.dims
        theta = as_param_vector(theta0, length=m, name="theta0")
        omega = as_param_vector(omega0, length=n, name="omega0")
        theta_star, phi_star = _unpack_reference(reference)
        if theta_star is not None and theta_star.shape[0] != m:
            raise ShapeMismatchError(f"reference theta must have length {m}, got {theta_star.shape[0]}")

        diagnostics: List[str] = []
        oracle = CountingOracle(self.oracle, fd_eps=config.fd_eps, diagnostics=diagnostics)
        self.tracker.reset()
        self._register_buffers(m, n)
        if config.optimizer == "adam":
            self._theta_adam = AdamState(
                m, lr=config.beta, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps
            )
            self._omega_adam = AdamState(
                n, lr=config.alpha, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps
            )
        record_theta = config.should_record_theta(m)
        history: Optional[List[np.ndarray]] = [] if record_theta else None

        def errors(theta_k: np.ndarray, ol_value: float):
            theta_err = None if theta_star is None else _relative_error(theta_k, theta_star)
            ol_err = None
            if phi_star is not None:
                ol_err = abs(ol_value - phi_star) / abs(phi_star) if phi_star != 0 else abs(ol_value)
            return theta_err, ol_err

        initial_ol = oracle.f_ol(theta, omega)
        initial_cl = oracle.f_cl(theta, omega)
        initial_errors = errors(theta, initial_ol)
        initial = IterationRecord(
            iteration=0,
            theta_rel_err=initial_errors[0],
            ol_rel_err=initial_errors[1],
            ol_value=initial_ol,
            cl_value=initial_cl,
            grad_norm_theta=0.0,
            wall_ms=0.0,
            grad_eval_count=0,
            hvp_eval_count=0,
            peak_tracked_bytes=self.tracker.peak_bytes,
            batch_index=self.oracle.batch_index,
        )

        records: List[IterationRecord] = []
        flags: Dict[str, int] = {}
        status = TraceStatus.MAX_ITERS
        stop_iteration = None
        message = None
        elapsed = 0.0
        for k in range(1, config.outer_iters + 1):
            bound = self.oracle.at_batch(k) if self.oracle.is_stochastic else self.oracle
            oracle.rebind(bound)
            started = self.clock()
            try:
                step = self._step(oracle, theta, omega)
            except OracleEvaluationError as e:
                step = _StepResult(np.zeros_like(theta), omega, str(e))
            if step.diverged_at is None and not is_all_finite(step.direction, step.omega):
                step = step._replace(diverged_at="non-finite hypergradient or omega")
            theta_previous = theta
            if step.diverged_at is None:
                if self._theta_adam is not None:
                    theta, _ = adam_step(self._theta_adam, theta, step.direction)
                else:
                    theta = theta - config.beta * step.direction
                omega = step.omega
            if config.record_timing:
                elapsed += self.clock() - started
            self._count_flags(flags, step.response, k)

            if step.diverged_at is not None or not is_all_finite(theta):
                status = TraceStatus.DIVERGED
                message = f"outer iteration {k}: {step.diverged_at or 'non-finite theta'}"
                self.logger.warning(f"{config.variant.value} diverged at {message}")
                break

            try:
                ol_value = oracle.f_ol(theta, omega)
                cl_value = oracle.f_cl(theta, omega)
            except OracleEvaluationError as e:
                ol_value, cl_value = float("nan"), float("nan")
                diagnostics.append(str(e))
            if not is_all_finite(ol_value, cl_value):
                status = TraceStatus.DIVERGED
                message = f"outer iteration {k}: non-finite energies"
                self.logger.warning(f"{config.variant.value} diverged at {message}")
                break
            theta_err, ol_err = errors(theta, ol_value)
            record = IterationRecord(
                iteration=k,
                theta_rel_err=theta_err,
                ol_rel_err=ol_err,
                ol_value=ol_value,
                cl_value=cl_value,
                grad_norm_theta=float(np.linalg.norm(step.direction)),
                wall_ms=elapsed * 1000.0,
                grad_eval_count=oracle.grad_eval_count,
                hvp_eval_count=oracle.hvp_eval_count,
                peak_tracked_bytes=self.tracker.peak_bytes,
                batch_index=bound.batch_index,
            )
            records.append(record)
            if history is not None:
                history.append(theta.copy())
            if self.logger.isEnabledFor(logging.DEBUG):
                self.logger.debug(
                    f"{config.variant.value} iteration {k}: ol={ol_value!r} cl={cl_value!r} "
                    f"|d|={record.grad_norm_theta!r} theta_rel_err={theta_err!r}"
                )

            if config.stopping_enabled:
                change = float(np.linalg.norm(theta - theta_previous))
                scale = float(np.linalg.norm(theta))
                relative_change = change / scale if scale > 0 else change
                if relative_change <= config.stop_rel_tol:
                    status = TraceStatus.CONVERGED
                    stop_iteration = k
                    break

        return SolverTrace(
            variant=config.variant,
            config=config,
            records=records,
            initial=initial,
            status=status,
            theta=theta,
            omega=omega,
            theta_history=history,
            stop_iteration=stop_iteration,
            flags=flags,
            diagnostics=diagnostics,
            message=message,
            memory_report=self.tracker.generate_metrics_report(),
        )


def run_solver(
    oracle: BilevelOracle,
    config: SolverConfig,
    theta0: ParamVector,
    omega0: ParamVector,
    reference: Reference = None,
    *,
    logger: Optional[Logger] = None,
    clock: Optional[Callable[[], float]] = None,
    tracker: Optional[BufferTracker] = None,
) -> SolverTrace:
    """Runs config.variant on the oracle from (theta0, omega0). See BilevelSolver.run."""
    solver = BilevelSolver(oracle, config, logger=logger, clock=clock, tracker=tracker)
    return solver.run(theta0, omega0, reference)
