# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Built-in checks run by `bilevel-gr selftest`: oracle gradients against
finite differences, MLP reverse mode, metric trivial cases, the toy optimum,
finite-difference second-order operators and the closed-form response
gradient identity."""

import logging
import math
from logging import Logger
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .core import (
    SELF_TEST_FD_STEP,
    BilevelOracle,
    CountingOracle,
    cross_vjp_fd,
    hvp_omega_omega_fd,
    oracle_self_test,
)  # type:ignore
from .errors import BilevelError, SelfTestFailedError  # type:ignore
from .linalg import rank_one_min_norm_solve  # type:ignore
from .metrics import LN2, f1_corruption, fid_gaussian, js_histogram, mode_count  # type:ignore
from .nn import MLPSpec, mlp_gradient_check  # type:ignore
from .problems.gan import GAN_LOSSES, GANProblemSpec, gan_oracle  # type:ignore
from .problems.hyperclean import HyperCleanSpec, hyperclean_oracle  # type:ignore
from .problems.meta import MetaTaskSpec, meta_oracle  # type:ignore
from .problems.mog import MOGSpec  # type:ignore
from .problems.quadratic import quadratic_pair_hypergradient, quadratic_pair_oracle  # type:ignore
from .problems.toy import ToySpec, toy_oracle, toy_reference  # type:ignore
from .solvers import fast_gr_response, implicit_cg_response, rhg_hypergradient, total_hypergradient  # type:ignore

ORACLE_TOL = 1e-4
MLP_TOL = 1e-5
FD_OPERATOR_TOL = 1e-3
IDENTITY_TOL = 1e-12
IDENTITY_INSTANCES = 1000
HYPERGRADIENT_TOL = 1e-3
# leaky_relu networks are piecewise linear, so a small step avoids kink crossings
MLP_CHECK_STEP = 1e-6
GAN_CHECK_STEP = 1e-7

_logger = logging.getLogger(__name__)


class SelfTestCheck:
    def __init__(self, *, name: str, passed: bool, message: str = "", details: Optional[Dict[str, Any]] = None):
        self.name = name
        self.passed = passed
        self.message = message
        self.details = details if details is not None else {}

    def __str__(self):
        status = "ok" if self.passed else "FAILED"
        return f"[{status}] {self.name}" + (f": {self.message}" if self.message else "")

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "message": self.message, "details": self.details}


class SelfTestSuiteReport:
    def __init__(self, checks: List[SelfTestCheck]):
        self.checks = checks

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def __str__(self):
        lines = [str(c) for c in self.checks]
        lines.append(f"{len(self.checks) - len(self.failed)}/{len(self.checks)} checks passed")
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "failed": self.failed, "checks": [c.to_dict() for c in self.checks]}

    def validate(self) -> "SelfTestSuiteReport":
        """Returns self, or raises SelfTestFailedError naming the failed checks."""
        if not self.passed:
            raise SelfTestFailedError(f"Self-test failed: {self.failed}", report=self)
        return self


def _small_hyperclean_spec() -> HyperCleanSpec:
    return HyperCleanSpec(n_train=30, n_val=30, n_test=30, classes=3, feature_dim=5, seed=3)


def _small_meta_spec() -> MetaTaskSpec:
    return MetaTaskSpec(tasks=2, ways=2, shots=3, val_shots=3, input_dim=4, embed_dim=2, hidden=(5,), seed=3)


def _small_gan_spec(loss: str) -> GANProblemSpec:
    return GANProblemSpec(mog=MOGSpec(batch=16), loss=loss, hidden_width=16, hidden_layers=2, seed=3)


def _oracles_under_test() -> List[Tuple[str, Callable[[], BilevelOracle], float]]:
    oracles = [
        ("toy(n=1)", lambda: toy_oracle(ToySpec(n=1)), SELF_TEST_FD_STEP),
        ("toy(n=3)", lambda: toy_oracle(ToySpec(n=3, c=[2.0, 1.0, -0.5])), SELF_TEST_FD_STEP),
        ("quadratic_pair", lambda: quadratic_pair_oracle(3), SELF_TEST_FD_STEP),
        ("hyperclean", lambda: hyperclean_oracle(_small_hyperclean_spec()).oracle, SELF_TEST_FD_STEP),
        ("meta", lambda: meta_oracle(_small_meta_spec()).oracle, SELF_TEST_FD_STEP),
    ]
    for loss in GAN_LOSSES:
        oracles.append((f"gan({loss})", lambda loss=loss: gan_oracle(_small_gan_spec(loss)), GAN_CHECK_STEP))
    return oracles


def check_oracle_gradients() -> List[SelfTestCheck]:
    checks = []
    for name, build, step in _oracles_under_test():
        try:
            report = oracle_self_test(build(), probes=3, seed=0, tol=ORACLE_TOL, step=step)
        except BilevelError as e:
            checks.append(SelfTestCheck(name=f"gradients {name}", passed=False, message=str(e)))
            continue
        checks.append(
            SelfTestCheck(
                name=f"gradients {name}",
                passed=report.passed,
                message="" if report.passed else str(report),
                details=report.to_dict(),
            )
        )
    return checks


def check_mlp_backward() -> List[SelfTestCheck]:
    specs = {
        "generator": MLPSpec([2, 16, 16, 2]),
        "discriminator": MLPSpec([2, 16, 16, 1]),
        "discriminator3d": MLPSpec([3, 16, 16, 1]),
        "embedder": MLPSpec([8, 16, 4], activation="tanh"),
        "sigmoid_head": MLPSpec([4, 6, 1], activation="sigmoid", final_activation="sigmoid"),
    }
    checks = []
    for name, spec in specs.items():
        errors = mlp_gradient_check(spec, seed=0, step=MLP_CHECK_STEP)
        worst = max(errors.values())
        checks.append(
            SelfTestCheck(
                name=f"mlp backward {name}",
                passed=worst <= MLP_TOL,
                message=f"max rel err {worst:.2e}",
                details=errors,
            )
        )
    return checks


def check_metrics() -> List[SelfTestCheck]:
    rng = np.random.default_rng(0)
    samples = rng.standard_normal((400, 2))
    far = samples + 100.0
    centers = MOGSpec().centers()
    at_centers = np.repeat(centers, 10, axis=0)
    results = {
        "fid identical": (fid_gaussian(samples, samples).value, lambda v: abs(v) <= 1e-8),
        "fid unit shift": (
            fid_gaussian(np.zeros((10, 2)), np.tile([1.0, 0.0], (10, 1))).value,
            lambda v: abs(v - 1.0) <= 1e-6,
        ),
        "js identical": (js_histogram(samples, samples, (-4.0, 4.0, 8)).value, lambda v: abs(v) <= 1e-9),
        "js disjoint": (
            js_histogram(samples, far, (-5.0, 105.0, 8)).value,
            lambda v: abs(v - LN2) <= 1e-6,
        ),
        "mode count all": (
            mode_count(at_centers, centers, MOGSpec().sigma).value,
            lambda v: v == centers.shape[0],
        ),
        "f1 perfect": (
            f1_corruption(np.array([-10.0, 10.0, -10.0, 10.0]), np.array([True, False, True, False])).value,
            lambda v: v == 1.0,
        ),
    }
    return [
        SelfTestCheck(name=f"metric {name}", passed=bool(ok(value)), message=f"value {value!r}")
        for name, (value, ok) in results.items()
    ]


def check_toy_reference() -> List[SelfTestCheck]:
    reference = toy_reference(ToySpec(a=2.0, c=2.0, n=1))
    # a disagreeing quoted optimum is reported, not failed
    return [
        SelfTestCheck(
            name="toy optimum",
            passed=reference.closed_form_matches and abs(reference.theta[0] - 0.75 * math.pi) <= 1e-6,
            message="; ".join(reference.notes) if reference.discrepancy else "",
            details=reference.to_dict(),
        )
    ]


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b)) / max(float(np.linalg.norm(b)), 1e-12)


def check_fd_operators() -> List[SelfTestCheck]:
    checks = []
    rng = np.random.default_rng(1)
    cases = [
        ("toy(n=3)", toy_oracle(ToySpec(n=3, c=[2.0, 1.0, -0.5]))),
        ("hyperclean", hyperclean_oracle(_small_hyperclean_spec()).oracle),
    ]
    for name, oracle in cases:
        theta, omega = oracle.sample_point(rng)
        v = rng.standard_normal(oracle.n)
        hvp_err = _relative(hvp_omega_omega_fd(oracle, theta, omega, v), oracle.hvp_omega_omega_cl(theta, omega, v))
        cross_err = _relative(cross_vjp_fd(oracle, theta, omega, v), oracle.cross_vjp_cl(theta, omega, v))
        checks.append(
            SelfTestCheck(
                name=f"fd operators {name}",
                passed=max(hvp_err, cross_err) <= FD_OPERATOR_TOL,
                message=f"hvp {hvp_err:.2e}, cross {cross_err:.2e}",
            )
        )
    return checks


def _constant_oracle(g_th: np.ndarray, g_ol: np.ndarray, g_cl: np.ndarray) -> BilevelOracle:
    return BilevelOracle(
        f_ol=lambda theta, omega: 0.0,
        f_cl=lambda theta, omega: 0.0,
        grad_theta_ol=lambda theta, omega: np.zeros_like(g_th),
        grad_omega_ol=lambda theta, omega: g_ol,
        grad_theta_cl=lambda theta, omega: g_th,
        grad_omega_cl=lambda theta, omega: g_cl,
        dims=(g_th.shape[0], g_cl.shape[0]),
    )


def check_response_identity(instances: int = IDENTITY_INSTANCES) -> List[SelfTestCheck]:
    """Closed-form response gradient vs the outer-product system solved for its
    minimum-norm solution, on random non-degenerate gradients."""
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(instances):
        m, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        g_th, g_ol, g_cl = rng.standard_normal(m), rng.standard_normal(n), rng.standard_normal(n)
        oracle = _constant_oracle(g_th, g_ol, g_cl)
        closed = fast_gr_response(oracle, np.zeros(m), np.zeros(n)).g_r
        b = rank_one_min_norm_solve(g_cl, -g_ol, squared=True).b
        # (g_cl g_th^T)^T b
        pipeline = g_th * float(g_cl @ b)
        scale = max(float(np.linalg.norm(closed)), 1.0)
        worst = max(worst, float(np.linalg.norm(closed - pipeline)) / scale)
    return [
        SelfTestCheck(
            name="response gradient identity",
            passed=worst <= IDENTITY_TOL,
            message=f"max err {worst:.2e} over {instances} instances",
        )
    ]


def check_hypergradients() -> List[SelfTestCheck]:
    oracle = quadratic_pair_oracle(2)
    theta = np.array([1.0, -0.5])
    exact = quadratic_pair_hypergradient(theta)
    counting = CountingOracle(oracle)
    response = implicit_cg_response(counting, theta, theta.copy())
    implicit = total_hypergradient(counting, theta, theta.copy(), response.g_r)
    unrolled = rhg_hypergradient(counting, theta, np.zeros(2), alpha=0.3, K=200).hypergradient
    errors = {"implicit_cg": _relative(implicit, exact), "rhg": _relative(unrolled, exact)}
    return [
        SelfTestCheck(
            name=f"hypergradient {name} on quadratic pair",
            passed=err <= HYPERGRADIENT_TOL,
            message=f"rel err {err:.2e}",
        )
        for name, err in errors.items()
    ]


SUITE = (
    check_oracle_gradients,
    check_mlp_backward,
    check_metrics,
    check_toy_reference,
    check_fd_operators,
    check_response_identity,
    check_hypergradients,
)


def run_selftest(logger: Optional[Logger] = None) -> SelfTestSuiteReport:
    """Runs every check. Use report.validate() to turn failures into SelfTestFailedError."""
    logger = logger if logger is not None else _logger
    checks: List[SelfTestCheck] = []
    for group in SUITE:
        for check in group():
            if not check.passed:
                logger.warning(str(check))
            elif logger.isEnabledFor(logging.DEBUG):
                logger.debug(str(check))
            checks.append(check)
    return SelfTestSuiteReport(checks)
