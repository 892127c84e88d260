# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Data hyper-cleaning: learn per-sample weights sigmoid(theta_i) for a training
set whose labels are partly corrupted, so that a softmax classifier trained on
the weighted loss does well on a clean validation set.

    F_CL(theta, omega) = sum_i sigmoid(theta_i) * l_i(omega) + cl_l2 * |omega|^2
    F_OL(theta, omega) = sum_{val} l(omega) + eta * |omega|^2
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from ..core import BilevelOracle  # type:ignore
from ..errors import ConfigurationError  # type:ignore
from ..internal_utils import stable_sigmoid  # type:ignore
from .datasets import dump_dataset  # type:ignore
from .softmax import (
    accuracy,
    head_gradient,
    head_logit_directions,
    head_losses,
    head_size,
    softmax_jvp,
)  # type:ignore


@dataclass(frozen=True)
class HyperCleanSpec:
    n_train: int = 500
    n_val: int = 500
    n_test: int = 500
    classes: int = 5
    feature_dim: int = 20
    corruption_rate: float = 0.5
    eta: float = 0.0
    cl_l2: float = 1e-3
    separation: float = 4.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_train", "n_val", "n_test", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.classes < 2:
            raise ConfigurationError(f"classes must be >= 2, got {self.classes}")
        if self.feature_dim < self.classes:
            raise ConfigurationError(
                f"feature_dim ({self.feature_dim}) must be >= classes ({self.classes})"
            )
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ConfigurationError(f"corruption_rate must be in [0, 1], got {self.corruption_rate}")
        if self.eta < 0 or self.cl_l2 < 0:
            raise ConfigurationError("eta and cl_l2 must be >= 0")


class HyperCleanDataset:
    """Train / validation / test splits; train labels partly corrupted."""

    def __init__(self, spec: HyperCleanSpec):
        rng = np.random.default_rng(spec.seed)
        k, d = spec.classes, spec.feature_dim
        # centered simplex vertices, pairwise `separation` apart, rotated into R^d
        simplex = (np.eye(k) - 1.0 / k) * (spec.separation / np.sqrt(2.0))
        rotation, _ = np.linalg.qr(rng.standard_normal((d, k)))
        self.centers = simplex @ rotation.T

        def draw(count):
            labels = rng.integers(0, k, size=count)
            return self.centers[labels] + spec.noise * rng.standard_normal((count, d)), labels

        self.x_train, self.clean_train_labels = draw(spec.n_train)
        self.x_val, self.y_val = draw(spec.n_val)
        self.x_test, self.y_test = draw(spec.n_test)

        corrupted = rng.permutation(spec.n_train)[: int(round(spec.corruption_rate * spec.n_train))]
        self.truth_mask = np.zeros(spec.n_train, dtype=bool)
        self.truth_mask[corrupted] = True
        self.y_train = self.clean_train_labels.copy()
        shifts = rng.integers(1, k, size=corrupted.shape[0])
        self.y_train[corrupted] = (self.y_train[corrupted] + shifts) % k

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            [
                ("x_train", self.x_train),
                ("y_train", self.y_train.astype(np.float64)),
                ("clean_train_labels", self.clean_train_labels.astype(np.float64)),
                ("truth_mask", self.truth_mask.astype(np.float64)),
                ("x_val", self.x_val),
                ("y_val", self.y_val.astype(np.float64)),
                ("x_test", self.x_test),
                ("y_test", self.y_test.astype(np.float64)),
            ]
        )


class HyperCleanProblem:
    """The oracle plus what is needed to score it.
    Attributes:
        oracle: theta = per-sample weight logits (n_train), omega = softmax regression params
        truth_mask: True where the training label was corrupted
        dataset: the generated splits
    """

    def __init__(self, spec: HyperCleanSpec, dataset: HyperCleanDataset, oracle: BilevelOracle):
        self.spec = spec
        self.dataset = dataset
        self.oracle = oracle
        self.truth_mask = dataset.truth_mask

    def test_accuracy(self, omega: np.ndarray) -> float:
        return accuracy(self.dataset.x_test, self.dataset.y_test, omega, self.spec.classes)

    def val_accuracy(self, omega: np.ndarray) -> float:
        return accuracy(self.dataset.x_val, self.dataset.y_val, omega, self.spec.classes)

    def initial_point(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.oracle.m), np.zeros(self.oracle.n)

    def dump(self, path: str) -> None:
        header: Dict[str, object] = {"problem": "hyperclean", "spec": asdict(self.spec)}
        dump_dataset(path, self.dataset.arrays(), header)


def hyperclean_oracle(spec: HyperCleanSpec) -> HyperCleanProblem:
    data = HyperCleanDataset(spec)
    k = spec.classes
    x_tr, y_tr, x_val, y_val = data.x_train, data.y_train, data.x_val, data.y_val

    def f_cl(theta, omega):
        losses, _, _ = head_losses(x_tr, y_tr, omega, k)
        return float(np.sum(stable_sigmoid(theta) * losses) + spec.cl_l2 * omega @ omega)

    def f_ol(theta, omega):
        losses, _, _ = head_losses(x_val, y_val, omega, k)
        return float(np.sum(losses) + spec.eta * omega @ omega)

    def grad_theta_cl(theta, omega):
        losses, _, _ = head_losses(x_tr, y_tr, omega, k)
        s = stable_sigmoid(theta)
        return s * (1.0 - s) * losses

    def grad_omega_cl(theta, omega):
        _, _, logit_grads = head_losses(x_tr, y_tr, omega, k)
        weights = stable_sigmoid(theta)[:, None]
        return head_gradient(x_tr, weights * logit_grads) + 2.0 * spec.cl_l2 * omega

    def grad_theta_ol(theta, omega):
        return np.zeros(theta.shape[0])

    def grad_omega_ol(theta, omega):
        _, _, logit_grads = head_losses(x_val, y_val, omega, k)
        return head_gradient(x_val, logit_grads) + 2.0 * spec.eta * omega

    def hvp_omega_omega_cl(theta, omega, v):
        _, probs, _ = head_losses(x_tr, y_tr, omega, k)
        weights = stable_sigmoid(theta)[:, None]
        curvature = softmax_jvp(probs, head_logit_directions(x_tr, v, k))
        return head_gradient(x_tr, weights * curvature) + 2.0 * spec.cl_l2 * v

    def cross_vjp_cl(theta, omega, u):
        _, _, logit_grads = head_losses(x_tr, y_tr, omega, k)
        s = stable_sigmoid(theta)
        return s * (1.0 - s) * np.sum(logit_grads * head_logit_directions(x_tr, u, k), axis=1)

    def point_sampler(rng):
        return rng.standard_normal(spec.n_train), 0.1 * rng.standard_normal(head_size(spec.feature_dim, k))

    oracle = BilevelOracle(
        f_ol=f_ol,
        f_cl=f_cl,
        grad_theta_ol=grad_theta_ol,
        grad_omega_ol=grad_omega_ol,
        grad_theta_cl=grad_theta_cl,
        grad_omega_cl=grad_omega_cl,
        hvp_omega_omega_cl=hvp_omega_omega_cl,
        cross_vjp_cl=cross_vjp_cl,
        dims=(spec.n_train, head_size(spec.feature_dim, k)),
        point_sampler=point_sampler,
        name=f"hyperclean(n_train={spec.n_train}, classes={k})",
    )
    return HyperCleanProblem(spec, data, oracle)
