# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Multi-task meta-features: a shared embedding network (theta) feeds one
softmax head per task (omega is all heads concatenated).

    F_CL(theta, omega) = sum_j l(theta, omega_j; train_j) + head_l2 * |omega|^2
    F_OL(theta, omega) = sum_j l(theta, omega_j; val_j)

Synthetic tasks share a latent linear structure: class means live in a
low-dimensional latent space that a fixed random map lifts into the input
space, so a common embedding helps every task.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core import BilevelOracle  # type:ignore
from ..errors import ConfigurationError, ShapeMismatchError  # type:ignore
from ..internal_utils import derive_seed  # type:ignore
from ..nn import MLPSpec, mlp_backward, mlp_forward, mlp_init  # type:ignore
from .evaluation_cache import LastPointCache  # type:ignore
from .softmax import accuracy, head_gradient, head_losses, head_size, split_head  # type:ignore


class MetaTask(NamedTuple):
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray


@dataclass(frozen=True)
class MetaTaskSpec:
    tasks: int = 4
    ways: int = 3
    shots: int = 5
    val_shots: int = 5
    input_dim: int = 8
    embed_dim: int = 4
    hidden: Tuple[int, ...] = (16,)
    activation: str = "tanh"
    head_l2: float = 1e-3
    separation: float = 2.0
    noise: float = 0.5
    seed: int = 0
    shared_spec: Optional[MLPSpec] = None

    def __post_init__(self):
        for name in ("tasks", "shots", "val_shots", "input_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.ways < 2:
            raise ConfigurationError(f"ways must be >= 2, got {self.ways}")
        if self.head_l2 < 0:
            raise ConfigurationError(f"head_l2 must be >= 0, got {self.head_l2}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        shared = self.shared_spec or MLPSpec(
            [self.input_dim, *self.hidden, self.embed_dim], activation=self.activation
        )
        if shared.input_dim != self.input_dim:
            raise ConfigurationError(
                f"Shared embedder input {shared.input_dim} does not match input_dim {self.input_dim}"
            )
        object.__setattr__(self, "shared_spec", shared)

    @property
    def head_dim(self) -> int:
        return head_size(self.shared_spec.output_dim, self.ways)


def generate_meta_tasks(spec: MetaTaskSpec) -> List[MetaTask]:
    rng = np.random.default_rng(spec.seed)
    lift = rng.standard_normal((spec.embed_dim, spec.input_dim)) / np.sqrt(spec.embed_dim)
    tasks = []
    for _ in range(spec.tasks):
        means = spec.separation * rng.standard_normal((spec.ways, spec.embed_dim))

        def draw(per_class):
            labels = np.repeat(np.arange(spec.ways), per_class)
            latent = means[labels] + rng.standard_normal((labels.shape[0], spec.embed_dim))
            inputs = latent @ lift + spec.noise * rng.standard_normal((labels.shape[0], spec.input_dim))
            return inputs, labels

        x_train, y_train = draw(spec.shots)
        x_val, y_val = draw(spec.val_shots)
        tasks.append(MetaTask(x_train, y_train, x_val, y_val))
    return tasks


class _StackedSplit:
    def __init__(self, inputs: Sequence[np.ndarray], labels: Sequence[np.ndarray]):
        self.x = np.vstack(inputs)
        self.y = np.concatenate(labels).astype(np.int64)
        bounds = np.cumsum([0] + [x.shape[0] for x in inputs])
        self.slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


class MetaProblem:
    def __init__(self, spec: MetaTaskSpec, tasks: List[MetaTask], oracle: BilevelOracle):
        self.spec = spec
        self.tasks = tasks
        self.oracle = oracle

    def heads(self, omega: np.ndarray) -> List[np.ndarray]:
        size = self.spec.head_dim
        return [omega[j * size : (j + 1) * size] for j in range(len(self.tasks))]

    def val_accuracy(self, theta: np.ndarray, omega: np.ndarray) -> float:
        """Mean validation accuracy over tasks."""
        scores = []
        for task, head in zip(self.tasks, self.heads(omega)):
            embedded, _ = mlp_forward(theta, self.spec.shared_spec, task.x_val)
            scores.append(accuracy(embedded, task.y_val, head, self.spec.ways))
        return float(np.mean(scores))

    def initial_point(self, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        theta = mlp_init(self.spec.shared_spec, derive_seed(seed, 0)).data
        return theta, np.zeros(self.oracle.n)


def meta_oracle(spec: MetaTaskSpec, tasks: Optional[List[MetaTask]] = None) -> MetaProblem:
    tasks = generate_meta_tasks(spec) if tasks is None else list(tasks)
    if len(tasks) == 0:
        raise ConfigurationError("meta_oracle needs at least one task")
    shared = spec.shared_spec
    for j, task in enumerate(tasks):
        for x in (task.x_train, task.x_val):
            if x.ndim != 2 or x.shape[1] != shared.input_dim:
                raise ShapeMismatchError(
                    f"task {j} inputs must have width {shared.input_dim}, got shape {x.shape}"
                )
    train = _StackedSplit([t.x_train for t in tasks], [t.y_train for t in tasks])
    val = _StackedSplit([t.x_val for t in tasks], [t.y_val for t in tasks])
    embed = shared.output_dim
    size = head_size(embed, spec.ways)

    def evaluate(split: _StackedSplit, ridge: float, theta, omega):
        embedded, cache = mlp_forward(theta, shared, split.x)
        grad_embedded = np.zeros_like(embedded)
        grad_omega = np.zeros_like(omega)
        total = 0.0
        for j, rows in enumerate(split.slices):
            head = omega[j * size : (j + 1) * size]
            losses, _, logit_grads = head_losses(embedded[rows], split.y[rows], head, spec.ways)
            total += float(np.sum(losses))
            grad_omega[j * size : (j + 1) * size] = head_gradient(embedded[rows], logit_grads)
            weight, _ = split_head(head, embed, spec.ways)
            grad_embedded[rows] = logit_grads @ weight.T
        grad_theta, _ = mlp_backward(cache, grad_embedded)
        if ridge > 0:
            total += ridge * float(omega @ omega)
            grad_omega = grad_omega + 2.0 * ridge * omega
        return total, grad_theta, grad_omega

    train_cache = LastPointCache(lambda theta, omega: evaluate(train, spec.head_l2, theta, omega))
    val_cache = LastPointCache(lambda theta, omega: evaluate(val, 0.0, theta, omega))

    def point_sampler(rng):
        theta = mlp_init(shared, int(rng.integers(0, 2 ** 31))).data
        return theta, 0.1 * rng.standard_normal(size * len(tasks))

    oracle = BilevelOracle(
        f_ol=lambda theta, omega: val_cache.get(theta, omega)[0],
        f_cl=lambda theta, omega: train_cache.get(theta, omega)[0],
        grad_theta_ol=lambda theta, omega: val_cache.get(theta, omega)[1],
        grad_omega_ol=lambda theta, omega: val_cache.get(theta, omega)[2],
        grad_theta_cl=lambda theta, omega: train_cache.get(theta, omega)[1],
        grad_omega_cl=lambda theta, omega: train_cache.get(theta, omega)[2],
        dims=(shared.num_params, size * len(tasks)),
        point_sampler=point_sampler,
        name=f"meta(tasks={len(tasks)}, ways={spec.ways})",
    )
    return MetaProblem(spec, tasks, oracle)
