# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Adversarial training on mixture-of-Gaussians data as a bilevel problem.

theta holds the generator parameters and omega the discriminator parameters.
F_CL is the loss the discriminator minimizes (the negated game value) and
F_OL the generator loss. Both networks see every minibatch in one pass: the
discriminator runs on the stacked real and fake samples, and its input
gradients on the fake rows flow back through the generator.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ..core import BilevelOracle  # type:ignore
from ..errors import ConfigurationError, OracleEvaluationError  # type:ignore
from ..internal_utils import derive_seed, is_all_finite, stable_sigmoid  # type:ignore
from ..nn import MLPSpec, clip_params, mlp_backward, mlp_forward, mlp_init  # type:ignore
from .evaluation_cache import LastPointCache  # type:ignore
from .mog import MOGSpec, mog_sampler  # type:ignore

GAN_LOSSES = ("vanilla", "least_squares", "wasserstein")
_LOSS_ALIASES = {
    "vanilla_bce": "vanilla",
    "bce": "vanilla",
    "lsgan": "least_squares",
    "wgan": "wasserstein",
}
SIGMOID_CLAMP = 1e-7

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GANProblemSpec:
    """Attributes:
    loss: vanilla, least_squares or wasserstein
    ls_a, ls_b, ls_c: least-squares targets for fake, real and the generator
    clip: discriminator weight clip for the wasserstein loss
    gen_spec, disc_spec: built from hidden_width / hidden_layers / activation when omitted
    """

    mog: MOGSpec = field(default_factory=MOGSpec)
    loss: str = "vanilla"
    noise_dim: int = 2
    hidden_width: int = 256
    hidden_layers: int = 2
    activation: str = "leaky_relu(0.2)"
    ls_a: float = 0.0
    ls_b: float = 1.0
    ls_c: float = 1.0
    clip: float = 0.01
    seed: int = 0
    gen_spec: Optional[MLPSpec] = None
    disc_spec: Optional[MLPSpec] = None

    def __post_init__(self):
        loss = _LOSS_ALIASES.get(self.loss, self.loss)
        if loss not in GAN_LOSSES:
            raise ConfigurationError(f"Unknown GAN loss {self.loss!r}; expected one of {GAN_LOSSES}")
        object.__setattr__(self, "loss", loss)
        if self.noise_dim < 1 or self.hidden_width < 1 or self.hidden_layers < 0:
            raise ConfigurationError("noise_dim and hidden_width must be positive")
        if not self.clip > 0:
            raise ConfigurationError(f"clip must be positive, got {self.clip}")
        hidden = [self.hidden_width] * self.hidden_layers
        dim = self.mog.dim
        gen_spec = self.gen_spec or MLPSpec([self.noise_dim] + hidden + [dim], activation=self.activation)
        disc_spec = self.disc_spec or MLPSpec([dim] + hidden + [1], activation=self.activation)
        if gen_spec.input_dim != self.noise_dim or gen_spec.output_dim != dim:
            raise ConfigurationError(
                f"Generator must map {self.noise_dim} -> {dim}, got {gen_spec.layer_widths}"
            )
        if disc_spec.input_dim != dim or disc_spec.output_dim != 1:
            raise ConfigurationError(f"Discriminator must map {dim} -> 1, got {disc_spec.layer_widths}")
        object.__setattr__(self, "gen_spec", gen_spec)
        object.__setattr__(self, "disc_spec", disc_spec)


class GANEvaluation(NamedTuple):
    f_ol: float
    f_cl: float
    grad_theta_ol: np.ndarray
    grad_omega_ol: np.ndarray
    grad_theta_cl: np.ndarray
    grad_omega_cl: np.ndarray


def _loss_terms(spec: GANProblemSpec, d_real: np.ndarray, d_fake: np.ndarray):
    """Loss values and their derivatives w.r.t. every discriminator output.
    Returns:
        (f_ol, f_cl, d f_ol / d logits, d f_cl / d logits); logits are real rows then fake rows
    """
    batch = d_real.shape[0]
    zeros = np.zeros(batch)
    if spec.loss == "vanilla":
        p_real = stable_sigmoid(d_real)
        p_fake = stable_sigmoid(d_fake)
        # the clamp is flat outside [eps, 1 - eps], so its derivative is masked out there
        inside_real = (p_real > SIGMOID_CLAMP) & (p_real < 1.0 - SIGMOID_CLAMP)
        inside_fake = (p_fake > SIGMOID_CLAMP) & (p_fake < 1.0 - SIGMOID_CLAMP)
        p_real_c = np.clip(p_real, SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
        p_fake_c = np.clip(p_fake, SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
        f_ol = float(np.mean(np.log(1.0 - p_fake_c)))
        f_cl = float(-np.mean(np.log(p_real_c)) - np.mean(np.log(1.0 - p_fake_c)))
        ol_grads = np.concatenate([zeros, -p_fake * inside_fake / batch])
        cl_grads = np.concatenate(
            [-(1.0 - p_real) * inside_real / batch, p_fake * inside_fake / batch]
        )
    elif spec.loss == "least_squares":
        f_ol = float(np.mean((d_fake - spec.ls_c) ** 2))
        f_cl = float(np.mean((d_real - spec.ls_b) ** 2) + np.mean((d_fake - spec.ls_a) ** 2))
        ol_grads = np.concatenate([zeros, 2.0 * (d_fake - spec.ls_c) / batch])
        cl_grads = np.concatenate(
            [2.0 * (d_real - spec.ls_b) / batch, 2.0 * (d_fake - spec.ls_a) / batch]
        )
    else:
        f_ol = float(-np.mean(d_fake))
        f_cl = float(np.mean(d_fake) - np.mean(d_real))
        ol_grads = np.concatenate([zeros, np.full(batch, -1.0 / batch)])
        cl_grads = np.concatenate([np.full(batch, -1.0 / batch), np.full(batch, 1.0 / batch)])
    return f_ol, f_cl, ol_grads[:, None], cl_grads[:, None]


def draw_batch(spec: GANProblemSpec, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """The (real, noise) minibatch for a batch index; identical for identical (spec, index)."""
    real, _ = mog_sampler(spec.mog, derive_seed(spec.seed, index, 0))
    noise_rng = np.random.default_rng(derive_seed(spec.seed, index, 1))
    noise = noise_rng.standard_normal((spec.mog.batch, spec.noise_dim))
    return real, noise


def _evaluate(spec: GANProblemSpec, real, noise, index: int, theta, omega) -> GANEvaluation:
    batch = real.shape[0]
    fake, gen_cache = mlp_forward(theta, spec.gen_spec, noise)
    logits, disc_cache = mlp_forward(omega, spec.disc_spec, np.vstack([real, fake]))
    f_ol, f_cl, ol_up, cl_up = _loss_terms(spec, logits[:batch, 0], logits[batch:, 0])
    if not is_all_finite(f_ol, f_cl):
        raise OracleEvaluationError(
            f"GAN loss is non-finite (f_ol={f_ol}, f_cl={f_cl}) on the batch seeded with "
            f"{derive_seed(spec.seed, index, 0)}/{derive_seed(spec.seed, index, 1)}",
            function=f"{spec.loss}_loss",
            probe=index,
        )
    grad_omega_ol, input_grad_ol = mlp_backward(disc_cache, ol_up)
    grad_omega_cl, input_grad_cl = mlp_backward(disc_cache, cl_up)
    grad_theta_ol, _ = mlp_backward(gen_cache, input_grad_ol[batch:])
    grad_theta_cl, _ = mlp_backward(gen_cache, input_grad_cl[batch:])
    return GANEvaluation(f_ol, f_cl, grad_theta_ol, grad_omega_ol, grad_theta_cl, grad_omega_cl)


def initial_point(spec: GANProblemSpec, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Glorot-initialized (generator, discriminator) parameters."""
    theta = mlp_init(spec.gen_spec, derive_seed(seed, 0)).data
    omega = mlp_init(spec.disc_spec, derive_seed(seed, 1)).data
    if spec.loss == "wasserstein":
        omega = clip_params(omega, spec.clip)
    return theta, omega


def generate_samples(spec: GANProblemSpec, theta: np.ndarray, count: int, seed: int) -> np.ndarray:
    noise = np.random.default_rng(seed).standard_normal((count, spec.noise_dim))
    samples, _ = mlp_forward(theta, spec.gen_spec, noise)
    return samples


def _bind(spec: GANProblemSpec, index: int) -> BilevelOracle:
    real, noise = draw_batch(spec, index)
    cache = LastPointCache(lambda theta, omega: _evaluate(spec, real, noise, index, theta, omega))

    def sample_point(rng):
        return initial_point(spec, int(rng.integers(0, 2 ** 31)))

    post_update = None
    if spec.loss == "wasserstein":

        def post_update(omega):
            return clip_params(omega, spec.clip)

    return BilevelOracle(
        f_ol=lambda theta, omega: cache.get(theta, omega).f_ol,
        f_cl=lambda theta, omega: cache.get(theta, omega).f_cl,
        grad_theta_ol=lambda theta, omega: cache.get(theta, omega).grad_theta_ol,
        grad_omega_ol=lambda theta, omega: cache.get(theta, omega).grad_omega_ol,
        grad_theta_cl=lambda theta, omega: cache.get(theta, omega).grad_theta_cl,
        grad_omega_cl=lambda theta, omega: cache.get(theta, omega).grad_omega_cl,
        dims=(spec.gen_spec.num_params, spec.disc_spec.num_params),
        omega_post_update=post_update,
        batch_binder=lambda k: _bind(spec, k),
        batch_index=index,
        point_sampler=sample_point,
        reentrant=True,
        name=f"gan({spec.loss}, {spec.mog.family})",
    )


def gan_oracle(spec: GANProblemSpec) -> BilevelOracle:
    """Oracle bound to minibatch 0; at_batch(k) binds minibatch k."""
    return _bind(spec, 0)
