# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Mixture-of-Gaussians data families for mode-collapse studies."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigurationError  # type:ignore

MOG_FAMILIES = ("ring2d", "random2d", "grid2d", "cube3d")

_DEFAULT_COMPONENTS = {"ring2d": 8, "random2d": 10, "grid2d": 25, "cube3d": 27}
_FIXED_COMPONENTS = {"random2d": 10, "grid2d": 25, "cube3d": 27}
RANDOM2D_BOX = 4.0


@dataclass(frozen=True)
class MOGSpec:
    """Attributes:
    family: ring2d, random2d, grid2d or cube3d
    components: K; only ring2d accepts a value other than its default (5 or 8 are usual)
    radius: ring radius
    spacing: distance between neighbouring grid / cube centers
    center_seed: seeds the random2d centers
    """

    family: str = "ring2d"
    components: Optional[int] = None
    variance: float = 0.02
    batch: int = 512
    radius: float = 2.0
    spacing: float = 2.0
    center_seed: int = 0

    def __post_init__(self):
        if self.family not in MOG_FAMILIES:
            raise ConfigurationError(f"Unknown MOG family {self.family!r}; expected one of {MOG_FAMILIES}")
        components = self.components if self.components is not None else _DEFAULT_COMPONENTS[self.family]
        fixed = _FIXED_COMPONENTS.get(self.family)
        if fixed is not None and components != fixed:
            raise ConfigurationError(f"{self.family} has exactly {fixed} components, got {components}")
        if components < 2:
            raise ConfigurationError(f"A ring needs at least 2 components, got {components}")
        if not self.variance > 0:
            raise ConfigurationError(f"Component variance must be positive, got {self.variance}")
        if self.batch < 1:
            raise ConfigurationError(f"Batch size must be positive, got {self.batch}")
        object.__setattr__(self, "components", int(components))

    @property
    def dim(self) -> int:
        return 3 if self.family == "cube3d" else 2

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.variance))

    def centers(self) -> np.ndarray:
        if self.family == "ring2d":
            angles = 2.0 * np.pi * np.arange(self.components) / self.components
            return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        if self.family == "grid2d":
            ticks = self.spacing * (np.arange(5) - 2.0)
            xs, ys = np.meshgrid(ticks, ticks, indexing="ij")
            return np.stack([xs.ravel(), ys.ravel()], axis=1)
        if self.family == "cube3d":
            ticks = self.spacing * (np.arange(3) - 1.0)
            xs, ys, zs = np.meshgrid(ticks, ticks, ticks, indexing="ij")
            return np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
        rng = np.random.default_rng(self.center_seed)
        return rng.uniform(-RANDOM2D_BOX, RANDOM2D_BOX, size=(self.components, 2))


def mog_sampler(spec: MOGSpec, seed: int, batch: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Picks a component uniformly per sample, then adds Gaussian noise.
    Returns:
        (samples of shape (batch, dim), centers of shape (K, dim))
    """
    batch = spec.batch if batch is None else int(batch)
    centers = spec.centers()
    rng = np.random.default_rng(seed)
    components = rng.integers(0, centers.shape[0], size=batch)
    noise = rng.standard_normal((batch, centers.shape[1]))
    return centers[components] + spec.sigma * noise, centers
