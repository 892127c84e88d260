# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Small dense and matrix-free linear algebra for implicit hypergradients and metrics."""

import logging
from typing import Callable, NamedTuple

import numpy as np

from .errors import NotPSDError, ShapeMismatchError  # type:ignore
from .internal_utils import as_param_vector  # type:ignore

DEGENERATE_GRADIENT_NORM = 1e-12
NEUMANN_DIVERGENCE_FACTOR = 1e6
PSD_NEGATIVE_TOLERANCE = 1e-10

_logger = logging.getLogger(__name__)


class LinearOperator:
    """A matrix-free symmetric operator v -> A v on R^dim."""

    apply: Callable[[np.ndarray], np.ndarray]
    dim: int

    def __init__(self, apply: Callable[[np.ndarray], np.ndarray], dim: int):
        self.apply = apply
        self.dim = int(dim)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(self.apply(v), dtype=np.float64)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "LinearOperator":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ShapeMismatchError(f"Expected a square matrix, got shape {matrix.shape}")
        return cls(lambda v: matrix @ v, matrix.shape[0])

    @classmethod
    def scaled_identity(cls, scale: float, dim: int) -> "LinearOperator":
        return cls(lambda v: scale * np.asarray(v, dtype=np.float64), dim)

    def check_linearity(self, seed: int = 0, rtol: float = 1e-8) -> bool:
        """apply(a*u + b*v) == a*apply(u) + b*apply(v) on random probes."""
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(self.dim)
        v = rng.standard_normal(self.dim)
        a, b = rng.standard_normal(2)
        lhs = self(a * u + b * v)
        rhs = a * self(u) + b * self(v)
        scale = max(float(np.linalg.norm(rhs)), 1e-300)
        return float(np.linalg.norm(lhs - rhs)) <= rtol * scale


class CGResult(NamedTuple):
    x: np.ndarray
    iters: int
    residual: float
    negative_curvature: bool


class NeumannResult(NamedTuple):
    x: np.ndarray
    terms: int
    diverged: bool


class RankOneSolution(NamedTuple):
    b: np.ndarray
    degenerate: bool


def cg_solve(
    A: LinearOperator,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> CGResult:
    """Conjugate gradient for A x = b starting from x = 0.
    Args:
        A: symmetric positive (semi)definite on the Krylov subspace reached
        b: right-hand side
        tol: relative residual target, |A x - b| <= tol * |b|
        max_iter: iteration cap
    Returns:
        CGResult(x, iters, residual, negative_curvature). A search direction with
        non-positive curvature stops the solve and returns the current iterate.
    """
    b = as_param_vector(b, length=A.dim, name="b")
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs_old = float(r @ r)
    b_norm = float(np.sqrt(rs_old))
    if b_norm == 0.0:
        return CGResult(x, 0, 0.0, False)
    target = tol * b_norm
    iters = 0
    for _ in range(max_iter):
        Ap = A(p)
        curvature = float(p @ Ap)
        if curvature <= 0.0:
            _logger.warning(
                f"CG met non-positive curvature {curvature:.3e} at iteration {iters}; "
                "returning the current iterate"
            )
            return CGResult(x, iters, float(np.sqrt(rs_old)), True)
        step = rs_old / curvature
        x = x + step * p
        r = r - step * Ap
        iters += 1
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= target:
            rs_old = rs_new
            break
        p = r + (rs_new / rs_old) * p
        rs_old = rs_new
    return CGResult(x, iters, float(np.sqrt(rs_old)), False)


def neumann_hypergrad(
    A: LinearOperator,
    b: np.ndarray,
    step: float,
    terms: int,
) -> NeumannResult:
    """Truncated Neumann series for A^{-1} b:
    step * sum_{k=0}^{terms-1} (I - step*A)^k b.
    Converges when step * |A| < 1, which is the caller's responsibility.
    A partial sum growing past 1e6 * |b| stops the series with diverged=True.
    """
    b = as_param_vector(b, length=A.dim, name="b")
    b_norm = float(np.linalg.norm(b))
    term = b.copy()
    partial_sum = b.copy()
    used = 1
    for _ in range(1, max(terms, 1)):
        term = term - step * A(term)
        partial_sum = partial_sum + term
        used += 1
        if float(np.linalg.norm(partial_sum)) > NEUMANN_DIVERGENCE_FACTOR * max(b_norm, 1e-300):
            _logger.warning(
                f"Neumann series diverged after {used} terms (step={step}); "
                "step * |A| must stay below 1"
            )
            return NeumannResult(step * partial_sum, used, True)
    return NeumannResult(step * partial_sum, used, False)


def rank_one_min_norm_solve(
    g: np.ndarray,
    rhs: np.ndarray,
    squared: bool = False,
) -> RankOneSolution:
    """Minimum-norm B for the Gauss-Newton system built from the outer product g g^T.

    squared=True solves (g g^T)^2 B = (g g^T)^T rhs, giving
        B = g (g^T rhs) / (g^T g)^2
    squared=False solves (g g^T) B = (g g^T)^T rhs, giving
        B = g (g^T rhs) / (g^T g)
    Both solutions lie in span(g). A vanishing g carries no information and
    yields the zero vector with degenerate=True.
    """
    g = as_param_vector(g, name="g")
    rhs = as_param_vector(rhs, length=g.shape[0], name="rhs")
    gram = float(g @ g)
    if np.sqrt(gram) < DEGENERATE_GRADIENT_NORM:
        return RankOneSolution(np.zeros_like(g), True)
    denominator = gram * gram if squared else gram
    return RankOneSolution(g * (float(g @ rhs) / denominator), False)


def psd_sqrt_small(M: np.ndarray) -> np.ndarray:
    """Symmetric square root S (S @ S == M) of a small PSD matrix via eigendecomposition.
    Eigenvalues down to -1e-10 (relative to the largest magnitude) are clamped to zero.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] > 3:
        raise ShapeMismatchError(f"Expected a symmetric matrix of dim <= 3, got {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10 * scale):
        raise ShapeMismatchError("psd_sqrt_small expects a symmetric matrix")
    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (M + M.T))
    floor = -PSD_NEGATIVE_TOLERANCE * max(1.0, float(np.max(np.abs(eigenvalues))))
    if float(eigenvalues.min()) < floor:
        raise NotPSDError(f"Matrix is not PSD: smallest eigenvalue {eigenvalues.min():.3e}")
    roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * roots) @ eigenvectors.T
