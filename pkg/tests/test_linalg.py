# Copyright 2026, bilevel-gr authors. All rights reserved.

import numpy as np
import pytest

from bilevel_gr.errors import NotPSDError, ShapeMismatchError
from bilevel_gr.linalg import (
    LinearOperator,
    cg_solve,
    neumann_hypergrad,
    psd_sqrt_small,
    rank_one_min_norm_solve,
)


class TestLinearOperator:
    def test_from_matrix(self):
        A = LinearOperator.from_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
        assert A.dim == 2
        np.testing.assert_allclose(A(np.array([1.0, 1.0])), [3.0, 4.0])
        assert A.check_linearity()

    def test_non_square_matrix(self):
        with pytest.raises(ShapeMismatchError):
            LinearOperator.from_matrix(np.ones((2, 3)))

    def test_nonlinear_map_is_detected(self):
        A = LinearOperator(lambda v: v ** 2, 3)
        assert not A.check_linearity()


class TestConjugateGradient:
    def setup_method(self):
        rng = np.random.default_rng(3)
        q = rng.standard_normal((6, 6))
        self.matrix = q @ q.T + 6.0 * np.eye(6)
        self.b = rng.standard_normal(6)

    def test_scaled_identity(self):
        result = cg_solve(LinearOperator.scaled_identity(2.0, 2), np.array([4.0, 6.0]))
        np.testing.assert_allclose(result.x, [2.0, 3.0])
        assert result.iters == 1

    def test_solves_spd_system(self):
        result = cg_solve(LinearOperator.from_matrix(self.matrix), self.b, tol=1e-12, max_iter=50)
        np.testing.assert_allclose(self.matrix @ result.x, self.b, atol=1e-9)
        assert result.iters <= 6 + 2
        assert not result.negative_curvature

    def test_zero_rhs(self):
        result = cg_solve(LinearOperator.from_matrix(self.matrix), np.zeros(6))
        assert result.iters == 0
        assert np.array_equal(result.x, np.zeros(6))

    def test_negative_curvature_stops(self):
        result = cg_solve(LinearOperator.from_matrix(-np.eye(3)), np.ones(3))
        assert result.negative_curvature
        assert result.iters == 0

    def test_wrong_rhs_length(self):
        with pytest.raises(ShapeMismatchError):
            cg_solve(LinearOperator.from_matrix(self.matrix), np.ones(5))


class TestNeumannSeries:
    def test_converges_to_inverse(self):
        matrix = np.diag([1.0, 2.0, 4.0])
        b = np.array([1.0, 1.0, 1.0])
        result = neumann_hypergrad(LinearOperator.from_matrix(matrix), b, step=0.2, terms=200)
        np.testing.assert_allclose(result.x, [1.0, 0.5, 0.25], rtol=1e-8)
        assert result.terms == 200
        assert not result.diverged

    def test_matches_conjugate_gradient(self):
        matrix = np.array([[2.0, 0.5, 0.0], [0.5, 1.5, 0.2], [0.0, 0.2, 1.0]])
        b = np.array([1.0, -2.0, 0.5])
        A = LinearOperator.from_matrix(matrix)
        series = neumann_hypergrad(A, b, step=0.3, terms=500)
        solved = cg_solve(A, b, tol=1e-12)
        np.testing.assert_allclose(series.x, solved.x, atol=1e-4)

    def test_single_term(self):
        result = neumann_hypergrad(LinearOperator.scaled_identity(3.0, 2), np.array([1.0, 2.0]), step=0.1, terms=1)
        np.testing.assert_allclose(result.x, [0.1, 0.2])

    def test_divergence_is_flagged(self):
        result = neumann_hypergrad(LinearOperator.scaled_identity(10.0, 2), np.ones(2), step=1.0, terms=100)
        assert result.diverged
        assert result.terms < 100


class TestRankOneSolve:
    def test_examples(self):
        g = np.array([1.0, 0.0])
        np.testing.assert_allclose(rank_one_min_norm_solve(g, np.array([-2.0, 0.0])).b, [-2.0, 0.0])
        np.testing.assert_allclose(rank_one_min_norm_solve(g, np.array([0.0, 5.0])).b, [0.0, 0.0])
        np.testing.assert_allclose(rank_one_min_norm_solve(np.array([3.0, 4.0]), np.array([3.0, 4.0])).b, [3.0, 4.0])

    def test_squared_system(self):
        g = np.array([3.0, 4.0])
        rhs = np.array([1.0, 1.0])
        np.testing.assert_allclose(rank_one_min_norm_solve(g, rhs, squared=False).b, [0.84, 1.12])
        np.testing.assert_allclose(rank_one_min_norm_solve(g, rhs, squared=True).b, [0.84 / 25.0, 1.12 / 25.0])

    def test_solution_lies_in_span(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal(5)
        solution = rank_one_min_norm_solve(g, rng.standard_normal(5))
        residual = solution.b - g * (g @ solution.b) / (g @ g)
        assert np.linalg.norm(residual) < 1e-12

    def test_degenerate_gradient(self):
        solution = rank_one_min_norm_solve(np.zeros(3), np.ones(3))
        assert solution.degenerate
        assert np.array_equal(solution.b, np.zeros(3))


class TestPSDSqrt:
    def test_square_root(self):
        M = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
        S = psd_sqrt_small(M)
        np.testing.assert_allclose(S @ S, M, atol=1e-12)
        np.testing.assert_allclose(S, S.T, atol=1e-14)

    def test_singular_matrix(self):
        S = psd_sqrt_small(np.array([[1.0, 1.0], [1.0, 1.0]]))
        np.testing.assert_allclose(S @ S, [[1.0, 1.0], [1.0, 1.0]], atol=1e-12)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPSDError):
            psd_sqrt_small(np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_rejects_large_matrices(self):
        with pytest.raises(ShapeMismatchError):
            psd_sqrt_small(np.eye(4))
