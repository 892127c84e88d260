# Copyright 2026, bilevel-gr authors. All rights reserved.

import math
from types import SimpleNamespace

import numpy as np
import pytest

from bilevel_gr.errors import ConfigurationError, ShapeMismatchError
from bilevel_gr.metrics import (
    default_js_grid,
    f1_corruption,
    fid_gaussian,
    js_histogram,
    mode_count,
    rel_err_series,
)
from bilevel_gr.problems import MOGSpec, mog_sampler


class TestFrechetDistance:
    def setup_method(self):
        self.rng = np.random.default_rng(0)

    def test_identical_sets(self):
        samples = self.rng.standard_normal((500, 2))
        report = fid_gaussian(samples, samples)
        assert report.value < 1e-8
        assert report.sample_sizes == {"real": 500, "gen": 500}

    def test_point_masses(self):
        report = fid_gaussian(np.zeros((10, 1)), np.ones((10, 1)))
        assert abs(report.value - 1.0) < 1e-6
        assert "regularized" in report.flags

    def test_scaled_gaussians(self):
        real = self.rng.standard_normal((20000, 2))
        gen = 2.0 * self.rng.standard_normal((20000, 2))
        assert abs(fid_gaussian(real, gen).value - 2.0) < 0.1

    def test_three_dimensional_shift(self):
        real = self.rng.standard_normal((20000, 3))
        report = fid_gaussian(real, real + np.array([1.0, 0.0, 0.0]))
        assert abs(report.value - 1.0) < 1e-6

    def test_rejects_high_dimensions(self):
        with pytest.raises(ShapeMismatchError):
            fid_gaussian(np.zeros((10, 4)), np.zeros((10, 4)))

    def test_rejects_mismatched_dims(self):
        with pytest.raises(ShapeMismatchError):
            fid_gaussian(np.zeros((10, 2)), np.zeros((10, 3)))


class TestJensenShannon:
    def setup_method(self):
        self.samples = np.random.default_rng(1).standard_normal((400, 2))

    def test_identical_sets(self):
        assert js_histogram(self.samples, self.samples).value == 0.0

    def test_order_does_not_matter(self):
        shuffled = np.random.default_rng(2).permutation(self.samples)
        assert js_histogram(self.samples, shuffled).value == 0.0

    def test_disjoint_supports(self):
        report = js_histogram(np.zeros((50, 1)), np.ones((50, 1)), grid=(-0.5, 1.5, 4))
        assert abs(report.value - math.log(2.0)) < 1e-6
        assert report.value <= math.log(2.0)
        assert report.params["bins"] == 4

    def test_outliers_land_in_overflow_bin(self):
        inside = np.zeros((20, 1))
        outside = np.full((20, 1), 100.0)
        assert js_histogram(inside, outside, grid=(-1.0, 1.0, 8)).value > 0.6

    def test_needs_two_bins(self):
        with pytest.raises(ConfigurationError):
            js_histogram(self.samples, self.samples, grid=(-1.0, 1.0, 1))

    def test_default_grid_pads_centers(self):
        lo, hi, bins = default_js_grid(np.array([[0.0, 0.0], [1.0, 2.0]]), sigma=0.5, bins=16)
        assert lo == [-2.0, -2.0]
        assert hi == [3.0, 4.0]
        assert bins == 16


class TestModeCount:
    def setup_method(self):
        self.spec = MOGSpec(family="ring2d", components=8)
        self.centers = self.spec.centers()

    def test_every_mode_covered(self):
        samples, _ = mog_sampler(self.spec, seed=0, batch=2000)
        report = mode_count(samples, self.centers, self.spec.sigma)
        assert report.value == 8
        assert report.details["captured_modes"] == list(range(8))

    def test_collapsed_generator(self):
        samples = np.repeat(self.centers[:1], 100, axis=0)
        report = mode_count(samples, self.centers, self.spec.sigma)
        assert report.value == 1
        assert report.details["captured_modes"] == [0]

    def test_half_of_the_modes(self):
        samples = np.repeat(self.centers[::2], 25, axis=0)
        report = mode_count(samples, self.centers, self.spec.sigma)
        assert report.value == 4
        assert report.details["fractions"][0] == 0.25

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mode_count(np.zeros((5, 3)), self.centers, 0.1)


class TestF1Corruption:
    def test_perfect_detection(self):
        report = f1_corruption(np.array([-3.0, -2.0, 2.0, 3.0]), np.array([True, True, False, False]))
        assert report.value == 1.0
        assert report.details["precision"] == 1.0

    def test_half_recall(self):
        report = f1_corruption(np.array([-3.0, 2.0, 2.0, 3.0]), np.array([True, True, False, False]))
        assert abs(report.value - 2.0 / 3.0) < 1e-12
        assert report.details["recall"] == 0.5

    def test_everything_wrong(self):
        report = f1_corruption(np.array([3.0, -3.0]), np.array([True, False]))
        assert report.value == 0.0

    def test_nothing_to_find(self):
        report = f1_corruption(np.array([1.0, 2.0]), np.array([False, False]))
        assert report.value == 1.0
        assert report.details["precision"] is None

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            f1_corruption(np.zeros(3), np.zeros(2, dtype=bool))


class TestRelativeErrorSeries:
    def _trace(self, thetas, ol_values):
        records = [SimpleNamespace(ol_value=v) for v in ol_values]
        return SimpleNamespace(theta_history=[np.array(t) for t in thetas], records=records)

    def test_series(self):
        series = rel_err_series(self._trace([[0.0], [2.0]], [4.0, 2.0]), (np.array([2.0]), 2.0))
        assert series.theta_rel_err == [1.0, 0.0]
        assert series.ol_rel_err == [1.0, 0.0]
        assert series.flags == []

    def test_zero_reference_uses_absolute_error(self):
        series = rel_err_series(self._trace([[0.5]], [1.0]), (np.array([0.0]), 0.0))
        assert series.theta_rel_err == [0.5]
        assert series.flags == ["theta_absolute", "ol_absolute"]

    def test_missing_phi(self):
        series = rel_err_series(self._trace([[1.0]], [1.0]), (np.array([1.0]), None))
        assert series.ol_rel_err == [None]

    def test_needs_history(self):
        with pytest.raises(ConfigurationError):
            rel_err_series(SimpleNamespace(theta_history=None, records=[]), (np.array([1.0]), 1.0))
