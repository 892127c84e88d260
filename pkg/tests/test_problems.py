# Copyright 2026, bilevel-gr authors. All rights reserved.

import math
from collections import OrderedDict

import numpy as np
import pytest

from bilevel_gr.core import oracle_self_test
from bilevel_gr.errors import ConfigurationError, ShapeMismatchError
from bilevel_gr.problems import (
    GANProblemSpec,
    HyperCleanSpec,
    MetaTask,
    MetaTaskSpec,
    MOGSpec,
    ToySpec,
    dump_dataset,
    gan_oracle,
    hyperclean_oracle,
    load_dataset,
    meta_oracle,
    mog_sampler,
    quadratic_pair_hypergradient,
    quadratic_pair_oracle,
    toy_oracle,
    toy_reference,
    toy_value,
)
from bilevel_gr.problems.gan import draw_batch, generate_samples, initial_point
from bilevel_gr.serialization import dump_to_file


class TestToyProblem:
    def setup_method(self):
        self.spec = ToySpec(a=2.0, c=2.0, n=1)
        self.oracle = toy_oracle(self.spec)

    def test_inner_gradient_at_zero_argument(self):
        np.testing.assert_allclose(self.oracle.grad_omega_cl(np.array([0.0]), np.array([2.0])), [1.0])

    def test_outer_value_at_target(self):
        assert self.oracle.f_ol(np.array([2.0]), np.array([4.0])) == 0.0

    def test_reference_single_coordinate(self):
        reference = toy_reference(self.spec)
        assert abs(reference.theta[0] - 0.75 * math.pi) < 1e-6
        assert abs(reference.phi - 0.25375) < 1e-4
        assert reference.closed_form_matches
        np.testing.assert_allclose(reference.omega, [1.5 * math.pi + 2.0 - 0.75 * math.pi], atol=1e-6)

    def test_quoted_optimum_discrepancy_is_noted(self):
        reference = toy_reference(self.spec)
        assert reference.discrepancy
        assert any("quoted optimum" in note for note in reference.notes)
        assert reference.to_dict()["discrepancy"] is True

    def test_reference_three_coordinates(self):
        reference = toy_reference(ToySpec(a=2.0, c=2.0, n=3))
        assert abs(reference.theta[0] - 2.53429) < 1e-4
        assert abs(reference.phi - 0.38062) < 1e-4
        assert not reference.discrepancy

    def test_value_is_minimal_at_reference(self):
        reference = toy_reference(self.spec)
        nearby = toy_value(self.spec, reference.theta[0] + np.array([-0.1, 0.1]))
        assert np.all(nearby > reference.phi)

    def test_invalid_spec(self):
        with pytest.raises(ConfigurationError):
            ToySpec(n=0)
        with pytest.raises(ShapeMismatchError):
            ToySpec(c=[1.0, 2.0], n=3)

    def test_self_test_with_vector_offsets(self):
        report = oracle_self_test(toy_oracle(ToySpec(c=[2.0, 1.0, 0.5], n=3)))
        assert report.passed


class TestQuadraticPair:
    def test_hypergradient(self):
        np.testing.assert_allclose(quadratic_pair_hypergradient(np.array([1.0, -0.5])), [4.0, -2.0])

    def test_inner_minimizer(self):
        oracle = quadratic_pair_oracle(2)
        theta = np.array([1.0, 2.0])
        np.testing.assert_allclose(oracle.grad_omega_cl(theta, theta), [0.0, 0.0])


class TestMixtureOfGaussians:
    def test_tiny_variance_samples_sit_on_centers(self):
        spec = MOGSpec(family="ring2d", components=8, variance=1e-8, batch=200)
        samples, centers = mog_sampler(spec, seed=0)
        distances = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2).min(axis=1)
        assert samples.shape == (200, 2)
        assert distances.max() < 1e-3

    def test_family_sizes(self):
        assert MOGSpec(family="ring2d").centers().shape == (8, 2)
        assert MOGSpec(family="random2d").centers().shape == (10, 2)
        assert MOGSpec(family="grid2d").centers().shape == (25, 2)
        assert MOGSpec(family="cube3d").centers().shape == (27, 3)
        assert MOGSpec(family="cube3d").dim == 3

    def test_ring_components_are_configurable(self):
        assert MOGSpec(family="ring2d", components=5).centers().shape == (5, 2)
        with pytest.raises(ConfigurationError):
            MOGSpec(family="grid2d", components=9)

    def test_unknown_family(self):
        with pytest.raises(ConfigurationError):
            MOGSpec(family="spiral")

    def test_sampler_is_seeded(self):
        spec = MOGSpec(batch=16)
        a, _ = mog_sampler(spec, seed=4)
        b, _ = mog_sampler(spec, seed=4)
        assert np.array_equal(a, b)


class TestGANProblem:
    def setup_method(self):
        self.spec = GANProblemSpec(
            mog=MOGSpec(batch=8),
            loss="least_squares",
            hidden_width=4,
            hidden_layers=1,
            activation="tanh",
            seed=3,
        )

    def test_batches_are_reproducible(self):
        real_a, noise_a = draw_batch(self.spec, 5)
        real_b, noise_b = draw_batch(self.spec, 5)
        real_c, _ = draw_batch(self.spec, 6)
        assert np.array_equal(real_a, real_b)
        assert np.array_equal(noise_a, noise_b)
        assert not np.array_equal(real_a, real_c)

    def test_oracle_binds_batches(self):
        oracle = gan_oracle(self.spec)
        assert oracle.is_stochastic
        assert oracle.batch_index == 0
        assert oracle.at_batch(7).batch_index == 7
        assert oracle.dims == (self.spec.gen_spec.num_params, self.spec.disc_spec.num_params)

    def test_gradients_match_finite_differences(self):
        report = oracle_self_test(gan_oracle(self.spec), probes=2, seed=1)
        assert report.passed, str(report)

    def test_wasserstein_clips_discriminator(self):
        spec = GANProblemSpec(mog=MOGSpec(batch=8), loss="wgan", hidden_width=4, hidden_layers=1, clip=0.05)
        assert spec.loss == "wasserstein"
        oracle = gan_oracle(spec)
        clipped = oracle.post_update_omega(np.full(oracle.n, 3.0))
        assert np.all(np.abs(clipped) <= 0.05)
        _, omega = initial_point(spec, seed=0)
        assert np.all(np.abs(omega) <= 0.05)

    def test_generated_samples(self):
        theta, _ = initial_point(self.spec, seed=0)
        samples = generate_samples(self.spec, theta, count=12, seed=2)
        assert samples.shape == (12, 2)
        assert np.array_equal(samples, generate_samples(self.spec, theta, count=12, seed=2))

    def test_unknown_loss(self):
        with pytest.raises(ConfigurationError):
            GANProblemSpec(loss="hinge")


class TestHyperCleaning:
    def setup_method(self):
        self.spec = HyperCleanSpec(n_train=40, n_val=30, n_test=20, classes=3, feature_dim=5, corruption_rate=0.25)
        self.problem = hyperclean_oracle(self.spec)

    def test_zero_point_values(self):
        oracle = self.problem.oracle
        theta, omega = self.problem.initial_point()
        assert oracle.dims == (40, 5 * 3 + 3)
        assert abs(oracle.f_ol(theta, omega) - 30 * math.log(3)) < 1e-9
        # sigmoid(0) = 0.5 on every training weight
        assert abs(oracle.f_cl(theta, omega) - 0.5 * 40 * math.log(3)) < 1e-9

    def test_corruption_mask(self):
        data = self.problem.dataset
        assert int(self.problem.truth_mask.sum()) == 10
        assert np.all(data.y_train[self.problem.truth_mask] != data.clean_train_labels[self.problem.truth_mask])
        assert np.all(data.y_train[~self.problem.truth_mask] == data.clean_train_labels[~self.problem.truth_mask])

    def test_outer_objective_ignores_weights(self):
        oracle = self.problem.oracle
        _, omega = self.problem.initial_point()
        assert np.array_equal(oracle.grad_theta_ol(np.ones(40), omega), np.zeros(40))

    def test_gradients_match_finite_differences(self):
        report = oracle_self_test(self.problem.oracle, probes=2)
        assert report.passed, str(report)

    def test_same_seed_same_data(self):
        other = hyperclean_oracle(self.spec)
        assert np.array_equal(other.dataset.x_train, self.problem.dataset.x_train)
        assert np.array_equal(other.truth_mask, self.problem.truth_mask)

    def test_invalid_spec(self):
        with pytest.raises(ConfigurationError):
            HyperCleanSpec(corruption_rate=1.5)
        with pytest.raises(ConfigurationError):
            HyperCleanSpec(classes=10, feature_dim=4)


class TestMetaLearning:
    def setup_method(self):
        self.spec = MetaTaskSpec(tasks=3, ways=3, shots=4, val_shots=2, input_dim=6, embed_dim=3, hidden=(5,))
        self.problem = meta_oracle(self.spec)

    def test_zero_heads_give_uniform_loss(self):
        oracle = self.problem.oracle
        theta, omega = self.problem.initial_point(seed=0)
        expected = 3 * 3 * 4 * math.log(3)
        assert abs(oracle.f_cl(theta, omega) - expected) < 1e-9
        assert abs(oracle.f_ol(theta, omega) - 3 * 3 * 2 * math.log(3)) < 1e-9

    def test_heads_split(self):
        _, omega = self.problem.initial_point(seed=0)
        heads = self.problem.heads(np.arange(self.problem.oracle.n, dtype=np.float64))
        assert len(heads) == 3
        assert all(h.shape[0] == self.spec.head_dim for h in heads)
        assert omega.shape[0] == 3 * self.spec.head_dim

    def test_gradients_match_finite_differences(self):
        report = oracle_self_test(self.problem.oracle, probes=2)
        assert report.passed, str(report)

    def test_accuracy_in_unit_interval(self):
        theta, omega = self.problem.initial_point(seed=1)
        assert 0.0 <= self.problem.val_accuracy(theta, omega) <= 1.0

    def test_task_width_is_checked(self):
        bad = MetaTask(np.zeros((2, 4)), np.zeros(2, dtype=int), np.zeros((2, 6)), np.zeros(2, dtype=int))
        with pytest.raises(ShapeMismatchError):
            meta_oracle(self.spec, tasks=[bad])

    def test_needs_tasks(self):
        with pytest.raises(ConfigurationError):
            meta_oracle(self.spec, tasks=[])


class TestDatasetDumps:
    def test_dump_and_load(self, tmp_path):
        problem = hyperclean_oracle(HyperCleanSpec(n_train=10, n_val=5, n_test=5, classes=2, feature_dim=3))
        path = str(tmp_path / "hyperclean.bin")
        problem.dump(path)
        meta, arrays = load_dataset(path)
        assert meta["problem"] == "hyperclean"
        assert meta["spec"]["n_train"] == 10
        assert list(arrays)[0] == "x_train"
        np.testing.assert_array_equal(arrays["x_train"], problem.dataset.x_train)
        np.testing.assert_array_equal(arrays["truth_mask"] > 0.5, problem.truth_mask)

    def test_rejects_other_dumps(self, tmp_path):
        path = str(tmp_path / "other.bin")
        dump_to_file(path, {"kind": "checkpoint"}, OrderedDict([("a", np.zeros(2))]))
        with pytest.raises(ConfigurationError):
            load_dataset(path)
        dump_dataset(path, {"a": np.zeros(2)}, {"problem": "x"})
        assert load_dataset(path)[0]["kind"] == "dataset"
