# Copyright 2026, bilevel-gr authors. All rights reserved.

import numpy as np
import pytest

from bilevel_gr.errors import ConfigurationError, ShapeMismatchError, StaleCacheError
from bilevel_gr.nn import (
    Activation,
    AdamState,
    MLPParams,
    MLPSpec,
    adam_step,
    clip_params,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_gradient_check,
    mlp_init,
    save_params,
)


class TestActivation:
    def test_parse(self):
        assert Activation.parse("leaky_relu(0.1)").slope == 0.1
        assert Activation.parse("leaky_relu").slope == 0.2
        assert str(Activation.parse(" tanh ")) == "tanh"

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            Activation.parse("relu6")
        with pytest.raises(ConfigurationError):
            Activation.parse("tanh(0.5)")
        with pytest.raises(ConfigurationError):
            Activation("leaky_relu", slope=1.5)

    def test_supported_kinds(self):
        for kind in ("leaky_relu(0.2)", "identity", "sigmoid", "tanh"):
            assert str(Activation.parse(kind)) == kind
        with pytest.raises(ConfigurationError):
            Activation("relu")

    def test_leaky_relu(self):
        act = Activation.parse("leaky_relu(0.2)")
        z = np.array([-1.0, 2.0])
        np.testing.assert_allclose(act.forward(z), [-0.2, 2.0])
        np.testing.assert_allclose(act.derivative(z, act.forward(z)), [0.2, 1.0])


class TestMLPSpec:
    def test_num_params(self):
        spec = MLPSpec([2, 3, 1])
        assert spec.num_params == 2 * 3 + 3 + 3 * 1 + 1
        assert spec.layer_shapes == [(2, 3), (3, 1)]

    def test_dict_round_trip(self):
        spec = MLPSpec([4, 8, 8, 2], activation="tanh", final_activation="sigmoid")
        assert MLPSpec.from_dict(spec.to_dict()) == spec

    def test_invalid_widths(self):
        with pytest.raises(ConfigurationError):
            MLPSpec([3])
        with pytest.raises(ConfigurationError):
            MLPSpec([3, 0, 1])

    def test_activation_count(self):
        with pytest.raises(ConfigurationError):
            MLPSpec([2, 4, 4, 1], activation=["tanh"])


class TestForwardBackward:
    def setup_method(self):
        self.spec = MLPSpec([2, 3, 1], activation="identity")

    def test_forward_matches_matrices(self):
        w1 = np.arange(6, dtype=np.float64).reshape(2, 3) / 10.0
        b1 = np.array([0.1, -0.2, 0.3])
        w2 = np.array([[1.0], [-1.0], [0.5]])
        b2 = np.array([0.25])
        params = MLPParams.flatten(self.spec, [(w1, b1), (w2, b2)])
        x = np.array([[1.0, 2.0], [-1.0, 0.5]])
        out, _ = mlp_forward(params, self.spec, x)
        np.testing.assert_allclose(out, (x @ w1 + b1) @ w2 + b2)

    def test_gradient_check_smooth(self):
        spec = MLPSpec([3, 5, 5, 2], activation="tanh", final_activation="sigmoid")
        errors = mlp_gradient_check(spec, seed=1)
        assert errors["params"] < 1e-6
        assert errors["input"] < 1e-6

    def test_gradient_check_leaky_relu(self):
        errors = mlp_gradient_check(MLPSpec([2, 8, 8, 2]), seed=0, step=1e-6)
        assert errors["params"] < 1e-5
        assert errors["input"] < 1e-5

    def test_stale_cache(self):
        params = mlp_init(self.spec, seed=0)
        out, cache = mlp_forward(params, self.spec, np.ones((2, 2)))
        params.assign(params.data * 2.0)
        with pytest.raises(StaleCacheError):
            mlp_backward(cache, np.ones_like(out))

    def test_batch_shape(self):
        with pytest.raises(ShapeMismatchError):
            mlp_forward(mlp_init(self.spec, seed=0), self.spec, np.ones((2, 3)))

    def test_wrong_parameter_count(self):
        with pytest.raises(ShapeMismatchError):
            MLPParams(self.spec, np.zeros(3))

    def test_init_is_deterministic(self):
        a = mlp_init(self.spec, seed=5)
        b = mlp_init(self.spec, seed=5)
        assert np.array_equal(a.data, b.data)
        for _, bias in a.unflatten():
            assert np.array_equal(bias, np.zeros_like(bias))


class TestAdam:
    def test_first_step_moves_by_lr(self):
        state = AdamState(2, lr=0.1)
        params, state = adam_step(state, np.array([1.0, -1.0]), np.array([0.5, -3.0]))
        np.testing.assert_allclose(params, [0.9, -0.9], rtol=1e-6)
        assert state.step == 1

    def test_minimizes_quadratic(self):
        state = AdamState(3, lr=0.05)
        x = np.array([2.0, -1.0, 0.5])
        for _ in range(2000):
            x, state = adam_step(state, x, 2.0 * x)
        assert np.linalg.norm(x) < 5e-2

    def test_size_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            adam_step(AdamState(2), np.zeros(3), np.zeros(3))


class TestCheckpoints:
    def test_save_and_load(self, tmp_path):
        spec = MLPSpec([2, 4, 2], activation="leaky_relu(0.1)")
        params = mlp_init(spec, seed=3)
        path = str(tmp_path / "generator.bin")
        save_params(path, params, meta={"iteration": 10})
        loaded = load_params(path)
        assert loaded.spec == spec
        assert np.array_equal(loaded.data, params.data)

    def test_clip(self):
        np.testing.assert_allclose(clip_params(np.array([-1.0, 0.005, 2.0]), 0.01), [-0.01, 0.005, 0.01])
