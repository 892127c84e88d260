# Copyright 2026, bilevel-gr authors. All rights reserved.

import logging
import os
from collections import OrderedDict

import numpy as np
import pytest

from bilevel_gr.buffer_tracking import BufferTracker
from bilevel_gr.env_support import THREADS_ENV_VARIABLE, load_thread_cap_from_env, resolve_worker_count
from bilevel_gr.errors import BilevelError, ConfigurationError, ShapeMismatchError
from bilevel_gr.internal_utils import (
    as_param_vector,
    derive_seed,
    format_float,
    get_run_fingerprint,
    stable_sigmoid,
    write_text_atomically,
)
from bilevel_gr.serialization import MAGIC, decode_blob, encode_blob


class TestEnvSupport:
    def test_no_env_variable(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV_VARIABLE, raising=False)
        assert load_thread_cap_from_env() is None
        assert resolve_worker_count() == 1
        assert resolve_worker_count(4) == 4

    def test_cap_wins(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VARIABLE, "2")
        assert load_thread_cap_from_env() == 2
        assert resolve_worker_count(8) == 2
        assert resolve_worker_count(1) == 1
        assert resolve_worker_count() == 2

    def test_invalid_values_are_ignored(self, monkeypatch, caplog):
        monkeypatch.setenv(THREADS_ENV_VARIABLE, "many")
        with caplog.at_level(logging.WARNING):
            assert load_thread_cap_from_env() is None
        assert THREADS_ENV_VARIABLE in caplog.text
        monkeypatch.setenv(THREADS_ENV_VARIABLE, "0")
        assert load_thread_cap_from_env() is None


class TestBufferTracker:
    def setup_method(self):
        self.tracker = BufferTracker(label="test")

    def test_peak_survives_release(self):
        self.tracker.allocate("a", 80)
        self.tracker.allocate("b", np.zeros(5))
        self.tracker.release("a")
        report = self.tracker.generate_metrics_report()
        assert report["peak_bytes"] == 120
        assert report["current_bytes"] == 40
        assert report["live_buffers"] == {"b": 40}
        assert report["label"] == "test"

    def test_reallocation_replaces_size(self):
        self.tracker.allocate("a", 100)
        self.tracker.allocate("a", 10)
        assert self.tracker.current_bytes == 10
        assert self.tracker.peak_bytes == 100
        assert self.tracker.allocation_counts == {"a": 2}

    def test_reset(self):
        self.tracker.allocate("a", 100)
        self.tracker.reset()
        assert self.tracker.peak_bytes == 0
        assert self.tracker.live_buffers == {}


class TestSerialization:
    def test_blob(self):
        arrays = OrderedDict([("w", np.arange(6, dtype=np.float64).reshape(2, 3)), ("s", np.array(2.5))])
        meta, decoded = decode_blob(encode_blob({"kind": "test"}, arrays))
        assert meta == {"kind": "test"}
        assert list(decoded) == ["w", "s"]
        assert np.array_equal(decoded["w"], arrays["w"])
        assert decoded["s"].shape == ()

    def test_bad_magic(self):
        with pytest.raises(BilevelError):
            decode_blob(b"XXXX\x00\x00\x00\x00")

    def test_truncated_and_trailing(self):
        payload = encode_blob({}, OrderedDict([("x", np.ones(4))]))
        assert payload.startswith(MAGIC)
        with pytest.raises(BilevelError):
            decode_blob(payload[:-8])
        with pytest.raises(BilevelError):
            decode_blob(payload + b"\x00")


class TestInternalUtils:
    def test_param_vector(self):
        assert as_param_vector([[1, 2], [3, 4]]).tolist() == [1.0, 2.0, 3.0, 4.0]
        with pytest.raises(ShapeMismatchError):
            as_param_vector([1.0, 2.0], length=3)

    def test_stable_sigmoid(self):
        values = stable_sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert values.tolist() == [0.0, 0.5, 1.0]

    def test_derive_seed(self):
        assert derive_seed(0, 1) == derive_seed(0, 1)
        assert derive_seed(0, 1) != derive_seed(0, 2)
        assert 0 <= derive_seed(-5, 3) < 2 ** 32

    def test_format_float(self):
        for value in (0.1, 1e-300, 2.0 / 3.0):
            assert float(format_float(value)) == value

    def test_atomic_write(self, tmp_path):
        path = str(tmp_path / "nested" / "out.txt")
        write_text_atomically(path, "first")
        write_text_atomically(path, "second")
        with open(path) as infile:
            assert infile.read() == "second"
        assert os.listdir(tmp_path / "nested") == ["out.txt"]

    def test_fingerprint(self):
        fingerprint = get_run_fingerprint("run")
        assert fingerprint["package"].startswith("bilevel_gr/")
        assert fingerprint["label"] == "run"


class TestErrors:
    def test_configuration_error_names_key(self):
        error = ConfigurationError("Unknown key", key="solvers[0].aplha")
        assert error.key == "solvers[0].aplha"
        assert str(error) == "Unknown key (key: solvers[0].aplha)"

    def test_shape_mismatch_is_a_value_error(self):
        assert issubclass(ShapeMismatchError, ValueError)
