# Copyright 2026, bilevel-gr authors. All rights reserved.

"""A minimal fully-connected network with hand-written reverse mode and Adam.

Parameters live in one flat float64 vector so networks plug straight into
BilevelOracle as theta or omega. Layout: per layer, the (fan_in, fan_out)
weight matrix in row-major order, then the bias.
"""

import re
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ShapeMismatchError, StaleCacheError  # type:ignore
from .serialization import dump_to_file, load_from_file  # type:ignore

_ACTIVATION_PATTERN = re.compile(r"^\s*(leaky_relu|identity|sigmoid|tanh)\s*(?:\(\s*([0-9.eE+-]+)\s*\))?\s*$")


class Activation:
    """One of leaky_relu(slope), identity, sigmoid, tanh."""

    kind: str
    slope: float

    def __init__(self, kind: str, slope: float = 0.2):
        if kind not in ("leaky_relu", "identity", "sigmoid", "tanh"):
            raise ConfigurationError(f"Unknown activation: {kind}")
        if kind == "leaky_relu" and not 0.0 < slope < 1.0:
            raise ConfigurationError(f"leaky_relu slope must be in (0, 1), got {slope}")
        self.kind = kind
        self.slope = float(slope)

    @classmethod
    def parse(cls, value: Union[str, "Activation"]) -> "Activation":
        if isinstance(value, Activation):
            return value
        match = _ACTIVATION_PATTERN.match(str(value))
        if match is None:
            raise ConfigurationError(f"Cannot parse activation: {value!r}")
        kind, slope = match.group(1), match.group(2)
        if kind == "leaky_relu":
            return cls(kind, float(slope) if slope is not None else 0.2)
        if slope is not None:
            raise ConfigurationError(f"{kind} takes no parameter: {value!r}")
        return cls(kind)

    def __str__(self):
        if self.kind == "leaky_relu":
            return f"leaky_relu({self.slope!r})"
        return self.kind

    def __eq__(self, other):
        return isinstance(other, Activation) and str(self) == str(other)

    def __hash__(self):
        return hash(str(self))

    def forward(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if self.kind == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * z))
        if self.kind == "tanh":
            return np.tanh(z)
        return z

    def derivative(self, z: np.ndarray, out: np.ndarray) -> np.ndarray:
        if self.kind == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope)
        if self.kind == "sigmoid":
            return out * (1.0 - out)
        if self.kind == "tanh":
            return 1.0 - out * out
        return np.ones_like(z)


class MLPSpec:
    """Layer widths (input, hidden..., output) and activations.

    activation applies to every hidden layer (or give one per hidden layer);
    final_activation applies to the output layer.
    """

    layer_widths: Tuple[int, ...]
    activations: Tuple[Activation, ...]
    final_activation: Activation

    def __init__(
        self,
        layer_widths: Sequence[int],
        activation: Union[str, Activation, Sequence[Union[str, Activation]]] = "leaky_relu(0.2)",
        final_activation: Union[str, Activation] = "identity",
    ):
        widths = tuple(int(w) for w in layer_widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ConfigurationError(f"MLP needs >= 2 positive widths, got {layer_widths}")
        hidden_count = len(widths) - 2
        if isinstance(activation, (str, Activation)):
            hidden = tuple(Activation.parse(activation) for _ in range(hidden_count))
        else:
            hidden = tuple(Activation.parse(a) for a in activation)
            if len(hidden) != hidden_count:
                raise ConfigurationError(
                    f"Expected {hidden_count} hidden activations, got {len(hidden)}"
                )
        self.layer_widths = widths
        self.activations = hidden
        self.final_activation = Activation.parse(final_activation)

    def __eq__(self, other):
        return isinstance(other, MLPSpec) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"MLPSpec({self.to_dict()})"

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        return list(zip(self.layer_widths[:-1], self.layer_widths[1:]))

    @property
    def num_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)

    def activation_for(self, layer: int) -> Activation:
        if layer == len(self.layer_widths) - 2:
            return self.final_activation
        return self.activations[layer]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layer_widths": list(self.layer_widths),
            "activations": [str(a) for a in self.activations],
            "final_activation": str(self.final_activation),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MLPSpec":
        return cls(
            data["layer_widths"],
            activation=data.get("activations", []),
            final_activation=data.get("final_activation", "identity"),
        )


class MLPParams:
    """Flat parameter vector plus the spec that shapes it.

    Methods that modify data in place bump version, which invalidates
    forward caches built before the change.
    """

    spec: MLPSpec
    data: np.ndarray
    version: int

    def __init__(self, spec: MLPSpec, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64).reshape(-1)
        if data.shape[0] != spec.num_params:
            raise ShapeMismatchError(
                f"MLP with widths {spec.layer_widths} needs {spec.num_params} parameters, got {data.shape[0]}"
            )
        self.spec = spec
        self.data = data
        self.version = 0

    def unflatten(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        layers = []
        offset = 0
        for fan_in, fan_out in self.spec.layer_shapes:
            weight = self.data[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = self.data[offset : offset + fan_out]
            offset += fan_out
            layers.append((weight, bias))
        return layers

    @classmethod
    def flatten(cls, spec: MLPSpec, layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> "MLPParams":
        parts = []
        for (weight, bias), (fan_in, fan_out) in zip(layers, spec.layer_shapes):
            parts.append(np.asarray(weight, dtype=np.float64).reshape(fan_in * fan_out))
            parts.append(np.asarray(bias, dtype=np.float64).reshape(fan_out))
        return cls(spec, np.concatenate(parts))

    def assign(self, data: np.ndarray) -> None:
        self.data[:] = np.asarray(data, dtype=np.float64).reshape(-1)
        self.version += 1


class MLPCache:
    """Activations retained by mlp_forward for mlp_backward."""

    def __init__(self, params: MLPParams, inputs, pre_activations, outputs):
        self.params = params
        self.version = params.version
        self.inputs = inputs
        self.pre_activations = pre_activations
        self.outputs = outputs


def _as_params(params: Union[MLPParams, np.ndarray], spec: MLPSpec) -> MLPParams:
    if isinstance(params, MLPParams):
        if params.spec != spec:
            raise ShapeMismatchError("params were built for a different MLPSpec")
        return params
    return MLPParams(spec, params)


def mlp_forward(
    params: Union[MLPParams, np.ndarray],
    spec: MLPSpec,
    batch: np.ndarray,
) -> Tuple[np.ndarray, MLPCache]:
    """Affine + activation stack on a (B, d_in) batch.
    Returns:
        (output of shape (B, d_out), cache for mlp_backward)
    """
    params = _as_params(params, spec)
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ShapeMismatchError(
            f"Batch must have shape (B, {spec.input_dim}), got {h.shape}"
        )
    inputs, pre_activations, outputs = [], [], []
    for layer, (weight, bias) in enumerate(params.unflatten()):
        z = h @ weight + bias
        inputs.append(h)
        pre_activations.append(z)
        h = spec.activation_for(layer).forward(z)
        outputs.append(h)
    return h, MLPCache(params, inputs, pre_activations, outputs)


def mlp_backward(cache: MLPCache, upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode gradients of sum(upstream * output).
    Returns:
        (gradient w.r.t. the flat parameters, gradient w.r.t. the input batch)
    Raises:
        StaleCacheError: the parameters were modified in place after the forward pass.
    """
    params = cache.params
    if params.version != cache.version:
        raise StaleCacheError(
            f"Cache was built at parameter version {cache.version}, params are now at {params.version}"
        )
    spec = params.spec
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.outputs[-1].shape:
        raise ShapeMismatchError(
            f"Upstream must have shape {cache.outputs[-1].shape}, got {upstream.shape}"
        )
    layers = params.unflatten()
    grads: List[np.ndarray] = [None] * (2 * len(layers))  # type:ignore
    delta = upstream
    grad_input = None
    for layer in range(len(layers) - 1, -1, -1):
        weight, _ = layers[layer]
        activation = spec.activation_for(layer)
        delta = delta * activation.derivative(cache.pre_activations[layer], cache.outputs[layer])
        grads[2 * layer] = (cache.inputs[layer].T @ delta).reshape(-1)
        grads[2 * layer + 1] = delta.sum(axis=0)
        grad_input = delta @ weight.T
        delta = grad_input
    return np.concatenate(grads), grad_input


def mlp_init(spec: MLPSpec, seed: int) -> MLPParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in spec.layer_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return MLPParams.flatten(spec, layers)


def clip_params(flat: np.ndarray, clip: float) -> np.ndarray:
    return np.clip(flat, -clip, clip)


class AdamState:
    """Moments, step counter and hyper-parameters of one Adam optimizer."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    m: np.ndarray
    v: np.ndarray
    step: int

    def __init__(
        self,
        size: int,
        *,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step = 0


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. The state is advanced in place and returned."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != state.m.shape or grad.shape != state.m.shape:
        raise ShapeMismatchError(
            f"Adam state has size {state.m.shape[0]}, got params {params.shape} and grad {grad.shape}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


def mlp_gradient_check(
    spec: MLPSpec,
    seed: int = 0,
    batch_size: int = 4,
    step: float = 1e-4,
) -> Dict[str, float]:
    """Central-difference check of mlp_backward on random params, batch and upstream.
    Returns:
        {'params': max rel err, 'input': max rel err}
    """
    rng = np.random.default_rng(seed)
    params = mlp_init(spec, seed)
    batch = rng.standard_normal((batch_size, spec.input_dim))
    upstream = rng.standard_normal((batch_size, spec.output_dim))

    def loss(flat: np.ndarray, x: np.ndarray) -> float:
        out, _ = mlp_forward(flat, spec, x)
        return float(np.sum(upstream * out))

    _, cache = mlp_forward(params, spec, batch)
    grad_params, grad_input = mlp_backward(cache, upstream)

    numeric_params = np.empty_like(params.data)
    for i in range(params.data.shape[0]):
        shifted = params.data.copy()
        shifted[i] += step
        f_plus = loss(shifted, batch)
        shifted[i] -= 2 * step
        numeric_params[i] = (f_plus - loss(shifted, batch)) / (2 * step)

    numeric_input = np.empty_like(batch)
    for idx in np.ndindex(*batch.shape):
        shifted = batch.copy()
        shifted[idx] += step
        f_plus = loss(params.data, shifted)
        shifted[idx] -= 2 * step
        numeric_input[idx] = (f_plus - loss(params.data, shifted)) / (2 * step)

    def rel(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(a - b)) / max(float(np.linalg.norm(b)), 1e-12)

    return {"params": rel(grad_params, numeric_params), "input": rel(grad_input, numeric_input)}


def save_params(path: str, params: MLPParams, meta: Optional[Dict[str, Any]] = None) -> None:
    """Writes a checkpoint: JSON header with the spec, then little-endian float64 params."""
    header = {"kind": "mlp_params", "spec": params.spec.to_dict()}
    if meta:
        header["meta"] = meta
    dump_to_file(path, header, OrderedDict([("params", params.data)]))


def load_params(path: str) -> MLPParams:
    header, arrays = load_from_file(path)
    if header.get("kind") != "mlp_params":
        raise ConfigurationError(f"{path} is not an MLP checkpoint")
    return MLPParams(MLPSpec.from_dict(header["spec"]), arrays["params"])
