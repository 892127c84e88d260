# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Linear softmax regression pieces shared by the hyper-cleaning and meta problems.

Parameters of a head are a flat vector: the (features, classes) weight matrix
in row-major order followed by the class biases.
"""

from typing import Tuple

import numpy as np

from ..errors import ShapeMismatchError  # type:ignore


def head_size(features: int, classes: int) -> int:
    return features * classes + classes


def split_head(params: np.ndarray, features: int, classes: int) -> Tuple[np.ndarray, np.ndarray]:
    if params.shape[0] != head_size(features, classes):
        raise ShapeMismatchError(
            f"Softmax head for {features} features and {classes} classes needs "
            f"{head_size(features, classes)} parameters, got {params.shape[0]}"
        )
    weight = params[: features * classes].reshape(features, classes)
    bias = params[features * classes :]
    return weight, bias


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy and softmax probabilities.
    Returns:
        (losses of shape (B,), probabilities of shape (B, classes))
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    losses = -log_probs[np.arange(labels.shape[0]), labels]
    return losses, np.exp(log_probs)


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    encoded = np.zeros((labels.shape[0], classes))
    encoded[np.arange(labels.shape[0]), labels] = 1.0
    return encoded


def head_losses(features: np.ndarray, labels: np.ndarray, params: np.ndarray, classes: int):
    """Forward pass of one softmax head.
    Returns:
        (per-sample losses, probabilities, d loss / d logits for every sample)
    """
    weight, bias = split_head(params, features.shape[1], classes)
    losses, probs = softmax_cross_entropy(features @ weight + bias, labels)
    return losses, probs, probs - one_hot(labels, classes)


def head_gradient(features: np.ndarray, logit_grads: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the head parameters given d(loss)/d(logits) per sample."""
    return np.concatenate([(features.T @ logit_grads).reshape(-1), logit_grads.sum(axis=0)])


def head_logit_directions(features: np.ndarray, direction: np.ndarray, classes: int) -> np.ndarray:
    """Change of the logits along a direction in head-parameter space."""
    weight, bias = split_head(direction, features.shape[1], classes)
    return features @ weight + bias


def softmax_jvp(probs: np.ndarray, logit_directions: np.ndarray) -> np.ndarray:
    """(diag(p) - p p^T) dz for every row."""
    inner = np.sum(probs * logit_directions, axis=1, keepdims=True)
    return probs * (logit_directions - inner)


def accuracy(features: np.ndarray, labels: np.ndarray, params: np.ndarray, classes: int) -> float:
    weight, bias = split_head(params, features.shape[1], classes)
    predictions = np.argmax(features @ weight + bias, axis=1)
    return float(np.mean(predictions == labels))
