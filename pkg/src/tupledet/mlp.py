"""Multilayer perceptron with analytically derived gradients.

Parameters live in plain float64 numpy arrays. Hidden layers apply the
configured activation (ReLU by default); the final layer is always linear
because downstream losses operate on raw dot products.

Both single-vector and batched entry points are provided. The batched
versions treat rows as independent samples and sum parameter gradients
over the batch; the single-vector versions are thin wrappers and are the
ones pinned down by the hand-computed and finite-difference tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .validation import as_matrix, as_vector, check_positive_dims

ACTIVATIONS = ("relu", "identity")


@dataclass
class MlpParams:
    """Weights and biases for a stack of linear layers.

    weights[k] has shape (layer_dims[k+1], layer_dims[k]); biases[k] has
    shape (layer_dims[k+1],). The activation applies after every layer
    except the last.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty and aligned")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k}: input dim {w.shape[1]} does not chain")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)


@dataclass
class MlpGrads:
    """Parameter gradients with the same shapes as the MlpParams they mirror."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "MlpGrads":
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])

    def add_(self, other: "MlpGrads", scale: float = 1.0) -> None:
        for w, ow in zip(self.weights, other.weights):
            w += scale * ow
        for b, ob in zip(self.biases, other.biases):
            b += scale * ob


@dataclass
class ForwardCache:
    """Per-layer records needed for an exact backward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)   # input to each layer
    pre_acts: list[np.ndarray] = field(default_factory=list)  # z_k before activation


def init_params(layer_dims, seed: int, activation: str = "relu") -> MlpParams:
    """Uniform fan-in/fan-out initialization: w ~ U[-a, a], a = sqrt(6/(fan_in+fan_out)).

    Biases start at exactly zero. Deterministic for a fixed seed.
    """
    dims = check_positive_dims(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def _act(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad_mask(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def mlp_forward_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass over a (batch, in_dim) matrix. Returns (batch, out_dim) output."""
    x = as_matrix(x, cols=params.in_dim, name="mlp input")
    cache = ForwardCache()
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(a)
        z = a @ w.T + b
        cache.pre_acts.append(z)
        a = z if k == last else _act(z, params.activation)
    return a, cache


def mlp_backward_batch(params: MlpParams, cache: ForwardCache,
                       grad_output: np.ndarray) -> tuple[MlpGrads, np.ndarray]:
    """Backward pass for mlp_forward_batch.

    grad_output is d(loss)/d(output), shape (batch, out_dim). Parameter
    gradients are summed over the batch; also returns d(loss)/d(input).
    """
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (cache.inputs[0].shape[0], params.out_dim):
        raise ShapeError(
            f"grad_output shape {grad_output.shape} does not match "
            f"({cache.inputs[0].shape[0]}, {params.out_dim})")
    n_layers = len(params.weights)
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers
    dz = grad_output
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:  # upstream grad is w.r.t. post-activation
            dz = dz * _act_grad_mask(cache.pre_acts[k], params.activation)
        d_weights[k] = dz.T @ cache.inputs[k]
        d_biases[k] = dz.sum(axis=0)
        dz = dz @ params.weights[k]
    return MlpGrads(d_weights, d_biases), dz


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Single-vector forward pass: x has shape (in_dim,)."""
    x = as_vector(x, dim=params.in_dim, name="mlp input")
    y, cache = mlp_forward_batch(params, x[None, :])
    return y[0], cache


def mlp_backward(params: MlpParams, cache: ForwardCache,
                 grad_output) -> tuple[MlpGrads, np.ndarray]:
    """Single-vector backward pass matching mlp_forward."""
    grad_output = as_vector(grad_output, dim=params.out_dim, name="grad_output")
    grads, dx = mlp_backward_batch(params, cache, grad_output[None, :])
    return grads, dx[0]
