"""Dense feed-forward networks over flat float64 parameter vectors.

A network is a value: its weights live in one contiguous ``ParameterSet``
(a 1-D float64 array) laid out layer by layer as ``W`` (row-major,
``d_in x d_out``) followed by ``b``.  Forward passes return a cache that the
matching backward pass consumes; nothing is mutated in place, so models can be
averaged, copied and shipped between simulated clients freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, UsageError

ACTIVATIONS = ("identity", "tanh", "relu", "sigmoid", "log_softmax")

ParameterSet = np.ndarray


def param_count(layer_dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass(frozen=True, eq=False)
class DenseNetwork:
    """Stack of fully connected layers with one activation per layer."""

    layer_dims: tuple[int, ...]
    activations: tuple[str, ...]
    params: ParameterSet = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activations", acts)
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigurationError(f"layer_dims must list >= 2 positive widths, got {dims}")
        if len(acts) != len(dims) - 1:
            raise ConfigurationError(
                f"{len(dims) - 1} layers need {len(dims) - 1} activations, got {len(acts)}"
            )
        for i, act in enumerate(acts):
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r}")
            if act == "log_softmax" and i != len(acts) - 1:
                raise ConfigurationError("log_softmax is only allowed as the final activation")
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim != 1 or params.size != param_count(dims):
            raise ConfigurationError(
                f"expected {param_count(dims)} parameters for {dims}, got shape {params.shape}"
            )
        object.__setattr__(self, "params", params)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_size(self) -> int:
        return self.layer_dims[0]

    @property
    def output_size(self) -> int:
        return self.layer_dims[-1]

    def layers(self, params: ParameterSet | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(W, b)`` views into ``params`` (defaults to this net's own)."""
        flat = self.params if params is None else params
        offset = 0
        for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = flat[offset : offset + d_in * d_out].reshape(d_in, d_out)
            offset += d_in * d_out
            b = flat[offset : offset + d_out]
            offset += d_out
            yield w, b

    def with_params(self, params: ParameterSet) -> "DenseNetwork":
        return DenseNetwork(self.layer_dims, self.activations, params)

    def same_architecture(self, other: "DenseNetwork") -> bool:
        return self.layer_dims == other.layer_dims and self.activations == other.activations


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    epochs: int = 2
    batch_size: int = 8
    dropout_rate: float = 0.0

    def validate(self, prefix: str = "sgd") -> list[str]:
        errors = []
        if not self.learning_rate >= 0:
            errors.append(f"{prefix}.learning_rate must be >= 0, got {self.learning_rate}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            errors.append(f"{prefix}.epochs must be a positive integer, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            errors.append(f"{prefix}.batch_size must be a positive integer, got {self.batch_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            errors.append(f"{prefix}.dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        return errors


@dataclass
class ForwardCache:
    net: DenseNetwork
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    masks: list[np.ndarray | None]


def init_params(layer_dims: Sequence[int], rng: np.random.Generator) -> ParameterSet:
    """Glorot-uniform weights, zero biases."""
    chunks = []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        s = np.sqrt(6.0 / (d_in + d_out))
        chunks.append(rng.uniform(-s, s, size=d_in * d_out))
        chunks.append(np.zeros(d_out))
    return np.concatenate(chunks)


def build_network(
    layer_dims: Sequence[int], activations: Sequence[str], rng: np.random.Generator
) -> DenseNetwork:
    return DenseNetwork(tuple(layer_dims), tuple(activations), init_params(layer_dims, rng))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _activation_backward(name: str, y: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # y is the activation output
    if name == "identity":
        return grad
    if name == "tanh":
        return grad * (1.0 - y * y)
    if name == "relu":
        return grad * (y > 0.0)
    if name == "sigmoid":
        return grad * y * (1.0 - y)
    return grad - np.exp(y) * grad.sum(axis=1, keepdims=True)


def forward(
    net: DenseNetwork,
    x: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
) -> tuple[np.ndarray, ForwardCache]:
    """Run ``x`` (rows = samples) through ``net``.

    With ``train_mode`` and ``dropout > 0`` every layer input is masked with
    inverted-dropout scaling; otherwise the pass is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_size:
        raise ConfigurationError(
            f"network expects input of width {net.input_size}, got shape {x.shape}"
        )
    use_dropout = train_mode and dropout > 0.0
    if use_dropout and rng is None:
        raise UsageError("dropout in train mode requires an rng")
    keep = 1.0 - dropout
    inputs, outputs, masks = [], [], []
    a = x
    for (w, b), act in zip(net.layers(), net.activations):
        mask = None
        if use_dropout:
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        inputs.append(a)
        masks.append(mask)
        a = _activate(act, a @ w + b)
        outputs.append(a)
    return a, ForwardCache(net, inputs, outputs, masks)


def backward(
    net: DenseNetwork, cache: ForwardCache, upstream: np.ndarray
) -> tuple[ParameterSet, np.ndarray]:
    """Return (d loss / d params, d loss / d input) given d loss / d output."""
    if cache.net is not net:
        raise UsageError("forward cache belongs to a different network")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.outputs[-1].shape:
        raise UsageError(
            f"upstream gradient shape {upstream.shape} != output shape {cache.outputs[-1].shape}"
        )
    grads = np.empty_like(net.params)
    layers = list(net.layers())
    grad_layers = list(net.layers(grads))
    g = upstream
    for i in reversed(range(net.n_layers)):
        g = _activation_backward(net.activations[i], cache.outputs[i], g)
        w = layers[i][0]
        gw, gb = grad_layers[i]
        gw[...] = cache.inputs[i].T @ g
        gb[...] = g.sum(axis=0)
        g = g @ w.T
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
    return grads, g


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all entries of the squared difference, and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise UsageError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def nll_loss(log_probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    labels = np.asarray(labels)
    n, classes = log_probs.shape
    if labels.shape != (n,):
        raise UsageError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    rows = np.arange(n)
    grad = np.zeros_like(log_probs)
    grad[rows, labels] = -1.0 / n
    return float(-log_probs[rows, labels].mean()), grad


def sgd_step(params: ParameterSet, grads: ParameterSet, lr: float) -> ParameterSet:
    if params.shape != grads.shape:
        raise UsageError(f"parameter/gradient length mismatch: {params.shape} vs {grads.shape}")
    return params - lr * grads


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index batches covering ``range(n)`` once; the last batch may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def numerical_gradient(
    fn: Callable[[ParameterSet], float], params: ParameterSet, eps: float = 1e-5
) -> ParameterSet:
    """Central finite differences of a scalar function; the test oracle for ``backward``."""
    params = np.array(params, dtype=np.float64)
    grad = np.empty_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + eps
        up = fn(params)
        params[i] = old - eps
        down = fn(params)
        params[i] = old
        grad[i] = (up - down) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
