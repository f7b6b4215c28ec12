"""Dense feed-forward building blocks: affine layers, activations, forward/backward.

The first layer of a stack may receive a scipy CSR matrix; everything after it
is dense float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError


@dataclass
class Layer:
    """Affine map ``x @ W + b``. Also reused as a same-shaped gradient holder."""

    W: np.ndarray
    b: np.ndarray


def _dtanh(a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a


def _drelu(a: np.ndarray) -> np.ndarray:
    return (a > 0).astype(a.dtype)


def _didentity(a: np.ndarray) -> np.ndarray:
    return np.ones_like(a)


# name -> (activation, derivative expressed in terms of the activation output)
ACTIVATIONS = {
    "tanh": (np.tanh, _dtanh),
    "relu": (lambda z: np.maximum(z, 0.0), _drelu),
    "identity": (lambda z: z, _didentity),
}


def init_layer(n_in: int, n_out: int, rng: np.random.Generator) -> Layer:
    # uniform +-sqrt(6 / (fan_in + fan_out)), zero bias
    bound = math.sqrt(6.0 / (n_in + n_out))
    return Layer(W=rng.uniform(-bound, bound, size=(n_in, n_out)), b=np.zeros(n_out))


def init_mlp(dims: Sequence[int], rng: np.random.Generator) -> list[Layer]:
    if len(dims) < 2:
        raise ValueError("an MLP needs at least input and output dimensions")
    return [init_layer(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]


@dataclass
class ForwardCache:
    inputs: list
    activations: list[np.ndarray]


def mlp_forward(layers: Sequence[Layer], x, nonlinearity: str = "tanh"):
    """Hidden layers apply the nonlinearity, the last layer is linear.

    Returns ``(output, cache)``; the cache feeds :func:`mlp_backward`.
    """
    act, _ = ACTIVATIONS[nonlinearity]
    inputs, hidden = [], []
    a = x
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        inputs.append(a)
        z = a @ layer.W + layer.b
        if i < last:
            a = act(z)
            hidden.append(a)
        else:
            a = z
    return a, ForwardCache(inputs=inputs, activations=hidden)


def mlp_backward(
    layers: Sequence[Layer],
    cache: ForwardCache,
    d_out: np.ndarray,
    nonlinearity: str = "tanh",
    need_input_grad: bool = True,
):
    """Backpropagate ``d_out``; returns (per-layer grads, gradient w.r.t. the input).

    The input gradient is skipped (None) when ``need_input_grad`` is false, which
    avoids densifying sparse first-layer inputs.
    """
    _, dact = ACTIVATIONS[nonlinearity]
    grads: list[Layer] = [None] * len(layers)  # type: ignore[list-item]
    delta = d_out
    d_input = None
    for i in range(len(layers) - 1, -1, -1):
        x = cache.inputs[i]
        grads[i] = Layer(W=np.asarray(x.T @ delta), b=np.asarray(delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ layers[i].W.T) * dact(cache.activations[i - 1])
        elif need_input_grad:
            d_input = delta @ layers[0].W.T
    return grads, d_input


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in {name}")
