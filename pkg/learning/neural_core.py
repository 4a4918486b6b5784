"""
Dense neural building blocks with explicit backward passes.

Matrices are 2D float64 numpy arrays, one row per sample. A layer weight has
shape (out, in) and is applied as x @ W.T + b.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from utils.common_utils import ArgumentError

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5


@dataclass
class MlpParams:
    """Weights and biases of a Tanh MLP. `activate_output` applies Tanh after the last layer."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activate_output: bool = True

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ArgumentError("an MLP needs one bias per weight and at least one layer")
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            if weight.ndim != 2 or bias.shape != (weight.shape[0],):
                raise ArgumentError(f"layer {index}: weight {weight.shape} and bias {bias.shape} disagree")
            if index and weight.shape[1] != self.weights[index - 1].shape[0]:
                raise ArgumentError(
                    f"layer {index} expects width {weight.shape[1]} but previous layer produces "
                    f"{self.weights[index - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def named_blocks(self, prefix: str) -> dict[str, np.ndarray]:
        blocks = {}
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            blocks[f"{prefix}.W{index}"] = weight
            blocks[f"{prefix}.b{index}"] = bias
        return blocks

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases],
                         self.activate_output)


@dataclass
class MlpCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_mlp(rng: np.random.Generator, sizes: list[int], activate_output: bool = True) -> MlpParams:
    """Glorot-uniform weights and zero biases for layer widths sizes[0] -> ... -> sizes[-1]."""
    weights = [glorot_uniform(rng, fan_out, fan_in) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return MlpParams(weights, biases, activate_output)


def mlp_forward(x: np.ndarray, params: MlpParams) -> tuple[np.ndarray, MlpCache]:
    """
    Row-wise y = tanh(W_k(...tanh(W_1 x + b_1)...) + b_k).

    Raises:
        ArgumentError: If x.cols differs from the first layer's input width.
    """
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ArgumentError(f"MLP expects {params.in_dim} input columns, got shape {x.shape}")
    cache = MlpCache()
    last = len(params.weights) - 1
    h = x
    for index, (weight, bias) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ weight.T + bias
        h = np.tanh(z) if (index < last or params.activate_output) else z
        cache.outputs.append(h)
    return h, cache


def mlp_backward(grad_out: np.ndarray, params: MlpParams, cache: MlpCache) -> tuple[np.ndarray, MlpParams]:
    """Returns (d loss / d input, parameter gradients) given d loss / d output."""
    grads = params.zeros_like()
    last = len(params.weights) - 1
    delta = grad_out
    for index in range(last, -1, -1):
        if index < last or params.activate_output:
            out = cache.outputs[index]
            delta = delta * (1.0 - out * out)
        grads.weights[index] = delta.T @ cache.inputs[index]
        grads.biases[index] = delta.sum(axis=0)
        delta = delta @ params.weights[index]
    return delta, grads


@dataclass
class LayerNormCache:
    normalized: np.ndarray
    inv_std: np.ndarray


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps_ln: float = LAYER_NORM_EPS) -> tuple[np.ndarray, LayerNormCache]:
    """Per-row (x - mean) / sqrt(var + eps_ln) * gamma + beta with the population variance."""
    x = np.atleast_2d(x)
    if x.shape[1] == 0:
        raise ArgumentError("layer_norm needs a non-empty row")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ArgumentError(f"gamma/beta must have shape ({x.shape[1]},)")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps_ln)
    normalized = centered * inv_std
    return normalized * gamma + beta, LayerNormCache(normalized, inv_std)


def layer_norm_backward(grad_out: np.ndarray, gamma: np.ndarray,
                        cache: LayerNormCache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d input, d gamma, d beta)."""
    d_gamma = np.sum(grad_out * cache.normalized, axis=0)
    d_beta = np.sum(grad_out, axis=0)
    g = grad_out * gamma
    width = g.shape[1]
    d_x = cache.inv_std * (
        g - g.sum(axis=1, keepdims=True) / width
        - cache.normalized * np.sum(g * cache.normalized, axis=1, keepdims=True) / width
    )
    return d_x, d_gamma, d_beta


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over all entries of the squared difference."""
    if pred.shape != target.shape:
        raise ArgumentError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ArgumentError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return 2.0 * (pred - target) / pred.size


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update, applied in place to the arrays of `params`.

    Raises:
        ArgumentError: If a gradient is missing or its shape differs from the parameter's.
    """
    for name, value in params.items():
        if name not in grads or grads[name].shape != value.shape:
            raise ArgumentError(f"gradient for {name!r} is missing or has the wrong shape")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps_adam)
    return params, state


def grad_check(f: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
               params: dict[str, np.ndarray], fd_step: float = 1e-6) -> float:
    """
    Compares reverse-mode gradients with central differences.

    `f(params)` returns (value, grads). Every component of every parameter is
    perturbed in place by +-fd_step and restored.

    Returns:
        max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over all components.
    """
    _, analytic = f(params)
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + fd_step
            plus, _ = f(params)
            flat[index] = original - fd_step
            minus, _ = f(params)
            flat[index] = original
            numeric = (plus - minus) / (2.0 * fd_step)
            denom = max(abs(grad[index]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[index] - numeric) / denom)
    return worst
