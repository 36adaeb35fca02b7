"""Minimal deterministic feed-forward network framework.

Supports exactly what descriptor regression and the synthetic encoders
need: dense layers with GeLU or identity activations, reverse-mode
gradients for a mean-squared-error head or for an arbitrary output
gradient, and textbook Adam with bias correction.

All math runs in float64 so analytic gradients check cleanly against
central finite differences. Models are immutable; every update returns a
new model, which keeps trained models safely shareable across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import DimMismatch, ShapeMismatch

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
_U64 = (1 << 64) - 1


class Activation(enum.Enum):
    """Layer activation; integer values double as the file-format codes."""

    GELU = 0
    IDENTITY = 1


def gelu(x):
    """GeLU in its tanh approximation.

    0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    """
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_derivative(x):
    x = np.asarray(x, dtype=np.float64)
    inner = _GELU_C * (x + _GELU_A * x**3)
    th = np.tanh(inner)
    sech2 = 1.0 - th**2
    return 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or w.shape[0] != b.shape[0]:
            raise ShapeMismatch(f"layer weights {w.shape} incompatible with bias {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class MlpModel:
    """A stack of dense layers with chained dimensions."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        layers = tuple(self.layers)
        for a, b in zip(layers, layers[1:]):
            if a.weights.shape[0] != b.weights.shape[1]:
                raise ShapeMismatch(
                    f"layer output dim {a.weights.shape[0]} does not feed layer input dim {b.weights.shape[1]}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].weights.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.layers[-1].weights.shape[0])

    def layer_widths(self) -> list[int]:
        """Input dim followed by every layer's output dim."""
        return [self.input_dim] + [int(l.weights.shape[0]) for l in self.layers]


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _U64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31), state


def init_mlp(widths, activations, seed: int) -> MlpModel:
    """Seeded Glorot-uniform initialization.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    Each layer draws from its own SplitMix64-derived stream so layer
    initializations are independent of each other's sizes.
    """
    if len(activations) != len(widths) - 1:
        raise ShapeMismatch("need one activation per layer")
    state = int(seed) & _U64
    layers = []
    for i, act in enumerate(activations):
        fan_in, fan_out = widths[i], widths[i + 1]
        stream_seed, state = splitmix64(state)
        rng = np.random.Generator(np.random.PCG64(stream_seed))
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(weights=w, bias=np.zeros(fan_out), activation=act))
    return MlpModel(layers=tuple(layers))


def forward_batch(model: MlpModel, x: np.ndarray, keep_cache: bool = False):
    """Forward pass over a (batch, input_dim) matrix.

    Returns (output, cache); cache holds per-layer inputs,
    pre-activations, and the GeLU tanh terms so the backward pass never
    recomputes a tanh.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimMismatch(f"input shape {x.shape} does not match model input dim {model.input_dim}")
    activations = [x]
    pre = []
    tanhs = []
    for layer in model.layers:
        z = activations[-1] @ layer.weights.T + layer.bias
        pre.append(z)
        if layer.activation is Activation.GELU:
            th = np.tanh(_GELU_C * (z + _GELU_A * z**3))
            tanhs.append(th)
            activations.append(0.5 * z * (1.0 + th))
        else:
            tanhs.append(None)
            activations.append(z)
    cache = (activations, pre, tanhs) if keep_cache else None
    return activations[-1], cache


def mlp_forward(model: MlpModel, x) -> np.ndarray:
    """Forward pass for a single input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y, _ = forward_batch(model, x)
    return y[0]


def backward_batch(model: MlpModel, cache, d_output: np.ndarray):
    """Reverse-mode pass from an output gradient.

    ``d_output`` is dLoss/dOutput of shape (batch, output_dim). Returns
    (grads, d_input) where grads is a list of (dW, db) per layer summed
    over the batch.
    """
    activations, pre, tanhs = cache
    grads = [None] * len(model.layers)
    delta = np.asarray(d_output, dtype=np.float64)
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        if layer.activation is Activation.GELU:
            z = pre[li]
            th = tanhs[li]
            deriv = 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * z**2)
            delta = delta * deriv
        grads[li] = (delta.T @ activations[li], delta.sum(axis=0))
        delta = delta @ layer.weights
    return grads, delta


def mlp_grad(model: MlpModel, x, target):
    """Loss and parameter gradients for one (input, target) pair.

    The loss is the mean over output dimensions of the squared error;
    gradients come from reverse-mode differentiation.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    t = np.asarray(target, dtype=np.float64).reshape(1, -1)
    if t.shape[1] != model.output_dim:
        raise DimMismatch(f"target dim {t.shape[1]} does not match model output dim {model.output_dim}")
    y, cache = forward_batch(model, x, keep_cache=True)
    resid = y - t
    loss = float(np.mean(resid**2))
    d_out = 2.0 * resid / resid.shape[1]
    grads, _ = backward_batch(model, cache, d_out)
    return loss, grads


def mse_batch_grad(model: MlpModel, x: np.ndarray, targets: np.ndarray):
    """Batch-mean MSE loss and gradients (averaged over the batch)."""
    y, cache = forward_batch(model, x, keep_cache=True)
    resid = y - targets
    loss = float(np.mean(resid**2))
    d_out = 2.0 * resid / resid.size
    grads, _ = backward_batch(model, cache, d_out)
    return loss, grads


def zero_grads(model: MlpModel):
    return [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers]


def add_grads(acc, grads, scale: float = 1.0):
    return [(aw + scale * gw, ab + scale * gb) for (aw, ab), (gw, gb) in zip(acc, grads)]


@dataclass(frozen=True)
class AdamState:
    """Adam accumulators shaped like the model they optimize."""

    lr: float
    step_count: int
    m: tuple
    v: tuple
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(model: MlpModel, lr: float) -> AdamState:
    if lr <= 0.0:
        raise ValueError("learning rate must be positive")
    zeros = tuple((np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers)
    return AdamState(lr=float(lr), step_count=0, m=zeros, v=zeros)


def adam_update_arrays(theta, m, v, g, lr, beta1, beta2, eps, t):
    """The Adam recurrence on one parameter array; returns (theta, m, v).

    m and v are the first and second moment running averages and t the
    1-based step count used for bias correction.
    """
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g**2
    theta = theta - lr * (m / (1.0 - beta1**t)) / (np.sqrt(v / (1.0 - beta2**t)) + eps)
    return theta, m, v


def adam_step(state: AdamState, model: MlpModel, grads) -> tuple[MlpModel, AdamState]:
    """One bias-corrected Adam update; returns (new model, new state)."""
    if len(grads) != len(model.layers):
        raise ShapeMismatch("gradient list does not match model layers")
    t = state.step_count + 1
    new_layers = []
    new_m = []
    new_v = []
    for layer, (mw, mb), (vw, vb), (gw, gb) in zip(model.layers, state.m, state.v, grads):
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ShapeMismatch("gradient shapes do not match layer shapes")
        w, mw, vw = adam_update_arrays(layer.weights, mw, vw, gw, state.lr, state.beta1, state.beta2, state.eps, t)
        b, mb, vb = adam_update_arrays(layer.bias, mb, vb, gb, state.lr, state.beta1, state.beta2, state.eps, t)
        new_layers.append(Layer(weights=w, bias=b, activation=layer.activation))
        new_m.append((mw, mb))
        new_v.append((vw, vb))
    return MlpModel(layers=tuple(new_layers)), replace(
        state, step_count=t, m=tuple(new_m), v=tuple(new_v)
    )


class RawLayer:
    """Mutable duck-typed layer used inside training loops.

    Skips the frozen-dataclass validation that :class:`Layer` performs on
    every construction; forward/backward only touch the three attributes.
    """

    __slots__ = ("weights", "bias", "activation")

    def __init__(self, weights, bias, activation):
        self.weights = weights
        self.bias = bias
        self.activation = activation


class RawNet:
    """Mutable model view sharing :func:`forward_batch`/:func:`backward_batch`.

    All parameters live in one flat buffer; layer weights and biases are
    reshaped views into it, so a flat in-place optimizer update is visible
    to the next forward pass with no copying.
    """

    __slots__ = ("layers", "flat", "slices")

    def __init__(self, model: MlpModel):
        total = sum(l.weights.size + l.bias.size for l in model.layers)
        self.flat = np.empty(total)
        self.layers = []
        self.slices = []
        offset = 0
        for l in model.layers:
            w_view = self.flat[offset : offset + l.weights.size].reshape(l.weights.shape)
            w_view[...] = l.weights
            w_slice = (offset, offset + l.weights.size)
            offset += l.weights.size
            b_view = self.flat[offset : offset + l.bias.size]
            b_view[...] = l.bias
            b_slice = (offset, offset + l.bias.size)
            offset += l.bias.size
            self.layers.append(RawLayer(w_view, b_view, l.activation))
            self.slices.append((w_slice, b_slice))

    @classmethod
    def from_model(cls, model: MlpModel) -> "RawNet":
        return cls(model)

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].weights.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.layers[-1].weights.shape[0])

    def snapshot(self) -> np.ndarray:
        return self.flat.copy()

    def to_model(self, params: np.ndarray | None = None) -> MlpModel:
        flat = self.flat if params is None else params
        layers = []
        for layer, ((ws, we), (bs, be)) in zip(self.layers, self.slices):
            layers.append(
                Layer(
                    weights=flat[ws:we].reshape(layer.weights.shape).copy(),
                    bias=flat[bs:be].copy(),
                    activation=layer.activation,
                )
            )
        return MlpModel(layers=tuple(layers))

    def flatten_grads(self, grads, out: np.ndarray) -> np.ndarray:
        for (gw, gb), ((ws, we), (bs, be)) in zip(grads, self.slices):
            out[ws:we] = gw.ravel()
            out[bs:be] = gb.ravel()
        return out


class RawAdam:
    """In-place Adam over a :class:`RawNet`; same recurrence as adam_step."""

    __slots__ = ("lr", "beta1", "beta2", "eps", "t", "m", "v", "_g")

    def __init__(self, net: RawNet, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros_like(net.flat)
        self.v = np.zeros_like(net.flat)
        self._g = np.empty_like(net.flat)

    def step(self, net: RawNet, grads) -> None:
        g = net.flatten_grads(grads, self._g)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g**2
        update = self.lr * (self.m / (1.0 - self.beta1**self.t))
        update /= np.sqrt(self.v / (1.0 - self.beta2**self.t)) + self.eps
        net.flat -= update


def regress_nonlinear(model: MlpModel, f_anchor, dp) -> np.ndarray:
    """Regress a descriptor at a target pose from one anchor.

    Stacks the anchor descriptor with the 7-component relative pose and
    runs the regressor; the model input dim must equal descriptor dim + 7.
    """
    f_anchor = np.asarray(f_anchor, dtype=np.float64).reshape(-1)
    x = np.concatenate([f_anchor, dp.as_vector()])
    if x.shape[0] != model.input_dim:
        raise DimMismatch(
            f"stacked input length {x.shape[0]} does not match regressor input dim {model.input_dim}"
        )
    if model.output_dim != f_anchor.shape[0]:
        raise DimMismatch(
            f"regressor output dim {model.output_dim} does not match descriptor dim {f_anchor.shape[0]}"
        )
    return mlp_forward(model, x)


def regress_nonlinear_batch(model: MlpModel, f_anchors: np.ndarray, dp_vectors: np.ndarray) -> np.ndarray:
    """Vectorized :func:`regress_nonlinear` over stacked rows."""
    x = np.hstack([f_anchors, dp_vectors])
    if x.shape[1] != model.input_dim:
        raise DimMismatch(
            f"stacked input length {x.shape[1]} does not match regressor input dim {model.input_dim}"
        )
    y, _ = forward_batch(model, x)
    return y
