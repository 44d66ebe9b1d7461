"""Data-driven task-based quantizer.

A dense analog network feeds a per-channel soft quantization activation (a
sum of scaled, shifted hyperbolic tangents) whose outer scales and shifts are
trainable while the steepness constants stay fixed; a dense digital network
recovers the task. The whole chain trains end-to-end with plain SGD and
hand-written reverse-mode gradients, and is hardened afterwards into a true
piecewise-constant quantizer per channel. No path may bypass the quantization
activation: the structure is a strict analog -> quantize -> digital chain.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import TrainingDiverged
from .quant import LearnedQuantizerSpec, UniformQuantizerSpec, learned_quantize

__all__ = [
    "DenseLayer",
    "SoftQuantizer",
    "HardQuantizer",
    "Network",
    "TrainConfig",
    "soft_quantize",
    "forward",
    "loss",
    "backward",
    "train",
    "harden",
    "classify",
    "glorot_init",
    "build_estimation_network",
    "build_classification_network",
]

_ACTIVATIONS = ("identity", "tanh")
_PROB_FLOOR = 1e-30


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (out, in) with a matching bias")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")


def soft_quantize(z, outer, shifts, steepness):
    """Differentiable quantizer: sum_i outer_i * tanh(steepness_i * z - shifts_i)."""
    z = np.asarray(z, dtype=float)
    outer = np.asarray(outer, dtype=float)
    shifts = np.asarray(shifts, dtype=float)
    steepness = np.asarray(steepness, dtype=float)
    t = np.tanh(z[..., None] * steepness - shifts)
    return (outer * t).sum(axis=-1)


@dataclass
class SoftQuantizer:
    """Per-channel soft quantization activation.

    outer and shifts are (channels, levels - 1) trainable arrays; steepness is
    the same shape but fixed, since it only controls how closely the smooth
    activation tracks a step map, not the quantization rule itself.
    """

    outer: np.ndarray
    shifts: np.ndarray
    steepness: np.ndarray

    def __post_init__(self):
        self.outer = np.atleast_2d(np.asarray(self.outer, dtype=float))
        self.shifts = np.atleast_2d(np.asarray(self.shifts, dtype=float))
        self.steepness = np.atleast_2d(np.asarray(self.steepness, dtype=float))
        if not (self.outer.shape == self.shifts.shape == self.steepness.shape):
            raise ValueError("outer, shifts, steepness must share one shape")
        if np.any(self.steepness <= 0):
            raise ValueError("steepness constants must be positive")

    @property
    def channels(self) -> int:
        return self.outer.shape[0]

    def apply(self, z: np.ndarray) -> np.ndarray:
        return soft_quantize(z, self.outer, self.shifts, self.steepness)


@dataclass
class HardQuantizer:
    """Per-channel piecewise-constant quantizer obtained by hardening."""

    channel_specs: tuple

    @property
    def channels(self) -> int:
        return len(self.channel_specs)

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for j, spec in enumerate(self.channel_specs):
            out[:, j] = learned_quantize(z[:, j], spec)
        return out


@dataclass
class Network:
    """Strict analog -> quantizer -> digital chain with an estimation or
    classification head (softmax over the last digital layer's outputs)."""

    analog: list
    quantizer: object
    digital: list
    head: str = "estimation"

    def __post_init__(self):
        if self.head not in ("estimation", "classification"):
            raise ValueError("head must be 'estimation' or 'classification'")
        self.validate()

    def validate(self):
        """Check the layer chain: dimensions must thread through the quantizer."""
        if not self.analog or not self.digital:
            raise ValueError("need at least one analog and one digital layer")
        width = self.analog[0].weights.shape[1]
        for layer in self.analog:
            if layer.weights.shape[1] != width:
                raise ValueError("analog layer widths do not chain")
            width = layer.weights.shape[0]
        if width != self.quantizer.channels:
            raise ValueError(
                f"analog output width {width} does not match the "
                f"{self.quantizer.channels}-channel quantizer")
        for layer in self.digital:
            if layer.weights.shape[1] != width:
                raise ValueError("digital layer widths do not chain")
            width = layer.weights.shape[0]
        return True

    @property
    def input_dim(self) -> int:
        return self.analog[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.digital[-1].weights.shape[0]


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _dense_forward(layers, x, cache=None):
    for layer in layers:
        pre = x @ layer.weights.T + layer.bias
        out = np.tanh(pre) if layer.activation == "tanh" else pre
        if cache is not None:
            cache.append((x, out))
        x = out
    return x


def forward(net: Network, x) -> np.ndarray:
    """Network output: task estimates, or class probabilities summing to one."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input dimension {x.shape[1]} does not match "
                         f"network input {net.input_dim}")
    z = _dense_forward(net.analog, x)
    q = net.quantizer.apply(z)
    out = _dense_forward(net.digital, q)
    if net.head == "classification":
        return _softmax(out)
    return out


def loss(net: Network, x, targets) -> float:
    """Mean squared error over the batch, or mean cross-entropy for labels."""
    out = forward(net, x)
    if net.head == "estimation":
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        return float(((targets - out) ** 2).sum(axis=1).mean())
    labels = np.asarray(targets, dtype=int)
    picked = out[np.arange(out.shape[0]), labels]
    return float(-np.log(np.maximum(picked, _PROB_FLOOR)).mean())


@dataclass
class Gradients:
    analog: list      # (dW, db) per layer
    quant_outer: np.ndarray
    quant_shifts: np.ndarray
    digital: list


def backward(net: Network, x, targets):
    """Loss and exact reverse-mode gradients of every trainable parameter.

    Steepness constants are fixed, so they get no gradient entry.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    batch = x.shape[0]

    analog_cache = []
    z = _dense_forward(net.analog, x, analog_cache)
    qz = net.quantizer
    t = np.tanh(z[:, :, None] * qz.steepness - qz.shifts)
    q = (qz.outer * t).sum(axis=2)
    digital_cache = []
    out = _dense_forward(net.digital, q, digital_cache)

    if net.head == "estimation":
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        diff = out - targets
        value = float((diff ** 2).sum(axis=1).mean())
        grad = 2.0 * diff / batch
    else:
        labels = np.asarray(targets, dtype=int)
        probs = _softmax(out)
        picked = probs[np.arange(batch), labels]
        value = float(-np.log(np.maximum(picked, _PROB_FLOOR)).mean())
        grad = probs.copy()
        grad[np.arange(batch), labels] -= 1.0
        grad /= batch

    def dense_backward(layers, cache, upstream):
        grads = [None] * len(layers)
        for idx in range(len(layers) - 1, -1, -1):
            layer = layers[idx]
            inp, out_ = cache[idx]
            if layer.activation == "tanh":
                upstream = upstream * (1.0 - out_ ** 2)
            grads[idx] = (upstream.T @ inp, upstream.sum(axis=0))
            upstream = upstream @ layer.weights
        return grads, upstream

    digital_grads, dq = dense_backward(net.digital, digital_cache, grad)
    sech2 = 1.0 - t ** 2
    d_outer = (dq[:, :, None] * t).sum(axis=0)
    d_shifts = -(dq[:, :, None] * qz.outer * sech2).sum(axis=0)
    dz = (dq[:, :, None] * qz.outer * qz.steepness * sech2).sum(axis=2)
    analog_grads, _ = dense_backward(net.analog, analog_cache, dz)

    return value, Gradients(analog=analog_grads, quant_outer=d_outer,
                            quant_shifts=d_shifts, digital=digital_grads)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 40
    seed: int = 0
    c_schedule: Optional[Sequence[float]] = None   # steepness multipliers per epoch

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size, epochs must be positive")
        if self.c_schedule is not None:
            sched = np.asarray(self.c_schedule, dtype=float)
            if np.any(sched <= 0) or np.any(np.diff(sched) < 0):
                raise ValueError("c_schedule must be positive and non-decreasing")


def train(net: Network, x, targets, config: TrainConfig,
          verbose: bool = False) -> list:
    """Plain SGD over shuffled mini-batches; deterministic for a fixed seed.

    Returns the per-epoch mean training loss. Aborts if the loss leaves the
    finite range.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    count = x.shape[0]
    if count < config.batch_size:
        raise ValueError(f"dataset of {count} samples is smaller than one batch")
    targets = np.asarray(targets)
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    base_steepness = net.quantizer.steepness.copy()
    history = []
    for epoch in range(config.epochs):
        if config.c_schedule is not None:
            idx = min(epoch, len(config.c_schedule) - 1)
            net.quantizer.steepness = base_steepness * config.c_schedule[idx]
        order = rng.permutation(count)
        epoch_losses = []
        for start in range(0, count, config.batch_size):
            pick = order[start:start + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = backward(net, x[pick], targets[pick])
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"loss became {value} at epoch {epoch}, step {start // config.batch_size}")
            epoch_losses.append(value)
            for layer, (dw, db) in zip(net.analog, grads.analog):
                layer.weights -= lr * dw
                layer.bias -= lr * db
            net.quantizer.outer -= lr * grads.quant_outer
            net.quantizer.shifts -= lr * grads.quant_shifts
            for layer, (dw, db) in zip(net.digital, grads.digital):
                layer.weights -= lr * dw
                layer.bias -= lr * db
        history.append(float(np.mean(epoch_losses)))
        if verbose:
            print(f"epoch {epoch + 1}/{config.epochs}: loss {history[-1]:.6f}")
    return history


def harden(net: Network) -> Network:
    """Replace the soft activation with the step map it approximates.

    Per channel the thresholds are shifts / steepness (sorted); crossing the
    j-th threshold adds twice its outer scale, starting from minus the sum of
    all scales. Thresholds closer than 1e-9 merge and their level jumps add.
    """
    qz = net.quantizer
    if not isinstance(qz, SoftQuantizer):
        raise ValueError("network is already hardened")
    specs = []
    for ch in range(qz.channels):
        raw_t = qz.shifts[ch] / qz.steepness[ch]
        order = np.argsort(raw_t, kind="stable")
        t_sorted = raw_t[order]
        a_sorted = qz.outer[ch][order]
        thresholds = [t_sorted[0]]
        jumps = [2.0 * a_sorted[0]]
        for tj, aj in zip(t_sorted[1:], a_sorted[1:]):
            if tj - thresholds[-1] < 1e-9:
                jumps[-1] += 2.0 * aj
            else:
                thresholds.append(tj)
                jumps.append(2.0 * aj)
        levels = np.concatenate([[-qz.outer[ch].sum()],
                                 -qz.outer[ch].sum() + np.cumsum(jumps)])
        specs.append(LearnedQuantizerSpec(np.asarray(thresholds), levels))
    hard = HardQuantizer(tuple(specs))
    return Network(analog=copy.deepcopy(net.analog), quantizer=hard,
                   digital=copy.deepcopy(net.digital), head=net.head)


def classify(net: Network, x) -> np.ndarray:
    """Most probable class per input; ties resolve to the lowest index."""
    if net.head != "classification":
        raise ValueError("classify requires a classification head")
    probs = forward(net, x)
    return np.argmax(probs, axis=1)


def glorot_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def _uniform_soft_quantizer(channels: int, levels: int, support: float,
                            steepness_scale: float = 50.0) -> SoftQuantizer:
    """Soft activation matching a mid-rise uniform quantizer at initialization.

    Steepness is specified on the unit-scaled range: the tanh transitions span
    about 2/steepness_scale of the (-1, 1) interval regardless of support.
    """
    spec = UniformQuantizerSpec(levels=levels, support=support)
    interior = -support + spec.spacing * np.arange(1, levels)
    c = steepness_scale / support
    outer = np.full((channels, levels - 1), spec.spacing / 2.0)
    steep = np.full((channels, levels - 1), c)
    shifts = np.tile(interior * c, (channels, 1))
    return SoftQuantizer(outer=outer, shifts=shifts, steepness=steep)


def _build_dense(rng, dims, hidden_activation="tanh", final_activation="identity"):
    layers = []
    for i in range(len(dims) - 1):
        act = final_activation if i == len(dims) - 2 else hidden_activation
        layers.append(DenseLayer(weights=glorot_init(rng, dims[i + 1], dims[i]),
                                 bias=np.zeros(dims[i + 1]), activation=act))
    return layers


def _calibrated_support(analog_layers, x_calib, support_scale):
    z = _dense_forward(analog_layers, np.atleast_2d(x_calib))
    return float(support_scale * z.std(axis=0).max())


def build_estimation_network(rng: np.random.Generator, input_dim: int,
                             channels: int, output_dim: int, levels: int,
                             x_calib, hidden_analog: Sequence[int] = (),
                             hidden_digital: Sequence[int] = (),
                             support_scale: float = 4.0,
                             steepness_scale: float = 50.0) -> Network:
    """Estimation network with the quantizer support calibrated on sample data."""
    analog = _build_dense(rng, [input_dim, *hidden_analog, channels])
    support = _calibrated_support(analog, x_calib, support_scale)
    quant = _uniform_soft_quantizer(channels, levels, support, steepness_scale)
    digital = _build_dense(rng, [channels, *hidden_digital, output_dim])
    return Network(analog=analog, quantizer=quant, digital=digital,
                   head="estimation")


def build_classification_network(rng: np.random.Generator, input_dim: int,
                                 channels: int, n_classes: int, levels: int,
                                 x_calib, hidden_analog: Sequence[int] = (),
                                 hidden_digital: Sequence[int] = (),
                                 support_scale: float = 4.0,
                                 steepness_scale: float = 50.0) -> Network:
    analog = _build_dense(rng, [input_dim, *hidden_analog, channels])
    support = _calibrated_support(analog, x_calib, support_scale)
    quant = _uniform_soft_quantizer(channels, levels, support, steepness_scale)
    digital = _build_dense(rng, [channels, *hidden_digital, n_classes])
    return Network(analog=analog, quantizer=quant, digital=digital,
                   head="classification")
