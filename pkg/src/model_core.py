# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Minimal neural-network kernel with analytic gradients.

Tensors are numpy arrays laid out as (sequence, batch, feature). Parameters live in one
ordered mapping per model, keyed `<layer>.<name>`; layers only hold their keys, so the
same layer object can run forward and backward passes on any parameter set (which is
what finite-difference checks and the optimizer need).
"""

import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from constants import MODEL_FORMAT_VERSION, MODEL_MAGIC
from errors import ModelFormatError, NonFiniteError, ValidationError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


def named_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """Generator for one named random stream of a seeded run.

    Streams with different names or keys are independent, so adding draws to one stream
    never shifts another.
    """
    return np.random.default_rng([int(seed), zlib.crc32(stream.encode("utf-8")), *map(int, keys)])


def check_finite(array: np.ndarray, operation: str) -> np.ndarray:
    """Raises NonFiniteError naming `operation` when `array` holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(operation)
    return array


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, written through tanh so large inputs do not overflow."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along `axis`."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValidationError("softmax of an empty vector")
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(weights: np.ndarray, dweights: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient of softmax inputs given the gradient of its outputs."""
    return weights * (dweights - np.sum(weights * dweights, axis=axis, keepdims=True))


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient of tanh inputs given its output `y`."""
    return dy * (1.0 - y * y)


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to the prediction."""
    if prediction.shape != target.shape:
        raise ValidationError(f"prediction shape {prediction.shape} != target {target.shape}")
    diff = prediction - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """A named block of parameters."""

    def __init__(self, name: str):
        self.name = name

    def key(self, param: str) -> str:
        """Full parameter key."""
        return f"{self.name}.{param}"

    def initialize(self, rng: np.random.Generator) -> Params:
        """Fresh parameters in declaration order."""
        return {}

    def _accumulate(self, grads: Params, param: str, value: np.ndarray) -> None:
        key = self.key(param)
        check_finite(value, f"{self.name}.backward")
        if key in grads:
            grads[key] += value
        else:
            grads[key] = value.copy()


class Dense(Layer):
    """Fully connected layer applied over the last axis."""

    def __init__(self, name: str, n_in: int, n_out: int):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out

    def initialize(self, rng: np.random.Generator) -> Params:
        """Uniform weights in ±1/sqrt(fan_in)."""
        return {
            self.key("W"): _uniform(rng, (self.n_in, self.n_out), self.n_in),
            self.key("b"): _uniform(rng, (self.n_out,), self.n_in),
        }

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns x W + b and the cache for the backward pass."""
        if x.shape[-1] != self.n_in:
            raise ValidationError(
                f"{self.name}: input width {x.shape[-1]} does not match weights ({self.n_in}, {self.n_out})"
            )
        y = x @ params[self.key("W")] + params[self.key("b")]
        return check_finite(y, f"{self.name}.forward"), x

    def backward(self, params: Params, grads: Params, dy: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Accumulates dW, db and returns dx."""
        x2, dy2 = x.reshape(-1, self.n_in), dy.reshape(-1, self.n_out)
        self._accumulate(grads, "W", x2.T @ dy2)
        self._accumulate(grads, "b", dy2.sum(axis=0))
        return dy @ params[self.key("W")].T


@dataclass(frozen=True)
class LstmCellParams:
    """Weights of one LSTM cell, gates stacked as input, forget, output, candidate."""

    w_input: np.ndarray
    w_recurrent: np.ndarray
    bias: np.ndarray

    @property
    def hidden_size(self) -> int:
        """H_dim."""
        return self.w_recurrent.shape[0]

    def __post_init__(self):
        h = self.w_recurrent.shape[0]
        if self.w_recurrent.shape != (h, 4 * h) or self.w_input.shape[1] != 4 * h:
            raise ValidationError(
                f"inconsistent LSTM shapes {self.w_input.shape}, {self.w_recurrent.shape}"
            )
        if self.bias.shape != (4 * h,):
            raise ValidationError(f"LSTM bias shape {self.bias.shape}, expected ({4 * h},)")


def _lstm_step(cell: LstmCellParams, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    hidden = cell.hidden_size
    z = x @ cell.w_input + h @ cell.w_recurrent + cell.bias
    i = sigmoid(z[:, :hidden])
    f = sigmoid(z[:, hidden : 2 * hidden])
    o = sigmoid(z[:, 2 * hidden : 3 * hidden])
    g = np.tanh(z[:, 3 * hidden :])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    return o * tanh_c, c_new, (x, h, c, i, f, o, g, tanh_c)


def lstm_forward(
    cell: LstmCellParams,
    input_seq: np.ndarray,
    initial_state: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """Runs the LSTM recurrence over a (T, B, F) sequence.

    Returns:
        hidden_seq: (T, B, H) hidden states.
        final_state: (h_T, c_T).

    Raises:
        ValidationError: the input width does not match the weights.
    """
    if input_seq.ndim != 3 or input_seq.shape[2] != cell.w_input.shape[0]:
        raise ValidationError(
            f"LSTM input shape {input_seq.shape} does not match weights {cell.w_input.shape}"
        )
    steps, batch = input_seq.shape[:2]
    h, c = initial_state or (np.zeros((batch, cell.hidden_size)), np.zeros((batch, cell.hidden_size)))
    hidden = np.empty((steps, batch, cell.hidden_size))
    for t in range(steps):
        h, c, _ = _lstm_step(cell, input_seq[t], h, c)
        hidden[t] = h
    return check_finite(hidden, "lstm_forward"), (h, c)


class Lstm(Layer):
    """LSTM layer over (T, B, F) sequences; forget-gate bias starts at 1."""

    def __init__(self, name: str, n_in: int, hidden_size: int):
        super().__init__(name)
        self.n_in, self.hidden_size = n_in, hidden_size

    def initialize(self, rng: np.random.Generator) -> Params:
        """Uniform weights, zero biases except the forget gate."""
        h = self.hidden_size
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0
        return {
            self.key("Wx"): _uniform(rng, (self.n_in, 4 * h), self.n_in),
            self.key("Wh"): _uniform(rng, (h, 4 * h), h),
            self.key("b"): bias,
        }

    def cell(self, params: Params) -> LstmCellParams:
        """Typed view of this layer's weights."""
        return LstmCellParams(params[self.key("Wx")], params[self.key("Wh")], params[self.key("b")])

    def step_forward(self, params: Params, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        """One recurrence step; returns (h, c, cache)."""
        if x.shape[-1] != self.n_in:
            raise ValidationError(f"{self.name}: input width {x.shape[-1]}, expected {self.n_in}")
        h_new, c_new, cache = _lstm_step(self.cell(params), x, h, c)
        return check_finite(h_new, f"{self.name}.forward"), c_new, cache

    def step_backward(self, params: Params, grads: Params, dh: np.ndarray, dc: np.ndarray, cache):
        """Backward of one step; returns (dx, dh_prev, dc_prev)."""
        x, h_prev, c_prev, i, f, o, g, tanh_c = cache
        do = dh * tanh_c
        dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
        dz = np.concatenate(
            [
                dc_total * g * i * (1.0 - i),
                dc_total * c_prev * f * (1.0 - f),
                do * o * (1.0 - o),
                dc_total * i * (1.0 - g * g),
            ],
            axis=1,
        )
        self._accumulate(grads, "Wx", x.T @ dz)
        self._accumulate(grads, "Wh", h_prev.T @ dz)
        self._accumulate(grads, "b", dz.sum(axis=0))
        return dz @ params[self.key("Wx")].T, dz @ params[self.key("Wh")].T, dc_total * f

    def forward(self, params: Params, x: np.ndarray, h0=None, c0=None):
        """Returns (hidden_seq, (h_T, c_T), caches)."""
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ValidationError(
                f"{self.name}: input shape {x.shape} does not match width {self.n_in}"
            )
        steps, batch = x.shape[:2]
        h = np.zeros((batch, self.hidden_size)) if h0 is None else h0
        c = np.zeros((batch, self.hidden_size)) if c0 is None else c0
        hidden = np.empty((steps, batch, self.hidden_size))
        caches = []
        for t in range(steps):
            h, c, cache = self.step_forward(params, x[t], h, c)
            hidden[t] = h
            caches.append(cache)
        return hidden, (h, c), caches

    def backward(self, params: Params, grads: Params, dhidden, dh_last, dc_last, caches):
        """Backpropagation through time; returns (dx, dh0, dc0)."""
        steps = len(caches)
        batch = caches[0][0].shape[0]
        dx = np.empty((steps, batch, self.n_in))
        dh = np.zeros((batch, self.hidden_size)) if dh_last is None else dh_last.copy()
        dc = np.zeros((batch, self.hidden_size)) if dc_last is None else dc_last.copy()
        for t in reversed(range(steps)):
            if dhidden is not None:
                dh = dh + dhidden[t]
            dx[t], dh, dc = self.step_backward(params, grads, dh, dc, caches[t])
        return dx, dh, dc


class Rnn(Layer):
    """Vanilla tanh recurrent layer."""

    def __init__(self, name: str, n_in: int, hidden_size: int):
        super().__init__(name)
        self.n_in, self.hidden_size = n_in, hidden_size

    def initialize(self, rng: np.random.Generator) -> Params:
        """Uniform weights, zero bias."""
        h = self.hidden_size
        return {
            self.key("Wx"): _uniform(rng, (self.n_in, h), self.n_in),
            self.key("Wh"): _uniform(rng, (h, h), h),
            self.key("b"): np.zeros(h),
        }

    def forward(self, params: Params, x: np.ndarray, h0=None):
        """Returns (hidden_seq, h_T, caches)."""
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ValidationError(
                f"{self.name}: input shape {x.shape} does not match width {self.n_in}"
            )
        steps, batch = x.shape[:2]
        h = np.zeros((batch, self.hidden_size)) if h0 is None else h0
        hidden = np.empty((steps, batch, self.hidden_size))
        caches = []
        for t in range(steps):
            h_prev = h
            h = np.tanh(x[t] @ params[self.key("Wx")] + h @ params[self.key("Wh")] + params[self.key("b")])
            hidden[t] = h
            caches.append((x[t], h_prev, h))
        return check_finite(hidden, f"{self.name}.forward"), h, caches

    def backward(self, params: Params, grads: Params, dhidden, dh_last, caches):
        """Backpropagation through time; returns (dx, dh0)."""
        steps = len(caches)
        batch = caches[0][0].shape[0]
        dx = np.empty((steps, batch, self.n_in))
        dh = np.zeros((batch, self.hidden_size)) if dh_last is None else dh_last.copy()
        for t in reversed(range(steps)):
            x_t, h_prev, h = caches[t]
            if dhidden is not None:
                dh = dh + dhidden[t]
            dz = tanh_backward(h, dh)
            self._accumulate(grads, "Wx", x_t.T @ dz)
            self._accumulate(grads, "Wh", h_prev.T @ dz)
            self._accumulate(grads, "b", dz.sum(axis=0))
            dx[t] = dz @ params[self.key("Wx")].T
            dh = dz @ params[self.key("Wh")].T
        return dx, dh


class BiLstm(Layer):
    """Two LSTMs reading the sequence in opposite directions, outputs concatenated."""

    def __init__(self, name: str, n_in: int, hidden_size: int):
        super().__init__(name)
        self.forward_lstm = Lstm(f"{name}.fwd", n_in, hidden_size)
        self.backward_lstm = Lstm(f"{name}.bwd", n_in, hidden_size)
        self.hidden_size = hidden_size

    def initialize(self, rng: np.random.Generator) -> Params:
        """Both directions, forward first."""
        return {**self.forward_lstm.initialize(rng), **self.backward_lstm.initialize(rng)}

    def forward(self, params: Params, x: np.ndarray):
        """Returns ((T, B, 2H) outputs, caches)."""
        h_fwd, _, cache_fwd = self.forward_lstm.forward(params, x)
        h_bwd_rev, _, cache_bwd = self.backward_lstm.forward(params, x[::-1])
        return np.concatenate([h_fwd, h_bwd_rev[::-1]], axis=2), (cache_fwd, cache_bwd)

    def backward(self, params: Params, grads: Params, dout: np.ndarray, caches) -> np.ndarray:
        """Returns dx."""
        h = self.hidden_size
        cache_fwd, cache_bwd = caches
        dx_fwd, _, _ = self.forward_lstm.backward(params, grads, dout[:, :, :h], None, None, cache_fwd)
        dx_bwd, _, _ = self.backward_lstm.backward(
            params, grads, dout[::-1, :, h:], None, None, cache_bwd
        )
        return dx_fwd + dx_bwd[::-1]


class Conv1d(Layer):
    """Valid 1-D convolution along the sequence axis."""

    def __init__(self, name: str, n_in: int, n_out: int, kernel: int):
        super().__init__(name)
        self.n_in, self.n_out, self.kernel = n_in, n_out, kernel

    def output_length(self, steps: int) -> int:
        """Sequence length after the convolution."""
        return steps - self.kernel + 1

    def initialize(self, rng: np.random.Generator) -> Params:
        """Uniform weights over kernel * channels fan-in."""
        fan_in = self.kernel * self.n_in
        return {
            self.key("W"): _uniform(rng, (fan_in, self.n_out), fan_in),
            self.key("b"): _uniform(rng, (self.n_out,), fan_in),
        }

    def forward(self, params: Params, x: np.ndarray):
        """Returns ((T - k + 1, B, C_out) outputs, cache)."""
        steps, batch, channels = x.shape
        if channels != self.n_in or self.output_length(steps) < 1:
            raise ValidationError(
                f"{self.name}: input shape {x.shape} incompatible with kernel {self.kernel}, width {self.n_in}"
            )
        windows = np.lib.stride_tricks.sliding_window_view(x, self.kernel, axis=0)
        cols = windows.transpose(0, 1, 3, 2).reshape(self.output_length(steps), batch, -1)
        y = cols @ params[self.key("W")] + params[self.key("b")]
        return check_finite(y, f"{self.name}.forward"), (cols, x.shape)

    def backward(self, params: Params, grads: Params, dy: np.ndarray, cache) -> np.ndarray:
        """Returns dx."""
        cols, shape = cache
        self._accumulate(grads, "W", cols.reshape(-1, cols.shape[-1]).T @ dy.reshape(-1, self.n_out))
        self._accumulate(grads, "b", dy.reshape(-1, self.n_out).sum(axis=0))
        dcols = (dy @ params[self.key("W")].T).reshape(dy.shape[0], dy.shape[1], self.kernel, self.n_in)
        dx = np.zeros(shape)
        for j in range(self.kernel):
            dx[j : j + dy.shape[0]] += dcols[:, :, j, :]
        return dx


def dropout(
    x: np.ndarray, rate: float, training: bool, rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout; returns (output, mask), the mask is None when inactive.

    Raises:
        ValidationError: rate outside [0, 1).
    """
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValidationError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    """Gradient through a dropout mask."""
    return dy if mask is None else dy * mask


@dataclass(frozen=True)
class AttentionParams:
    """Additive attention: `attn` maps [s; h_j] to a score vector projected by `v`."""

    attn_weight: np.ndarray
    attn_bias: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        width = self.attn_weight.shape[1]
        if self.attn_bias.shape != (width,) or self.v.shape != (width,):
            raise ValidationError(
                f"attention width {width} does not match bias {self.attn_bias.shape} / v {self.v.shape}"
            )


def _attention_forward(params: AttentionParams, s_prev: np.ndarray, hidden: np.ndarray):
    if hidden.shape[0] == 0:
        raise ValidationError("attention over an empty encoder sequence")
    steps = hidden.shape[0]
    if s_prev.shape[-1] + hidden.shape[-1] != params.attn_weight.shape[0]:
        raise ValidationError(
            f"attention input width {s_prev.shape[-1]} + {hidden.shape[-1]} does not match {params.attn_weight.shape}"
        )
    joined = np.concatenate([np.broadcast_to(s_prev, (steps,) + s_prev.shape), hidden], axis=2)
    energy = np.tanh(joined @ params.attn_weight + params.attn_bias)
    weights = softmax(energy @ params.v, axis=0)
    context = np.sum(weights[:, :, None] * hidden, axis=0)
    return weights, context, (joined, energy, weights, hidden)


def attention(
    s_prev: np.ndarray, hidden: np.ndarray, params: AttentionParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Additive attention of a decoder state over encoder states.

    score_j = v . tanh(attn([s_prev; h_j])), weights = softmax over j,
    context = sum_j weights_j h_j.

    Args:
        s_prev: (B, S) previous decoder state.
        hidden: (T, B, H) encoder states.
        params: attention weights.

    Returns:
        (T, B) weights and (B, H) context.
    """
    weights, context, _ = _attention_forward(params, s_prev, hidden)
    return weights, context


class Attention(Layer):
    """Additive attention layer with parameter keys `Wa`, `ba`, `v`."""

    def __init__(self, name: str, state_size: int, hidden_size: int, attn_size: int):
        super().__init__(name)
        self.state_size, self.hidden_size, self.attn_size = state_size, hidden_size, attn_size

    def initialize(self, rng: np.random.Generator) -> Params:
        """Uniform weights."""
        fan_in = self.state_size + self.hidden_size
        return {
            self.key("Wa"): _uniform(rng, (fan_in, self.attn_size), fan_in),
            self.key("ba"): _uniform(rng, (self.attn_size,), fan_in),
            self.key("v"): _uniform(rng, (self.attn_size,), self.attn_size),
        }

    def view(self, params: Params) -> AttentionParams:
        """Typed view of this layer's weights."""
        return AttentionParams(params[self.key("Wa")], params[self.key("ba")], params[self.key("v")])

    def forward(self, params: Params, s_prev: np.ndarray, hidden: np.ndarray):
        """Returns (weights, context, cache)."""
        weights, context, cache = _attention_forward(self.view(params), s_prev, hidden)
        return weights, check_finite(context, f"{self.name}.forward"), cache

    def backward(self, params: Params, grads: Params, dcontext: np.ndarray, cache):
        """Returns (ds_prev, dhidden)."""
        joined, energy, weights, hidden = cache
        dweights = np.sum(dcontext[None, :, :] * hidden, axis=2)
        dhidden = weights[:, :, None] * dcontext[None, :, :]
        dscores = softmax_backward(weights, dweights, axis=0)
        self._accumulate(grads, "v", np.einsum("tb,tba->a", dscores, energy))
        dpre = tanh_backward(energy, dscores[:, :, None] * params[self.key("v")])
        flat = dpre.reshape(-1, self.attn_size)
        self._accumulate(grads, "Wa", joined.reshape(-1, joined.shape[-1]).T @ flat)
        self._accumulate(grads, "ba", flat.sum(axis=0))
        djoined = dpre @ params[self.key("Wa")].T
        return djoined[:, :, : self.state_size].sum(axis=0), dhidden + djoined[:, :, self.state_size :]


@dataclass
class OptimizerState:
    """Adam moments and schedule."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)


def clip_gradients(grads: Params, max_norm: float) -> Params:
    """Rescales gradients whose global norm exceeds `max_norm`; 0 disables clipping."""
    if max_norm <= 0:
        return grads
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


def optimizer_step(state: OptimizerState, params: Params, grads: Params) -> Params:
    """One Adam update with bias correction; returns new parameters, updates `state`.

    Raises:
        ValidationError: a gradient shape does not match its parameter.
    """
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    updated = {}
    for key, value in params.items():
        grad = grads.get(key)
        if grad is None:
            grad = np.zeros_like(value)
        if grad.shape != value.shape:
            raise ValidationError(f"gradient shape {grad.shape} does not match {key} {value.shape}")
        m = state.first_moment.setdefault(key, np.zeros_like(value))
        v = state.second_moment.setdefault(key, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        updated[key] = value - state.learning_rate * (m / correction1) / (
            np.sqrt(v / correction2) + state.epsilon
        )
    return updated


def save_parameters(path: Union[str, Path], params: Params, config: Dict[str, Any]) -> None:
    """Writes the versioned binary model format.

    Layout: magic, uint32 version, uint32 config length, JSON config, uint32 tensor count,
    then per tensor a uint16-prefixed name, uint8 rank, int64 shape and little-endian
    float64 values, in declaration order.
    """
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<II", MODEL_FORMAT_VERSION, len(blob)))
        handle.write(blob)
        handle.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", value.ndim))
            handle.write(struct.pack(f"<{value.ndim}q", *value.shape))
            handle.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_parameters(path: Union[str, Path]) -> Tuple[Params, Dict[str, Any]]:
    """Reads a file written by `save_parameters`.

    Raises:
        ModelFormatError: wrong magic, unknown version or truncated content.
    """
    data = Path(path).read_bytes()
    if not data.startswith(MODEL_MAGIC):
        raise ModelFormatError(f"{path} is not a model file")
    offset = len(MODEL_MAGIC)
    try:
        version, blob_len = struct.unpack_from("<II", data, offset)
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        offset += 8
        config = json.loads(data[offset : offset + blob_len].decode("utf-8"))
        offset += blob_len
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        params: Params = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            name = data[offset + 2 : offset + 2 + name_len].decode("utf-8")
            offset += 2 + name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            shape = struct.unpack_from(f"<{ndim}q", data, offset + 1)
            offset += 1 + 8 * ndim
            size = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape).astype(float)
            offset += 8 * size
    except (struct.error, ValueError) as e:
        raise ModelFormatError(f"{path}: truncated or corrupt model file ({e})") from e
    if offset != len(data):
        raise ModelFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return params, config


def initialize_layers(layers: List[Layer], rng: np.random.Generator) -> Params:
    """Initializes layers in order into one parameter mapping."""
    params: Params = {}
    for layer in layers:
        params.update(layer.initialize(rng))
    return params
