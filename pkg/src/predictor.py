# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Dual-input attention Seq2Seq predictor, its baselines, training and inference.

Every network consumes the same encoder input: the normalized individual history
(speed, acceleration per meter, oldest first) with, when environmental input is enabled,
`align_width` extra features per row produced by one fully connected layer from the
flattened environmental segment. Outputs are horizon-long acceleration sequences.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from config import TrainingConfig
from constants import BASELINE_KINDS, ENV_CHANNELS, ENV_SPANS, MODEL_FAMILIES, UNCLUSTERED
from env_features import EnvSequence, env_segment, span_rows
from errors import ModelFormatError, ValidationError
from model_core import (
    Attention,
    BiLstm,
    Conv1d,
    Dense,
    Layer,
    Lstm,
    OptimizerState,
    Params,
    Rnn,
    check_finite,
    clip_gradients,
    dropout,
    dropout_backward,
    initialize_layers,
    load_parameters,
    mse_loss,
    named_rng,
    optimizer_step,
    save_parameters,
    tanh_backward,
)
from trajectory_core import SpatialProfile, extract_window

logger = logging.getLogger(__name__)

INDIVIDUAL_CHANNELS = 2
SPLIT_NAMES = ["train", "test", "validation"]
# span -> (first, last) environmental row offset relative to the anchor, inclusive
SPAN_OFFSETS = {
    "prediction": lambda history_len, horizon: (1, horizon),
    "history": lambda history_len, horizon: (1 - history_len, 0),
    "both": lambda history_len, horizon: (1 - history_len, horizon),
}


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of one trained model."""

    family: str
    history_len: int
    horizon: int
    env_enabled: bool
    env_span: str = "prediction"
    align_width: int = 2
    hidden_size: int = 64
    dropout: float = 0.2
    teacher_forcing: float = 0.5
    conv_channels: int = 16
    conv_kernel: int = 5
    ann_hidden: int = 64

    def __post_init__(self):
        if self.family not in MODEL_FAMILIES:
            raise ValidationError(f"unknown model family '{self.family}', expected one of {MODEL_FAMILIES}")
        if self.env_span not in ENV_SPANS:
            raise ValidationError(f"unknown environmental span '{self.env_span}'")
        sizes = (self.history_len, self.horizon, self.align_width, self.hidden_size)
        if min(sizes) < 1 or min(self.conv_channels, self.conv_kernel, self.ann_hidden) < 1:
            raise ValidationError(f"network sizes must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.teacher_forcing <= 1.0:
            raise ValidationError("dropout must lie in [0, 1) and teacher forcing in [0, 1]")

    @property
    def env_rows(self) -> int:
        """Rows of the environmental segment."""
        return span_rows(self.env_span, self.history_len, self.horizon)

    @property
    def input_width(self) -> int:
        """Encoder input features per history row."""
        return INDIVIDUAL_CHANNELS + (self.align_width if self.env_enabled else 0)

    def to_dict(self) -> Dict[str, Any]:
        """Plain mapping for manifests and model files."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkConfig":
        """Inverse of `to_dict`."""
        return cls(**data)


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-score constants fitted on a training split."""

    history_mean: np.ndarray
    history_std: np.ndarray
    env_mean: np.ndarray
    env_std: np.ndarray
    target_mean: float
    target_std: float

    @classmethod
    def fit(cls, windows: "WindowSet", chunk: int = 2048) -> "Normalizer":
        """Fits every channel over all rows of all training windows.

        Two streaming passes: means first, then deviations around them.

        Raises:
            ValidationError: the window set is empty.
        """
        if len(windows) == 0:
            raise ValidationError("cannot fit normalization on an empty training split")
        widths = (INDIVIDUAL_CHANNELS, len(ENV_CHANNELS), 1)

        def chunks():
            for start in range(0, len(windows), chunk):
                h, e, t = windows.materialize(np.arange(start, min(start + chunk, len(windows))))
                yield [None if part is None else part.reshape(-1, w) for part, w in zip((h, e, t), widths)]

        sums, counts = [np.zeros(w) for w in widths], [0, 0, 0]
        for parts in chunks():
            for i, part in enumerate(parts):
                if part is not None:
                    sums[i] += part.sum(axis=0)
                    counts[i] += len(part)
        means = [s / c if c else np.zeros_like(s) for s, c in zip(sums, counts)]
        squares = [np.zeros(w) for w in widths]
        for parts in chunks():
            for i, part in enumerate(parts):
                if part is not None:
                    squares[i] += ((part - means[i]) ** 2).sum(axis=0)
        stds = []
        for square, count in zip(squares, counts):
            std = np.sqrt(square / count) if count else np.ones_like(square)
            stds.append(np.where(std > 0, std, 1.0))
        return cls(means[0], stds[0], means[1], stds[1], float(means[2][0]), float(stds[2][0]))

    @classmethod
    def identity(cls) -> "Normalizer":
        """Zero means, unit deviations."""
        return cls(
            np.zeros(INDIVIDUAL_CHANNELS),
            np.ones(INDIVIDUAL_CHANNELS),
            np.zeros(len(ENV_CHANNELS)),
            np.ones(len(ENV_CHANNELS)),
            0.0,
            1.0,
        )

    def history(self, values: np.ndarray) -> np.ndarray:
        """Normalizes (..., 2) history rows."""
        return (values - self.history_mean) / self.history_std

    def env(self, values: np.ndarray) -> np.ndarray:
        """Normalizes (..., 8) environmental rows."""
        return (values - self.env_mean) / self.env_std

    def target(self, values: np.ndarray) -> np.ndarray:
        """Normalizes accelerations into the target scale."""
        return (values - self.target_mean) / self.target_std

    def restore_target(self, values: np.ndarray) -> np.ndarray:
        """Maps normalized predictions back to m/s²."""
        return values * self.target_std + self.target_mean

    def to_dict(self) -> Dict[str, Any]:
        """JSON-friendly constants."""
        return {
            "history_mean": self.history_mean.tolist(),
            "history_std": self.history_std.tolist(),
            "env_mean": self.env_mean.tolist(),
            "env_std": self.env_std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Normalizer":
        """Inverse of `to_dict`."""
        return cls(
            np.asarray(data["history_mean"], dtype=float),
            np.asarray(data["history_std"], dtype=float),
            np.asarray(data["env_mean"], dtype=float),
            np.asarray(data["env_std"], dtype=float),
            float(data["target_mean"]),
            float(data["target_std"]),
        )


@dataclass(frozen=True)
class PredictionTask:
    """Raw inputs of one prediction.

    Attributes:
        history: (history_len, 2) speed and acceleration over (anchor - history_len, anchor].
        env_input: (rows, 8) environmental rows, None when environmental input is disabled.
        horizon: number of meters to predict.
        driver_class: style label of the vehicle.
    """

    history: np.ndarray
    env_input: Optional[np.ndarray]
    horizon: int
    driver_class: str = UNCLUSTERED


class WindowSet:
    """(vehicle, anchor) samples materialized on demand."""

    def __init__(
        self,
        profiles: Sequence[SpatialProfile],
        samples: np.ndarray,
        history_len: int,
        horizon: int,
        envs: Optional[Dict[str, EnvSequence]] = None,
        env_span: str = "prediction",
    ):
        self.profiles = list(profiles)
        self.samples = np.asarray(samples, dtype=np.int64).reshape(-1, 2)
        self.history_len = history_len
        self.horizon = horizon
        self.envs = envs
        self.env_span = env_span

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def vehicle_ids(self) -> List[str]:
        """Vehicle of every sample."""
        return [self.profiles[i].vehicle_id for i in self.samples[:, 0]]

    @property
    def anchors(self) -> np.ndarray:
        """Anchor position of every sample."""
        return self.samples[:, 1]

    def subset(self, indices: Sequence[int]) -> "WindowSet":
        """Samples at the given indices."""
        return WindowSet(
            self.profiles,
            self.samples[np.asarray(indices, dtype=np.int64)],
            self.history_len,
            self.horizon,
            self.envs,
            self.env_span,
        )

    def for_vehicles(self, vehicle_ids: Iterable[str]) -> "WindowSet":
        """Samples of the given vehicles, original order kept."""
        wanted = set(vehicle_ids)
        keep = [i for i, p in enumerate(self.profiles) if p.vehicle_id in wanted]
        return self.subset(np.flatnonzero(np.isin(self.samples[:, 0], keep)))

    def materialize(
        self, indices: Optional[Sequence[int]] = None
    ) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
        """Raw (history, env, target) arrays of the selected samples."""
        rows = self.samples if indices is None else self.samples[np.asarray(indices, dtype=np.int64)]
        history = np.empty((len(rows), self.history_len, INDIVIDUAL_CHANNELS))
        target = np.empty((len(rows), self.horizon))
        env = None
        if self.envs is not None:
            env = np.empty((len(rows), span_rows(self.env_span, self.history_len, self.horizon), len(ENV_CHANNELS)))
        for n, (profile_index, anchor) in enumerate(rows):
            profile = self.profiles[profile_index]
            history[n], target[n] = extract_window(profile, int(anchor), self.history_len, self.horizon)
            if env is not None:
                env[n] = env_segment(
                    self.envs[profile.vehicle_id], int(anchor), self.horizon, self.history_len, self.env_span
                )
        return history, env, target


def _env_ready(env: EnvSequence, anchors: np.ndarray, first: int, last: int) -> np.ndarray:
    """Mask of anchors whose environmental rows are all present."""
    if len(env.positions) == 0:
        return np.zeros(len(anchors), dtype=bool)
    absent = np.concatenate([[0], np.cumsum(~env.present)])
    lo = anchors + first - env.positions[0]
    hi = anchors + last - env.positions[0]
    inside = (lo >= 0) & (hi < len(env.positions))
    ready = np.zeros(len(anchors), dtype=bool)
    ready[inside] = absent[hi[inside] + 1] - absent[lo[inside]] == 0
    return ready


def build_windows(
    profiles: Sequence[SpatialProfile],
    history_len: int,
    horizon: int,
    envs: Optional[Dict[str, EnvSequence]] = None,
    env_span: str = "prediction",
    anchor_stride: int = 1,
) -> WindowSet:
    """Enumerates every anchor whose history, horizon and environmental rows are covered.

    Anchors step by `anchor_stride` meters from the first position that leaves room for
    the history. With `envs`, anchors lacking environmental coverage are skipped so the
    same samples serve both environmental conditions.
    """
    if history_len < 1 or horizon < 1 or anchor_stride < 1:
        raise ValidationError("history length, horizon and anchor stride must be positive")
    first, last = SPAN_OFFSETS[env_span](history_len, horizon)
    samples = []
    skipped = 0
    for index, profile in enumerate(profiles):
        if len(profile.positions) == 0:
            continue
        anchors = np.arange(
            profile.positions[0] + history_len - 1, profile.positions[-1] - horizon + 1, anchor_stride
        )
        if envs is not None:
            env = envs.get(profile.vehicle_id)
            ready = np.zeros(len(anchors), dtype=bool) if env is None else _env_ready(env, anchors, first, last)
            skipped += int(np.sum(~ready))
            anchors = anchors[ready]
        samples.extend((index, int(a)) for a in anchors)
    if skipped:
        logger.warning(f"Skipped {skipped} anchors without environmental coverage")
    logger.info(f"Built {len(samples)} windows (history {history_len} m, horizon {horizon} m)")
    return WindowSet(profiles, np.array(samples, dtype=np.int64), history_len, horizon, envs, env_span)


def split_vehicles(
    vehicle_ids: Iterable[str],
    fractions: Sequence[float] = (0.7, 0.2, 0.1),
    seed: int = 0,
    stratum: str = "",
) -> Dict[str, List[str]]:
    """Randomly assigns whole vehicles to train, test and validation.

    Each part gets at least one vehicle.

    Raises:
        ValidationError: fewer than three vehicles or fractions not summing to 1.
    """
    ids = sorted(set(vehicle_ids))
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) <= 0:
        raise ValidationError(f"split fractions must be three positive values summing to 1, got {fractions}")
    if len(ids) < 3:
        raise ValidationError(f"cannot split {len(ids)} vehicles into train, test and validation")
    order = named_rng(seed, f"split{stratum}").permutation(len(ids))
    n_train = min(max(int(round(fractions[0] * len(ids))), 1), len(ids) - 2)
    n_test = min(max(int(round(fractions[1] * len(ids))), 1), len(ids) - n_train - 1)
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "test": sorted(shuffled[n_train : n_train + n_test]),
        "validation": sorted(shuffled[n_train + n_test :]),
    }


def stratified_split(
    labels: Dict[str, str], fractions: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 0
) -> Dict[str, List[str]]:
    """Splits every class separately so each class appears in every part.

    A class too small to split keeps all of its vehicles in the training part.
    """
    parts: Dict[str, List[str]] = {name: [] for name in SPLIT_NAMES}
    for label in sorted(set(labels.values())):
        members = [v for v, lab in labels.items() if lab == label]
        if len(members) < len(SPLIT_NAMES):
            logger.warning(f"Class {label} has {len(members)} vehicles; all kept for training")
            parts["train"].extend(members)
            continue
        for name, ids in split_vehicles(members, fractions, seed, stratum=f":{label}").items():
            parts[name].extend(ids)
    return {name: sorted(ids) for name, ids in parts.items()}


class Batch(NamedTuple):
    """Normalized network inputs."""

    history: np.ndarray
    env: Optional[np.ndarray]
    target: Optional[np.ndarray]
    first_target: np.ndarray


def make_batch(
    normalizer: Normalizer,
    history: np.ndarray,
    env: Optional[np.ndarray],
    target: Optional[np.ndarray] = None,
) -> Batch:
    """Normalizes raw arrays; the last history acceleration seeds the decoder."""
    return Batch(
        history=normalizer.history(history),
        env=None if env is None else normalizer.env(env),
        target=None if target is None else normalizer.target(target),
        first_target=normalizer.target(history[:, -1, 1]),
    )


class Network:
    """Shared input assembly; subclasses add the encoder and head."""

    family = ""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.align = None
        if config.env_enabled:
            self.align = Dense(
                "align", config.env_rows * len(ENV_CHANNELS), config.history_len * config.align_width
            )
        self.layers: List[Layer] = ([self.align] if self.align else []) + self._build()

    def _build(self) -> List[Layer]:
        raise NotImplementedError

    def initialize(self, rng: np.random.Generator) -> Params:
        """Fresh parameters."""
        return initialize_layers(self.layers, rng)

    def assemble(self, params: Params, history: np.ndarray, env: Optional[np.ndarray]):
        """Encoder input (history_len, batch, input_width) and the alignment cache."""
        config = self.config
        if history.ndim != 3 or history.shape[1:] != (config.history_len, INDIVIDUAL_CHANNELS):
            raise ValidationError(
                f"history shape {history.shape[1:]} != ({config.history_len}, {INDIVIDUAL_CHANNELS})"
            )
        if self.align is None:
            return history.transpose(1, 0, 2), None
        expected = (config.env_rows, len(ENV_CHANNELS))
        if env is None or env.shape[1:] != expected:
            got = None if env is None else env.shape[1:]
            raise ValidationError(f"environmental input shape {got} != {expected}")
        batch = history.shape[0]
        aligned, cache = self.align.forward(params, env.reshape(batch, -1))
        aligned = aligned.reshape(batch, config.history_len, config.align_width)
        return np.concatenate([history, aligned], axis=2).transpose(1, 0, 2), cache

    def assemble_backward(self, params: Params, grads: Params, dx: np.ndarray, cache) -> None:
        """Routes the encoder-input gradient into the alignment layer."""
        if self.align is None:
            return
        dx = dx.transpose(1, 0, 2)[:, :, INDIVIDUAL_CHANNELS:]
        self.align.backward(params, grads, dx.reshape(dx.shape[0], -1), cache)

    def forward(self, params: Params, batch: Batch, training: bool = False, rng=None):
        """Normalized (batch, horizon) predictions and the cache for `backward`."""
        raise NotImplementedError

    def backward(self, params: Params, dpred: np.ndarray, cache) -> Params:
        """Gradients of every parameter given d(loss)/d(prediction)."""
        raise NotImplementedError

    def loss_and_gradients(self, params: Params, batch: Batch, rng: Optional[np.random.Generator] = None):
        """Training-mode MSE on normalized targets and its gradients."""
        pred, cache = self.forward(params, batch, training=True, rng=rng)
        loss, dpred = mse_loss(pred, batch.target)
        return loss, self.backward(params, dpred, cache)


class Seq2SeqNetwork(Network):
    """LSTM encoder, additive attention and an LSTM decoder emitting one value per step.

    The decoder starts from the attention context of the final encoder state (as h) and
    the final encoder cell. Every step feeds [previous value; context] to the decoder,
    re-queries attention with the previous decoder state and maps [state; context] to
    the output. Training feeds the true previous target with the teacher-forcing
    probability; inference always feeds its own predictions.
    """

    family = "seq2seq"

    def _build(self) -> List[Layer]:
        hidden = self.config.hidden_size
        self.encoder = Lstm("encoder", self.config.input_width, hidden)
        self.attention = Attention("attention", hidden, hidden, hidden)
        self.decoder = Lstm("decoder", 1 + hidden, hidden)
        self.output = Dense("output", 2 * hidden, 1)
        return [self.encoder, self.attention, self.decoder, self.output]

    def forward(self, params: Params, batch: Batch, training: bool = False, rng=None):
        config = self.config
        x, align_cache = self.assemble(params, batch.history, batch.env)
        encoded, (h_last, c_last), enc_cache = self.encoder.forward(params, x)
        keys, key_mask = dropout(encoded, config.dropout, training, rng)
        _, state, query_cache = self.attention.forward(params, h_last, keys)
        cell = c_last
        forced = np.zeros(config.horizon, dtype=bool)
        if training and batch.target is not None and config.teacher_forcing > 0:
            forced = rng.random(config.horizon) < config.teacher_forcing
        previous = batch.first_target
        preds = np.empty((x.shape[1], config.horizon))
        steps = []
        for t in range(config.horizon):
            _, context, attn_cache = self.attention.forward(params, state, keys)
            state, cell, dec_cache = self.decoder.step_forward(
                params, np.concatenate([previous[:, None], context], axis=1), state, cell
            )
            dropped, state_mask = dropout(state, config.dropout, training, rng)
            y, out_cache = self.output.forward(params, np.concatenate([dropped, context], axis=1))
            preds[:, t] = y[:, 0]
            steps.append((attn_cache, dec_cache, state_mask, out_cache))
            previous = batch.target[:, t] if forced[t] else y[:, 0]
        cache = (align_cache, enc_cache, key_mask, query_cache, forced, steps)
        return check_finite(preds, "seq2seq.forward"), cache

    def backward(self, params: Params, dpred: np.ndarray, cache) -> Params:
        align_cache, enc_cache, key_mask, query_cache, forced, steps = cache
        hidden = self.config.hidden_size
        grads: Params = {}
        dkeys = np.zeros((len(enc_cache), dpred.shape[0], hidden))
        dstate = np.zeros((dpred.shape[0], hidden))
        dcell = np.zeros_like(dstate)
        dfed = np.zeros(dpred.shape[0])
        for t in reversed(range(len(steps))):
            attn_cache, dec_cache, state_mask, out_cache = steps[t]
            dout = self.output.backward(params, grads, (dpred[:, t] + dfed)[:, None], out_cache)
            dstate = dstate + dropout_backward(dout[:, :hidden], state_mask)
            dinput, dstate, dcell = self.decoder.step_backward(params, grads, dstate, dcell, dec_cache)
            dquery, dkeys_t = self.attention.backward(params, grads, dout[:, hidden:] + dinput[:, 1:], attn_cache)
            dkeys += dkeys_t
            dstate = dstate + dquery
            # the value fed at step t was the prediction of step t - 1 unless forced
            dfed = dinput[:, 0] if t > 0 and not forced[t - 1] else np.zeros_like(dfed)
        dh_last, dkeys_q = self.attention.backward(params, grads, dstate, query_cache)
        dkeys += dkeys_q
        dx, _, _ = self.encoder.backward(
            params, grads, dropout_backward(dkeys, key_mask), dh_last, dcell, enc_cache
        )
        self.assemble_backward(params, grads, dx, align_cache)
        return grads


class RnnNetwork(Network):
    """Vanilla recurrent encoder; its final state feeds a dense head emitting every step."""

    family = "rnn"

    def _build(self) -> List[Layer]:
        self.encoder = Rnn("encoder", self.config.input_width, self.config.hidden_size)
        self.head = Dense("head", self.config.hidden_size, self.config.horizon)
        return [self.encoder, self.head]

    def forward(self, params: Params, batch: Batch, training: bool = False, rng=None):
        x, align_cache = self.assemble(params, batch.history, batch.env)
        _, h_last, enc_cache = self.encoder.forward(params, x)
        dropped, mask = dropout(h_last, self.config.dropout, training, rng)
        y, head_cache = self.head.forward(params, dropped)
        return y, (align_cache, enc_cache, mask, head_cache)

    def backward(self, params: Params, dpred: np.ndarray, cache) -> Params:
        align_cache, enc_cache, mask, head_cache = cache
        grads: Params = {}
        dh = dropout_backward(self.head.backward(params, grads, dpred, head_cache), mask)
        dx, _ = self.encoder.backward(params, grads, None, dh, enc_cache)
        self.assemble_backward(params, grads, dx, align_cache)
        return grads


class AnnNetwork(Network):
    """Two dense layers over the flattened encoder input."""

    family = "ann"

    def _build(self) -> List[Layer]:
        width = self.config.history_len * self.config.input_width
        self.hidden = Dense("hidden", width, self.config.ann_hidden)
        self.head = Dense("head", self.config.ann_hidden, self.config.horizon)
        return [self.hidden, self.head]

    def forward(self, params: Params, batch: Batch, training: bool = False, rng=None):
        x, align_cache = self.assemble(params, batch.history, batch.env)
        flat = x.transpose(1, 0, 2).reshape(x.shape[1], -1)
        z, hidden_cache = self.hidden.forward(params, flat)
        activated = np.tanh(z)
        dropped, mask = dropout(activated, self.config.dropout, training, rng)
        y, head_cache = self.head.forward(params, dropped)
        return y, (align_cache, x.shape, hidden_cache, activated, mask, head_cache)

    def backward(self, params: Params, dpred: np.ndarray, cache) -> Params:
        align_cache, shape, hidden_cache, activated, mask, head_cache = cache
        grads: Params = {}
        dact = dropout_backward(self.head.backward(params, grads, dpred, head_cache), mask)
        dflat = self.hidden.backward(params, grads, tanh_backward(activated, dact), hidden_cache)
        dx = dflat.reshape(shape[1], shape[0], shape[2]).transpose(1, 0, 2)
        self.assemble_backward(params, grads, dx, align_cache)
        return grads


class CnnNetwork(Network):
    """Two valid convolutions with tanh, flattened into a dense head."""

    family = "cnn"

    def _build(self) -> List[Layer]:
        config = self.config
        self.conv1 = Conv1d("conv1", config.input_width, config.conv_channels, config.conv_kernel)
        self.conv2 = Conv1d("conv2", config.conv_channels, config.conv_channels, config.conv_kernel)
        length = self.conv2.output_length(self.conv1.output_length(config.history_len))
        if length < 1:
            raise ValidationError(
                f"history of {config.history_len} m is too short for two kernels of {config.conv_kernel}"
            )
        self.head = Dense("head", length * config.conv_channels, config.horizon)
        return [self.conv1, self.conv2, self.head]

    def forward(self, params: Params, batch: Batch, training: bool = False, rng=None):
        x, align_cache = self.assemble(params, batch.history, batch.env)
        z1, conv1_cache = self.conv1.forward(params, x)
        a1 = np.tanh(z1)
        z2, conv2_cache = self.conv2.forward(params, a1)
        a2 = np.tanh(z2)
        flat = a2.transpose(1, 0, 2).reshape(x.shape[1], -1)
        dropped, mask = dropout(flat, self.config.dropout, training, rng)
        y, head_cache = self.head.forward(params, dropped)
        return y, (align_cache, conv1_cache, a1, conv2_cache, a2, mask, head_cache)

    def backward(self, params: Params, dpred: np.ndarray, cache) -> Params:
        align_cache, conv1_cache, a1, conv2_cache, a2, mask, head_cache = cache
        grads: Params = {}
        dflat = dropout_backward(self.head.backward(params, grads, dpred, head_cache), mask)
        da2 = dflat.reshape(a2.shape[1], a2.shape[0], a2.shape[2]).transpose(1, 0, 2)
        da1 = self.conv2.backward(params, grads, tanh_backward(a2, da2), conv2_cache)
        dx = self.conv1.backward(params, grads, tanh_backward(a1, da1), conv1_cache)
        self.assemble_backward(params, grads, dx, align_cache)
        return grads


class BiLstmNetwork(Network):
    """Bidirectional LSTM; the last forward and first backward states feed a dense head."""

    family = "bilstm"

    def _build(self) -> List[Layer]:
        hidden = self.config.hidden_size
        self.encoder = BiLstm("encoder", self.config.input_width, hidden)
        self.head = Dense("head", 2 * hidden, self.config.horizon)
        return [self.encoder, self.head]

    def forward(self, params: Params, batch: Batch, training: bool = False, rng=None):
        hidden = self.config.hidden_size
        x, align_cache = self.assemble(params, batch.history, batch.env)
        out, enc_cache = self.encoder.forward(params, x)
        summary = np.concatenate([out[-1, :, :hidden], out[0, :, hidden:]], axis=1)
        dropped, mask = dropout(summary, self.config.dropout, training, rng)
        y, head_cache = self.head.forward(params, dropped)
        return y, (align_cache, out.shape, enc_cache, mask, head_cache)

    def backward(self, params: Params, dpred: np.ndarray, cache) -> Params:
        align_cache, shape, enc_cache, mask, head_cache = cache
        hidden = self.config.hidden_size
        grads: Params = {}
        dsummary = dropout_backward(self.head.backward(params, grads, dpred, head_cache), mask)
        dout = np.zeros(shape)
        dout[-1, :, :hidden] = dsummary[:, :hidden]
        dout[0, :, hidden:] += dsummary[:, hidden:]
        dx = self.encoder.backward(params, grads, dout, enc_cache)
        self.assemble_backward(params, grads, dx, align_cache)
        return grads


NETWORKS = {
    cls.family: cls for cls in (Seq2SeqNetwork, RnnNetwork, AnnNetwork, CnnNetwork, BiLstmNetwork)
}


def build_network(config: NetworkConfig) -> Network:
    """Architecture for a configured family."""
    return NETWORKS[config.family](config)


def build_baseline(kind: str, config: NetworkConfig) -> Network:
    """Baseline architecture sharing the Seq2Seq input and output contract.

    Raises:
        ValidationError: unknown baseline kind.
    """
    if kind not in BASELINE_KINDS:
        raise ValidationError(f"unknown baseline '{kind}', expected one of {BASELINE_KINDS}")
    return NETWORKS[kind](NetworkConfig(**{**config.to_dict(), "family": kind}))


@dataclass
class TrainingHistory:
    """Loss curve and early-stopping outcome."""

    steps: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)
    best_step: int = 0
    stopped_early: bool = False


class SeqModel:
    """A network with its fitted parameters and normalization constants."""

    def __init__(
        self,
        config: NetworkConfig,
        params: Optional[Params] = None,
        normalizer: Optional[Normalizer] = None,
        seed: int = 0,
        history: Optional[TrainingHistory] = None,
    ):
        self.config = config
        self.network = build_network(config)
        self.params = params
        self.normalizer = normalizer
        self.seed = seed
        self.history = history or TrainingHistory()

    @property
    def fitted(self) -> bool:
        """Whether parameters and normalization constants are present."""
        return self.params is not None and self.normalizer is not None

    def _require_fitted(self) -> None:
        if not self.fitted:
            raise ValidationError(f"{self.config.family} model is not fitted")

    def assemble_input(self, task: PredictionTask) -> np.ndarray:
        """Encoder input (history_len, input_width) of one task."""
        self._require_fitted()
        batch = make_batch(
            self.normalizer,
            np.asarray(task.history, dtype=float)[None],
            None if task.env_input is None else np.asarray(task.env_input, dtype=float)[None],
        )
        x, _ = self.network.assemble(self.params, batch.history, batch.env)
        return x[:, 0, :]

    def predict_windows(
        self, history: np.ndarray, env: Optional[np.ndarray], batch_size: int = 1024
    ) -> np.ndarray:
        """(N, horizon) accelerations in m/s² for raw input arrays."""
        self._require_fitted()
        out = np.empty((len(history), self.config.horizon))
        for start in range(0, len(history), batch_size):
            part = slice(start, start + batch_size)
            batch = make_batch(self.normalizer, history[part], None if env is None else env[part])
            pred, _ = self.network.forward(self.params, batch)
            out[part] = self.normalizer.restore_target(pred)
        return out


def predict(model: SeqModel, task: PredictionTask) -> np.ndarray:
    """Accelerations over (anchor, anchor + horizon] in one encoder pass.

    Raises:
        ValidationError: unfit model, horizon beyond the trained one or malformed inputs.
    """
    if not 1 <= task.horizon <= model.config.horizon:
        raise ValidationError(f"task horizon {task.horizon} exceeds trained horizon {model.config.horizon}")
    if model.config.env_enabled and task.env_input is None:
        raise ValidationError("model expects environmental input")
    history = np.asarray(task.history, dtype=float)[None]
    env = None
    if model.config.env_enabled:
        env = np.asarray(task.env_input, dtype=float)[None]
    return model.predict_windows(history, env)[0, : task.horizon]


def window_mae(model: SeqModel, windows: WindowSet, indices: Optional[np.ndarray] = None) -> float:
    """Per-sample MAE in m/s² over selected windows."""
    history, env, target = windows.materialize(indices)
    pred = model.predict_windows(history, env if model.config.env_enabled else None)
    return float(np.mean(np.abs(pred - target)))


def train(
    train_set: WindowSet,
    validation_set: WindowSet,
    config: NetworkConfig,
    training: TrainingConfig = TrainingConfig(),
    seed: int = 0,
) -> SeqModel:
    """Mini-batch Adam on MSE with early stopping on validation MAE.

    Normalization is fitted on the training windows only. Validation runs every
    `eval_every` steps on a fixed subsample; the best-scoring parameters are returned.

    Raises:
        ValidationError: empty training or validation split, or env input unavailable.
    """
    if len(train_set) == 0 or len(validation_set) == 0:
        raise ValidationError(
            f"empty split: {len(train_set)} training and {len(validation_set)} validation windows"
        )
    if config.env_enabled and (train_set.envs is None or validation_set.envs is None):
        raise ValidationError("environmental input enabled but windows carry no environmental sequences")
    network = build_network(config)
    normalizer = Normalizer.fit(train_set)
    params = network.initialize(named_rng(seed, "initialization"))
    shuffling = named_rng(seed, "shuffling")
    regularization = named_rng(seed, "dropout")
    val_indices = np.arange(len(validation_set))
    if 0 < training.max_val_windows < len(validation_set):
        val_indices = np.sort(
            named_rng(seed, "validation").choice(len(validation_set), training.max_val_windows, replace=False)
        )
    model = SeqModel(config, params, normalizer, seed)
    state = OptimizerState(learning_rate=training.learning_rate)
    best_mae, best_params, stale, step = math.inf, params, 0, 0
    history = model.history
    while step < training.max_steps and not history.stopped_early:
        order = shuffling.permutation(len(train_set))
        for start in range(0, len(order), training.batch_size):
            h, e, t = train_set.materialize(order[start : start + training.batch_size])
            batch = make_batch(normalizer, h, e if config.env_enabled else None, t)
            loss, grads = network.loss_and_gradients(params, batch, regularization)
            params = optimizer_step(state, params, clip_gradients(grads, training.clip_norm))
            step += 1
            if step % training.eval_every == 0 or step == training.max_steps:
                model.params = params
                mae = window_mae(model, validation_set, val_indices)
                history.steps.append(step)
                history.train_loss.append(loss)
                history.val_mae.append(mae)
                logger.debug(f"step {step}: train loss {loss:.6f}, validation MAE {mae:.6f}")
                if mae < best_mae:
                    best_mae, best_params, stale, history.best_step = mae, params, 0, step
                else:
                    stale += 1
                    history.stopped_early = stale >= training.patience
            if history.stopped_early or step >= training.max_steps:
                break
    model.params = best_params
    logger.info(
        f"Trained {config.family} (horizon {config.horizon} m, env {'Y' if config.env_enabled else 'N'}, "
        f"seed {seed}): best validation MAE {best_mae:.4f} at step {history.best_step}"
    )
    return model


def save_model(model: SeqModel, path: Union[str, Path]) -> None:
    """Writes parameters, architecture and normalization constants in the binary format."""
    if not model.fitted:
        raise ValidationError("refusing to save an unfitted model")
    save_parameters(
        path,
        model.params,
        {"network": model.config.to_dict(), "normalizer": model.normalizer.to_dict(), "seed": model.seed},
    )


def load_model(path: Union[str, Path]) -> SeqModel:
    """Reads a model written by `save_model`.

    Raises:
        ModelFormatError: unreadable file or parameters not matching the architecture.
    """
    params, meta = load_parameters(path)
    try:
        config = NetworkConfig.from_dict(meta["network"])
        normalizer = Normalizer.from_dict(meta["normalizer"])
    except (KeyError, TypeError, ValidationError) as e:
        raise ModelFormatError(f"{path}: invalid model configuration ({e})") from e
    expected = build_network(config).initialize(np.random.default_rng(0))
    if list(expected) != list(params) or any(expected[k].shape != params[k].shape for k in expected):
        raise ModelFormatError(f"{path}: parameters do not match the {config.family} architecture")
    return SeqModel(config, params, normalizer, int(meta.get("seed", 0)))


@dataclass(frozen=True)
class ManifestEntry:
    """One trained model of the grid."""

    file: str
    family: str
    driver_class: str
    horizon: int
    env: bool
    seed: int
    config: Dict[str, Any]


def write_manifest(entries: Sequence[ManifestEntry], path: Union[str, Path]) -> None:
    """Writes the model manifest as YAML, one mapping per model."""
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump({"models": [asdict(e) for e in entries]}, handle, sort_keys=False)


def read_manifest(path: Union[str, Path]) -> List[ManifestEntry]:
    """Reads a manifest written by `write_manifest`."""
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    try:
        return [ManifestEntry(**entry) for entry in data.get("models", [])]
    except TypeError as e:
        raise ModelFormatError(f"{path}: malformed manifest ({e})") from e


