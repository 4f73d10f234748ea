# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Environmental sequences: per-position speed and acceleration percentiles of the
vehicles that entered the section during a historical time window."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from constants import ENV_CHANNELS, PERCENTILES
from errors import CoverageError, ValidationError
from trajectory_core import SpatialProfile

logger = logging.getLogger(__name__)

DEFAULT_MIN_SUPPORT = 5
DEFAULT_WINDOW_LEN = 15 * 60.0


@dataclass(frozen=True)
class EnvSequence:
    """Percentile statistics per grid position.

    Attributes:
        positions: integer grid positions, consecutive.
        values: (len(positions), 8) array ordered as `ENV_CHANNELS`; NaN rows are absent.
        support: number of vehicles observed at each position.
        window: (start_time, end_time) of the half-open entry-time window.
    """

    positions: np.ndarray
    values: np.ndarray
    support: np.ndarray
    window: Tuple[float, float]

    @property
    def present(self) -> np.ndarray:
        """Mask of positions carrying percentiles."""
        return ~np.isnan(self.values).any(axis=1)


def column_percentiles(matrix: np.ndarray, percentiles: Sequence[float]) -> np.ndarray:
    """Percentiles of every column, ignoring NaN cells.

    Uses linear interpolation between order statistics at zero-based rank q * (n - 1),
    where n counts the finite cells of the column. Every column needs one finite cell.

    Returns:
        (n_columns, len(percentiles)) array.
    """
    ordered = np.sort(matrix, axis=0)  # NaN sorts last
    counts = np.sum(~np.isnan(matrix), axis=0)
    out = np.empty((matrix.shape[1], len(percentiles)))
    for j, q in enumerate(percentiles):
        rank = q / 100.0 * (counts - 1)
        lo = np.floor(rank).astype(np.int64)
        hi = np.minimum(lo + 1, counts - 1)
        low = np.take_along_axis(ordered, lo[None, :], axis=0)[0]
        high = np.take_along_axis(ordered, hi[None, :], axis=0)[0]
        out[:, j] = low + (rank - lo) * (high - low)
    return out


class ProfileMatrix:
    """Profiles stacked on a shared position grid, sorted by entry time.

    Uncovered cells are NaN so percentiles ignore them.
    """

    def __init__(self, profiles: Sequence[SpatialProfile]):
        self.profiles = sorted(profiles, key=lambda p: (p.entry_time, p.vehicle_id))
        self.entry_times = np.array([p.entry_time for p in self.profiles], dtype=float)
        if self.profiles:
            start = min(int(p.positions[0]) for p in self.profiles)
            end = max(int(p.positions[-1]) for p in self.profiles)
        else:
            start, end = 0, -1
        self.positions = np.arange(start, end + 1, dtype=np.int64)
        self.speed = np.full((len(self.profiles), len(self.positions)), np.nan)
        self.accel = np.full_like(self.speed, np.nan)
        for row, profile in enumerate(self.profiles):
            cols = profile.positions - start
            self.speed[row, cols] = profile.v_at
            self.accel[row, cols] = profile.a_at

    def rows_in_window(self, window_end: float, window_len: float) -> slice:
        """Rows with entry_time in [window_end - window_len, window_end)."""
        lo = np.searchsorted(self.entry_times, window_end - window_len, side="left")
        hi = np.searchsorted(self.entry_times, window_end, side="left")
        return slice(int(lo), int(hi))

    def env_sequence(
        self, window_end: float, window_len: float, min_support: int = DEFAULT_MIN_SUPPORT
    ) -> EnvSequence:
        """Percentiles over the rows entering within the window."""
        if window_len <= 0:
            raise ValidationError(f"window length must be positive, got {window_len}")
        rows = self.rows_in_window(window_end, window_len)
        speed, accel = self.speed[rows], self.accel[rows]
        support = np.sum(~np.isnan(speed), axis=0)
        values = np.full((len(self.positions), len(ENV_CHANNELS)), np.nan)
        enough = support >= max(min_support, 1)
        if np.any(enough):
            values[enough, :4] = column_percentiles(speed[:, enough], PERCENTILES)
            values[enough, 4:] = column_percentiles(accel[:, enough], PERCENTILES)
        return EnvSequence(
            positions=self.positions,
            values=values,
            support=support,
            window=(window_end - window_len, window_end),
        )


def build_env_sequence(
    profiles: Sequence[SpatialProfile],
    window_end: float,
    window_len: float = DEFAULT_WINDOW_LEN,
    min_support: int = DEFAULT_MIN_SUPPORT,
) -> EnvSequence:
    """Builds the environmental sequence of the vehicles entering in the window.

    Percentiles interpolate linearly between order statistics (rank q * (n - 1)).
    Positions with fewer than `min_support` vehicles are absent (NaN); an empty window
    yields an all-absent sequence.
    """
    return ProfileMatrix(profiles).env_sequence(window_end, window_len, min_support)


def build_vehicle_env(
    profiles: Sequence[SpatialProfile],
    window_len: float = DEFAULT_WINDOW_LEN,
    min_support: int = DEFAULT_MIN_SUPPORT,
) -> Dict[str, EnvSequence]:
    """Environmental sequence seen by each vehicle, built from the vehicles before it."""
    matrix = ProfileMatrix(profiles)
    envs = {
        p.vehicle_id: matrix.env_sequence(p.entry_time, window_len, min_support)
        for p in matrix.profiles
    }
    logger.info(f"Built {len(envs)} environmental sequences over {window_len:.0f} s windows")
    return envs


def slice_env(env: EnvSequence, anchor: int, horizon: int, history_len: int = 0) -> np.ndarray:
    """Returns the 8-channel rows over (anchor - history_len, anchor + horizon].

    With the default `history_len` of 0 this is the prediction span (anchor, anchor + horizon].

    Raises:
        CoverageError: the span leaves the grid or holds an absent position.
    """
    start, end = anchor - history_len + 1, anchor + horizon
    if len(env.positions) == 0 or start < env.positions[0] or end > env.positions[-1]:
        raise CoverageError(f"environmental sequence does not cover [{start}, {end}]")
    i0 = int(start - env.positions[0])
    segment = env.values[i0 : i0 + end - start + 1]
    if np.isnan(segment).any():
        raise CoverageError(f"absent environmental positions in [{start}, {end}]")
    return segment.copy()


def write_env_csv(env: EnvSequence, path: Union[str, Path]) -> None:
    """Writes `position,v_p20,...,a_p80,support`; absent positions have empty cells."""
    frame = pd.DataFrame(env.values, columns=ENV_CHANNELS)
    frame.insert(0, "position", env.positions)
    frame["support"] = env.support
    frame.to_csv(path, index=False, encoding="utf-8")


def read_env_csv(path: Union[str, Path], window: Tuple[float, float] = (0.0, 0.0)) -> EnvSequence:
    """Reads a sequence written by `write_env_csv`."""
    frame = pd.read_csv(path, encoding="utf-8")
    return EnvSequence(
        positions=frame["position"].to_numpy(dtype=np.int64),
        values=frame[ENV_CHANNELS].to_numpy(dtype=float),
        support=frame["support"].to_numpy(dtype=np.int64),
        window=window,
    )


def span_rows(span: str, history_len: int, horizon: int) -> int:
    """Number of environmental rows fed to the model for a configured span."""
    return {"prediction": horizon, "history": history_len, "both": history_len + horizon}[span]


def env_segment(
    env: EnvSequence, anchor: int, horizon: int, history_len: int, span: str = "prediction"
) -> np.ndarray:
    """Environmental rows for an anchor: over the prediction span, the history span or both."""
    if span == "prediction":
        return slice_env(env, anchor, horizon)
    if span == "history":
        return slice_env(env, anchor - history_len, history_len)
    if span == "both":
        return slice_env(env, anchor, horizon, history_len)
    raise ValidationError(f"unknown environmental span {span}")
