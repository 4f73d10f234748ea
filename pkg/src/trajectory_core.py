# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Vehicle trajectories, speed differentiation and 1 m spatial resampling.

Positions are signed meters relative to the tunnel exit portal: negative inside the
tunnel, zero at the portal and positive outside.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from errors import CoverageError, DegenerateGeometryError, ValidationError

logger = logging.getLogger(__name__)

TRACK_COLUMNS = ["vehicle_id", "t", "x", "v", "a"]
PROFILE_COLUMNS = ["vehicle_id", "entry_time", "x", "v", "a"]


@dataclass(frozen=True)
class TrajectorySample:
    """One time-indexed motion record."""

    t: float
    x: float
    v: float
    a: Optional[float] = None


@dataclass(frozen=True)
class VehicleTrack:
    """Ordered samples of one vehicle, stored column-wise.

    Attributes:
        vehicle_id: opaque identifier.
        entry_time: seconds since recording start at which the vehicle entered the section.
        t: sample times (s), strictly increasing.
        x: positions (m), strictly increasing.
        v: speeds (m/s), nonnegative.
        a: accelerations (m/s²), None before differentiation.
    """

    vehicle_id: str
    entry_time: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.t)
        if n < 2:
            raise ValidationError(f"track {self.vehicle_id} has {n} samples, needs at least 2")
        if len(self.x) != n or len(self.v) != n or (self.a is not None and len(self.a) != n):
            raise ValidationError(f"track {self.vehicle_id} has columns of unequal length")
        if np.any(self.v < 0):
            raise ValidationError(f"track {self.vehicle_id} has negative speed")
        if np.any(np.diff(self.t) <= 0):
            raise ValidationError(f"track {self.vehicle_id} times are not strictly increasing")
        dx = np.diff(self.x)
        if np.any(dx < 0):
            raise ValidationError(f"track {self.vehicle_id} positions go backwards")
        if np.any(dx == 0):
            repeated = self.x[1:][dx == 0][0]
            raise DegenerateGeometryError(f"track {self.vehicle_id} repeats position x={repeated}")

    @classmethod
    def from_samples(
        cls, vehicle_id: str, samples: Iterable[TrajectorySample], entry_time: Optional[float] = None
    ) -> "VehicleTrack":
        """Builds a track from sample records; entry time defaults to the first sample time."""
        samples = list(samples)
        has_a = bool(samples) and all(s.a is not None for s in samples)
        t = np.array([s.t for s in samples], dtype=float)
        return cls(
            vehicle_id=vehicle_id,
            entry_time=float(t[0]) if entry_time is None and len(t) else float(entry_time or 0.0),
            t=t,
            x=np.array([s.x for s in samples], dtype=float),
            v=np.array([s.v for s in samples], dtype=float),
            a=np.array([s.a for s in samples], dtype=float) if has_a else None,
        )

    @property
    def samples(self) -> List[TrajectorySample]:
        """Sample records in order."""
        a = self.a if self.a is not None else [None] * len(self.t)
        return [
            TrajectorySample(float(t), float(x), float(v), None if ai is None else float(ai))
            for t, x, v, ai in zip(self.t, self.x, self.v, a)
        ]


@dataclass(frozen=True)
class SpatialProfile:
    """Per-grid-position speed and acceleration of one track."""

    vehicle_id: str
    entry_time: float
    positions: np.ndarray
    v_at: np.ndarray
    a_at: np.ndarray

    def covers(self, start: int, end: int) -> bool:
        """Whether every integer position in [start, end] is on the grid."""
        return len(self.positions) > 0 and self.positions[0] <= start and self.positions[-1] >= end

    def index_of(self, position: int) -> int:
        """Row index of an integer grid position."""
        return int(position - self.positions[0])


def differentiate_speed(track: VehicleTrack) -> VehicleTrack:
    """Returns the track with acceleration derived from speed.

    Interior samples use the central difference over their two neighbours, the endpoints
    use one-sided differences.
    """
    t, v = track.t, track.v
    if len(t) < 2:
        raise ValidationError(f"track {track.vehicle_id} needs at least 2 samples")
    a = np.empty_like(v)
    a[1:-1] = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
    a[0] = (v[1] - v[0]) / (t[1] - t[0])
    a[-1] = (v[-1] - v[-2]) / (t[-1] - t[-2])
    return replace(track, a=a)


def resample_to_grid(track: VehicleTrack, grid_spacing: int = 1) -> SpatialProfile:
    """Resamples a differentiated track onto integer grid positions.

    Every grid value is interpolated from the spatial bracket (x_{t-1}, x_t) around it as
    a_LI = a_t + (a_t - a_{t-1}) / (x_t - x_{t-1}) * (x_LI - x_t); speed uses the same rule.
    Positions outside the observed range are omitted. Track positions strictly increase,
    so every bracket has a nonzero span.

    Raises:
        ValidationError: acceleration missing or bad spacing.
    """
    if track.a is None:
        raise ValidationError(f"track {track.vehicle_id} has no acceleration; differentiate first")
    if grid_spacing < 1 or int(grid_spacing) != grid_spacing:
        raise ValidationError(f"grid spacing must be a positive integer, got {grid_spacing}")
    x = track.x
    first = int(np.ceil(x[0] / grid_spacing)) * grid_spacing
    last = int(np.floor(x[-1] / grid_spacing)) * grid_spacing
    positions = np.arange(first, last + 1, grid_spacing, dtype=np.int64)
    right = np.clip(np.searchsorted(x, positions, side="left"), 1, len(x) - 1)
    left = right - 1
    span = x[right] - x[left]
    offset = positions - x[right]

    def interpolate(values: np.ndarray) -> np.ndarray:
        return values[right] + (values[right] - values[left]) / span * offset

    return SpatialProfile(
        vehicle_id=track.vehicle_id,
        entry_time=track.entry_time,
        positions=positions,
        v_at=np.maximum(interpolate(track.v), 0.0),
        a_at=interpolate(track.a),
    )


def extract_window(
    profile: SpatialProfile, anchor: int, history_len: int, horizon: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Cuts the history and target segments around an anchor.

    Returns:
        history: (history_len, 2) array of (v, a) over (anchor - history_len, anchor].
        target: (horizon,) array of a over (anchor, anchor + horizon].

    Raises:
        CoverageError: the profile does not cover the whole window.
    """
    start, end = anchor - history_len + 1, anchor + horizon
    if history_len < 1 or horizon < 1 or not profile.covers(start, end):
        raise CoverageError(
            f"profile {profile.vehicle_id} does not cover [{start}, {end}] for anchor {anchor}"
        )
    i0, i1, i2 = profile.index_of(start), profile.index_of(anchor) + 1, profile.index_of(end) + 1
    history = np.stack([profile.v_at[i0:i1], profile.a_at[i0:i1]], axis=1)
    return history, profile.a_at[i1:i2].copy()


def preprocess_tracks(
    tracks: Iterable[VehicleTrack], grid_spacing: int = 1
) -> List[SpatialProfile]:
    """Differentiates and resamples every track, skipping those covering no grid position."""
    profiles = []
    for track in tracks:
        profile = resample_to_grid(differentiate_speed(track), grid_spacing)
        if len(profile.positions) == 0:
            logger.warning(f"Skipping track {track.vehicle_id}: no grid position in [{track.x[0]}, {track.x[-1]}]")
            continue
        profiles.append(profile)
    logger.info(f"Resampled {len(profiles)} profiles")
    return profiles


def read_tracks_csv(path: Union[str, Path]) -> List[VehicleTrack]:
    """Reads `vehicle_id,t,x,v[,a]` rows into tracks, in order of first appearance.

    Vehicles whose rows do not form a valid track are skipped with a warning.

    Raises:
        ValidationError: a required column is missing.
    """
    frame = pd.read_csv(path, dtype={"vehicle_id": str}, encoding="utf-8")
    missing = [c for c in TRACK_COLUMNS[:4] if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    has_a = "a" in frame.columns
    tracks = []
    for vehicle_id, rows in frame.groupby("vehicle_id", sort=False):
        t = rows["t"].to_numpy(dtype=float)
        try:
            track = VehicleTrack(
                vehicle_id=str(vehicle_id),
                entry_time=float(t[0]),
                t=t,
                x=rows["x"].to_numpy(dtype=float),
                v=rows["v"].to_numpy(dtype=float),
                a=rows["a"].to_numpy(dtype=float) if has_a else None,
            )
        except ValidationError as e:
            logger.warning(f"Skipping track {vehicle_id}: {e}")
            continue
        tracks.append(track)
    return tracks


def write_tracks_csv(tracks: Iterable[VehicleTrack], path: Union[str, Path]) -> None:
    """Writes tracks with the acceleration column always present."""
    frames = []
    for track in tracks:
        if track.a is None:
            track = differentiate_speed(track)
        frames.append(
            pd.DataFrame({
                "vehicle_id": track.vehicle_id,
                "t": track.t,
                "x": track.x,
                "v": track.v,
                "a": track.a,
            })
        )
    frame = pd.concat(frames) if frames else pd.DataFrame(columns=TRACK_COLUMNS)
    frame.to_csv(path, index=False, columns=TRACK_COLUMNS, encoding="utf-8")


def write_profiles_csv(profiles: Iterable[SpatialProfile], path: Union[str, Path]) -> None:
    """Writes resampled profiles, one row per grid position."""
    frames = [
        pd.DataFrame({
            "vehicle_id": p.vehicle_id,
            "entry_time": p.entry_time,
            "x": p.positions,
            "v": p.v_at,
            "a": p.a_at,
        })
        for p in profiles
    ]
    frame = pd.concat(frames) if frames else pd.DataFrame(columns=PROFILE_COLUMNS)
    frame.to_csv(path, index=False, columns=PROFILE_COLUMNS, encoding="utf-8")


def read_profiles_csv(path: Union[str, Path]) -> List[SpatialProfile]:
    """Reads profiles written by `write_profiles_csv`."""
    frame = pd.read_csv(path, dtype={"vehicle_id": str}, encoding="utf-8")
    return [
        SpatialProfile(
            vehicle_id=str(vehicle_id),
            entry_time=float(rows["entry_time"].iloc[0]),
            positions=rows["x"].to_numpy(dtype=np.int64),
            v_at=rows["v"].to_numpy(dtype=float),
            a_at=rows["a"].to_numpy(dtype=float),
        )
        for vehicle_id, rows in frame.groupby("vehicle_id", sort=False)
    ]
