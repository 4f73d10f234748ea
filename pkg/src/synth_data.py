# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Synthetic tunnel-exit vehicle populations.

Each archetype owns a noiseless acceleration-versus-position profile: a gentle baseline
acceleration plus three smooth events, a deceleration that starts at the deceleration
onset, a partial re-acceleration around the in-tunnel marker and a renewed acceleration
that ends at the post-exit marker. Speed follows from v dv/dx = a. Drivers add a speed
offset, marker jitter and low-pass filtered acceleration noise on top of their archetype.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import brentq

from clustering import DriverFeatures, compute_features
from constants import (
    ARCHETYPES,
    ARCHETYPE_TARGETS,
    DECELERATION_ONSET,
    IN_TUNNEL_ACCELERATION_ONSET,
    POST_EXIT_ACCELERATION,
    SAMPLING_INTERVAL,
    SECTION_END,
    SECTION_START,
    SPEED_LIMIT,
)
from errors import ValidationError
from model_core import named_rng
from trajectory_core import VehicleTrack, preprocess_tracks

logger = logging.getLogger(__name__)

DECELERATION_WIDTH = 60.0
RETUNNEL_WIDTH = 40.0
POST_EXIT_WIDTH = 70.0
RETUNNEL_RATIO = 0.6
POST_EXIT_RATIO = 0.8
NOISE_CORRELATION = 15.0
FINE_STEP = 0.1
MIN_SPEED = 1.0


@dataclass(frozen=True)
class ArchetypeSpec:
    """Target statistics of one driver style."""

    label: str
    mean_speed: float
    mean_accel: float
    accel_range: float
    mixture_weight: float
    noise_scale: float = 0.02
    speed_spread: float = 0.4

    def __post_init__(self):
        if self.mean_speed <= 0 or self.accel_range <= 0:
            raise ValidationError(f"archetype {self.label}: mean speed and range must be > 0")
        if self.mixture_weight < 0 or self.noise_scale < 0 or self.speed_spread < 0:
            raise ValidationError(f"archetype {self.label}: negative weight or noise")


@dataclass(frozen=True)
class ScenarioSpec:
    """Section geometry, event markers and population size."""

    n_vehicles: int = 1500
    duration: float = 14400.0
    seed: int = 0
    section_start: float = SECTION_START
    section_end: float = SECTION_END
    speed_limit: float = SPEED_LIMIT
    deceleration_onset: float = DECELERATION_ONSET
    in_tunnel_acceleration_onset: float = IN_TUNNEL_ACCELERATION_ONSET
    post_exit_acceleration: float = POST_EXIT_ACCELERATION
    sampling_interval: float = SAMPLING_INTERVAL
    marker_jitter: float = 5.0

    def __post_init__(self):
        if self.n_vehicles < 1:
            raise ValidationError("scenario needs at least one vehicle")
        if self.duration <= 0 or self.sampling_interval <= 0:
            raise ValidationError("duration and sampling interval must be positive")
        if self.section_end <= self.section_start:
            raise ValidationError("section end must lie after section start")
        for marker in (
            self.deceleration_onset,
            self.in_tunnel_acceleration_onset,
            self.post_exit_acceleration,
        ):
            if not self.section_start <= marker <= self.section_end:
                raise ValidationError(f"event marker {marker} lies outside the section")

    def event_centers(self, shift: float = 0.0) -> Tuple[float, float, float]:
        """Centers of the deceleration, re-acceleration and post-exit events."""
        return (
            self.deceleration_onset + DECELERATION_WIDTH / 2 + shift,
            self.in_tunnel_acceleration_onset + shift,
            self.post_exit_acceleration - POST_EXIT_WIDTH / 2 + shift,
        )


@dataclass(frozen=True)
class ProfileShape:
    """Calibrated amplitudes of an archetype's noiseless profile."""

    base_speed: float
    base_accel: float
    deceleration: float
    retunnel: float = field(init=False)
    post_exit: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "retunnel", RETUNNEL_RATIO * self.deceleration)
        object.__setattr__(self, "post_exit", POST_EXIT_RATIO * self.deceleration)


def default_archetypes(noise_scale: float = 0.02, speed_spread: float = 0.4) -> List[ArchetypeSpec]:
    """Archetypes calibrated to the published per-style feature means, equal weights."""
    return [
        ArchetypeSpec(
            label=label,
            mean_speed=ARCHETYPE_TARGETS[label]["avg_speed"],
            mean_accel=ARCHETYPE_TARGETS[label]["avg_accel"],
            accel_range=ARCHETYPE_TARGETS[label]["accel_range"],
            mixture_weight=1.0 / len(ARCHETYPES),
            noise_scale=noise_scale,
            speed_spread=speed_spread,
        )
        for label in ARCHETYPES
    ]


def _bump(x: np.ndarray, center: float, width: float) -> np.ndarray:
    """Raised cosine with unit peak at `center`, zero outside one width."""
    u = (x - center) / width
    return np.where(np.abs(u) < 0.5, 0.5 * (1.0 + np.cos(2.0 * np.pi * u)), 0.0)


def _event_accel(x: np.ndarray, scenario: ScenarioSpec, shape: ProfileShape, shift: float = 0.0):
    decel, retunnel, post_exit = scenario.event_centers(shift)
    return (
        shape.base_accel
        - shape.deceleration * _bump(x, decel, DECELERATION_WIDTH)
        + shape.retunnel * _bump(x, retunnel, RETUNNEL_WIDTH)
        + shape.post_exit * _bump(x, post_exit, POST_EXIT_WIDTH)
    )


def _speed_from_accel(x: np.ndarray, a: np.ndarray, base_speed: float) -> np.ndarray:
    """Integrates v dv/dx = a from the section start."""
    half_v2 = np.concatenate([[0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * np.diff(x))])
    return np.sqrt(np.maximum(base_speed**2 + 2.0 * half_v2, MIN_SPEED**2))


def _grid(scenario: ScenarioSpec, step: float = 1.0) -> np.ndarray:
    count = int(round((scenario.section_end - scenario.section_start) / step)) + 1
    return scenario.section_start + step * np.arange(count)


def archetype_profile(
    archetype: ArchetypeSpec, scenario: ScenarioSpec
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noiseless (positions, speed, acceleration) of an archetype on the 1 m grid."""
    shape = calibrate_archetype(archetype, scenario)
    x = _grid(scenario)
    a = _event_accel(x, scenario, shape)
    return x, _speed_from_accel(x, a, shape.base_speed), a


def calibrate_archetype(archetype: ArchetypeSpec, scenario: ScenarioSpec) -> ProfileShape:
    """Solves the profile amplitudes reproducing the archetype's target statistics.

    The event amplitudes set the acceleration range, the baseline acceleration sets the
    mean acceleration and the entry speed is found by root search on the mean speed.

    Raises:
        ValidationError: no entry speed reproduces the requested mean speed.
    """
    x = _grid(scenario)
    deceleration = archetype.accel_range / (1.0 + max(RETUNNEL_RATIO, POST_EXIT_RATIO))
    events = _event_accel(x, scenario, ProfileShape(0.0, 0.0, deceleration))
    base_accel = archetype.mean_accel - float(np.mean(events))
    a = events + base_accel

    def mean_speed_gap(base_speed: float) -> float:
        return float(np.mean(_speed_from_accel(x, a, base_speed))) - archetype.mean_speed

    try:
        base_speed = brentq(mean_speed_gap, MIN_SPEED, 10.0 * archetype.mean_speed + 50.0)
    except ValueError as e:
        raise ValidationError(f"archetype {archetype.label} cannot be calibrated: {e}") from e
    return ProfileShape(base_speed, base_accel, deceleration)


def _validate_archetypes(archetypes: Sequence[ArchetypeSpec]) -> None:
    if not archetypes:
        raise ValidationError("at least one archetype is required")
    total = sum(a.mixture_weight for a in archetypes)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"archetype mixture weights sum to {total}, expected 1")
    labels = [a.label for a in archetypes]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate archetype labels in {labels}")


def population_labels(
    scenario: ScenarioSpec, archetypes: Sequence[ArchetypeSpec]
) -> Dict[str, str]:
    """Hidden generating archetype of every vehicle id."""
    _validate_archetypes(archetypes)
    rng = named_rng(scenario.seed, "generation", 0)
    weights = np.array([a.mixture_weight for a in archetypes])
    picks = rng.choice(len(archetypes), size=scenario.n_vehicles, p=weights / weights.sum())
    return {_vehicle_id(i): archetypes[k].label for i, k in enumerate(picks)}


def _vehicle_id(index: int) -> str:
    return f"veh-{index:05d}"


def _simulate_vehicle(
    index: int,
    archetype: ArchetypeSpec,
    shape: ProfileShape,
    scenario: ScenarioSpec,
    entry_time: float,
) -> VehicleTrack:
    rng = named_rng(scenario.seed, "generation", 1, index)
    x = _grid(scenario, FINE_STEP)
    shift = rng.normal(0.0, scenario.marker_jitter) if scenario.marker_jitter > 0 else 0.0
    a = _event_accel(x, scenario, shape, shift)
    white = rng.standard_normal(len(x))
    if archetype.noise_scale > 0:
        smooth = gaussian_filter1d(white, sigma=NOISE_CORRELATION / FINE_STEP, mode="nearest")
        a = a + archetype.noise_scale * smooth / smooth.std()
    offset = rng.normal(0.0, archetype.speed_spread) if archetype.speed_spread > 0 else 0.0
    v = _speed_from_accel(x, a, max(shape.base_speed + offset, MIN_SPEED))

    elapsed = np.concatenate([[0.0], np.cumsum(2.0 * np.diff(x) / (v[1:] + v[:-1]))])
    steps = int(np.floor(elapsed[-1] / scenario.sampling_interval + 1e-9)) + 1
    t_rel = scenario.sampling_interval * np.arange(steps)
    x_t = np.interp(t_rel, elapsed, x)
    return VehicleTrack(
        vehicle_id=_vehicle_id(index),
        entry_time=entry_time,
        t=entry_time + t_rel,
        x=x_t,
        v=np.interp(x_t, x, v),
    )


def generate_population(
    scenario: ScenarioSpec, archetypes: Sequence[ArchetypeSpec]
) -> List[VehicleTrack]:
    """Generates one track per vehicle, fully determined by the scenario seed."""
    labels = population_labels(scenario, archetypes)
    by_label = {a.label: a for a in archetypes}
    shapes = {a.label: calibrate_archetype(a, scenario) for a in archetypes}
    for label, shape in shapes.items():
        logger.debug(f"Calibrated {label}: {shape}")
    entry_times = named_rng(scenario.seed, "generation", 2).uniform(
        0.0, scenario.duration, size=scenario.n_vehicles
    )
    tracks = [
        _simulate_vehicle(i, by_label[label], shapes[label], scenario, float(entry_times[i]))
        for i, label in enumerate(labels.values())
    ]
    logger.info(f"Generated {len(tracks)} vehicles over {scenario.duration:.0f} s")
    return tracks


def summarize_population(
    tracks: Sequence[VehicleTrack],
    labels: Dict[str, str],
    archetypes: Optional[Sequence[str]] = None,
) -> Dict[str, Optional[DriverFeatures]]:
    """Mean clustering features per generating archetype.

    Archetypes without any vehicle map to None rather than to zeros.
    """
    groups: Dict[str, List[DriverFeatures]] = {
        label: [] for label in (archetypes or sorted(set(labels.values())))
    }
    for profile in preprocess_tracks(tracks):
        label = labels.get(profile.vehicle_id)
        if label is not None:
            groups.setdefault(label, []).append(compute_features(profile))
    summary: Dict[str, Optional[DriverFeatures]] = {}
    for label, features in groups.items():
        if not features:
            summary[label] = None
            continue
        summary[label] = DriverFeatures(
            vehicle_id=label,
            accel_range=float(np.mean([f.accel_range for f in features])),
            avg_speed=float(np.mean([f.avg_speed for f in features])),
            avg_accel=float(np.mean([f.avg_accel for f in features])),
        )
    return summary
