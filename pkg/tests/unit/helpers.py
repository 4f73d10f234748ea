#!/usr/bin/env python3
# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Helper functions for writing tests."""

import itertools
import math
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from env_features import EnvSequence
from model_core import Params
from trajectory_core import SpatialProfile, VehicleTrack


def constant_accel_track(
    vehicle_id: str = "veh-00000",
    v0: float = 20.0,
    accel: float = 0.5,
    dt: float = 0.05,
    steps: int = 200,
    x0: float = -50.0,
    entry_time: float = 0.0,
) -> VehicleTrack:
    """Track of a vehicle under constant acceleration from x0."""
    t = dt * np.arange(steps)
    return VehicleTrack(
        vehicle_id=vehicle_id,
        entry_time=entry_time,
        t=entry_time + t,
        x=x0 + v0 * t + 0.5 * accel * t**2,
        v=v0 + accel * t,
    )


def linear_profile(
    vehicle_id: str = "veh-00000",
    start: int = 0,
    end: int = 99,
    entry_time: float = 0.0,
    speed: float = 20.0,
    slope: float = 0.01,
) -> SpatialProfile:
    """Profile whose acceleration grows linearly with position."""
    positions = np.arange(start, end + 1, dtype=np.int64)
    return SpatialProfile(
        vehicle_id=vehicle_id,
        entry_time=entry_time,
        positions=positions,
        v_at=speed + 0.001 * (positions - start),
        a_at=slope * (positions - start),
    )


def full_env(start: int, end: int, value: float = 1.0) -> EnvSequence:
    """Environmental sequence present over [start, end] with channel-indexed values."""
    positions = np.arange(start, end + 1, dtype=np.int64)
    values = value + np.tile(np.arange(8, dtype=float), (len(positions), 1))
    return EnvSequence(positions, values, np.full(len(positions), 10), (0.0, 1.0))


def numeric_gradient(
    loss: Callable[[Params], float], params: Params, key: str, eps: float = 1e-5
) -> np.ndarray:
    """Central finite differences of `loss` with respect to one parameter."""
    grad = np.zeros_like(params[key])
    for index in np.ndindex(*params[key].shape):
        original = params[key][index]
        params[key][index] = original + eps
        plus = loss(params)
        params[key][index] = original - eps
        minus = loss(params)
        params[key][index] = original
        grad[index] = (plus - minus) / (2.0 * eps)
    return grad


def gradient_errors(
    loss: Callable[[Params], float],
    params: Params,
    grads: Params,
    keys: Optional[Sequence[str]] = None,
) -> Dict[str, float]:
    """Max relative error between analytic and numeric gradients per parameter.

    The denominator is max(|analytic|, |numeric|) floored at 1e-4, so entries near zero
    are compared absolutely.
    """
    errors = {}
    for key in keys or list(params):
        numeric = numeric_gradient(loss, params, key)
        analytic = grads.get(key, np.zeros_like(numeric))
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
        errors[key] = float(np.max(np.abs(analytic - numeric) / scale))
    return errors


def brute_force_kmeans(points: np.ndarray, k: int) -> float:
    """Minimum within-cluster sum of squares over every assignment."""
    best = math.inf
    for labels in itertools.product(range(k), repeat=len(points)):
        labels = np.array(labels)
        if len(set(labels.tolist())) != k:
            continue
        objective = sum(
            float(np.sum((points[labels == c] - points[labels == c].mean(axis=0)) ** 2))
            for c in range(k)
        )
        best = min(best, objective)
    return best


def percentile_oracle(values: List[float], q: float) -> float:
    """Linear interpolation between order statistics at rank q * (n - 1)."""
    ordered = sorted(values)
    rank = q / 100.0 * (len(ordered) - 1)
    low = int(math.floor(rank))
    high = min(low + 1, len(ordered) - 1)
    return ordered[low] + (rank - low) * (ordered[high] - ordered[low])
