# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Driver-style clustering: k-means over per-vehicle features with k chosen by the
normalized mean-deviation AIC/BIC."""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from constants import ARCHETYPES, SELECTION_CRITERIA
from errors import ValidationError
from trajectory_core import SpatialProfile

logger = logging.getLogger(__name__)

FEATURE_NAMES = ["accel_range", "avg_speed", "avg_accel"]
SPEED_COLUMN = 1
ACCEL_COLUMN = 2
DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300


@dataclass(frozen=True)
class DriverFeatures:
    """Clustering features of one vehicle."""

    vehicle_id: str
    accel_range: float
    avg_speed: float
    avg_accel: float

    def as_array(self) -> np.ndarray:
        """Features in `FEATURE_NAMES` order."""
        return np.array([self.accel_range, self.avg_speed, self.avg_accel])


@dataclass(frozen=True)
class ClusteringResult:
    """Outcome of one k-means run.

    Attributes:
        k: number of clusters.
        centers: (k, d) cluster centers in the clustered (standardized) space.
        assignments: cluster index per input row.
        objective: W(C), the within-cluster sum of squared distances.
        mean_distance: L, the mean distance of every point to its nearest center.
        feature_means: (k, d) member means in raw feature units.
        vehicle_ids: input identifiers, empty for bare arrays.
        objective_trace: W(C) after every Lloyd iteration.
        aic: criterion value, filled by `select_k`.
        bic: criterion value, filled by `select_k`.
        labels: cluster index to style label, filled by `label_clusters` when k = 3.
    """

    k: int
    centers: np.ndarray
    assignments: np.ndarray
    objective: float
    mean_distance: float
    feature_means: np.ndarray
    vehicle_ids: List[str]
    objective_trace: List[float]
    aic: float = math.nan
    bic: float = math.nan
    labels: Optional[Dict[int, str]] = None

    def label_of(self, cluster: int) -> str:
        """Style label of a cluster, or its numeric id when unlabeled."""
        if self.labels is None:
            return str(cluster)
        return self.labels[cluster]

    def vehicle_labels(self) -> Dict[str, str]:
        """Label (or numeric id) per vehicle id."""
        return {v: self.label_of(int(c)) for v, c in zip(self.vehicle_ids, self.assignments)}


class KDiagnostic(NamedTuple):
    """Selection diagnostics of one k of the sweep."""

    k: int
    mean_distance: float
    ln_lprime: float
    aic: float
    bic: float
    bic_literal: float
    result: ClusteringResult


class Selection(NamedTuple):
    """Chosen k and the whole sweep."""

    best_k: int
    diagnostics: List[KDiagnostic]

    def result(self, k: Optional[int] = None) -> ClusteringResult:
        """Clustering of the chosen (or a given) k."""
        k = self.best_k if k is None else k
        return next(d.result for d in self.diagnostics if d.k == k)


def compute_features(profile: SpatialProfile) -> DriverFeatures:
    """Acceleration range, average speed and average acceleration over the profile grid."""
    if len(profile.a_at) == 0:
        raise ValidationError(f"profile {profile.vehicle_id} is empty")
    return DriverFeatures(
        vehicle_id=profile.vehicle_id,
        accel_range=float(np.max(profile.a_at) - np.min(profile.a_at)),
        avg_speed=float(np.mean(profile.v_at)),
        avg_accel=float(np.mean(profile.a_at)),
    )


def standardize(points: np.ndarray) -> np.ndarray:
    """Z-scores each column; zero-variance columns are only centered."""
    std = points.std(axis=0)
    return (points - points.mean(axis=0)) / np.where(std > 0, std, 1.0)


def _as_points(features: Union[Sequence[DriverFeatures], np.ndarray]):
    if isinstance(features, np.ndarray):
        points = np.atleast_2d(np.asarray(features, dtype=float))
        return points, points, []
    raw = np.array([f.as_array() for f in features], dtype=float).reshape(-1, len(FEATURE_NAMES))
    return standardize(raw), raw, [f.vehicle_id for f in features]


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def _farthest_point_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(points)))]
    nearest = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        chosen.append(int(np.argmax(nearest)))
        nearest = np.minimum(nearest, np.sum((points - points[chosen[-1]]) ** 2, axis=1))
    return points[chosen].copy()


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int):
    """Runs Lloyd's iterations until assignments stop changing."""
    k = len(centers)
    assignments = np.full(len(points), -1)
    trace: List[float] = []
    for _ in range(max_iter):
        previous = assignments
        assignments = np.argmin(_squared_distances(points, centers), axis=1)
        for cluster in range(k):
            if not np.any(assignments == cluster):
                # reseed an emptied cluster with the point farthest from its own center
                own = np.sum((points - centers[assignments]) ** 2, axis=1)
                sizes = np.bincount(assignments, minlength=k)
                own[sizes[assignments] < 2] = -np.inf
                farthest = int(np.argmax(own))
                assignments[farthest] = cluster
                centers[cluster] = points[farthest]
        # a reseed that reproduces the previous assignments is a fixed point
        changed = not np.array_equal(assignments, previous)
        for cluster in range(k):
            centers[cluster] = points[assignments == cluster].mean(axis=0)
        objective = float(np.sum((points - centers[assignments]) ** 2))
        assert not trace or objective <= trace[-1] + 1e-9 * max(1.0, trace[-1]), (
            f"k-means objective increased from {trace[-1]} to {objective}"
        )
        trace.append(objective)
        if not changed:
            break
    return centers, assignments, trace


def kmeans(
    features: Union[Sequence[DriverFeatures], np.ndarray],
    k: int,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClusteringResult:
    """Best-of-restarts k-means with farthest-point seeding.

    `DriverFeatures` are z-score standardized first; bare arrays are clustered as given.

    Raises:
        ValidationError: fewer points than clusters, or k < 1.
    """
    points, raw, vehicle_ids = _as_points(features)
    n = len(points)
    if k < 1 or n < k:
        raise ValidationError(f"k-means needs 1 <= k <= n, got k={k} for n={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        centers, assignments, trace = _lloyd(
            points, _farthest_point_centers(points, k, rng), max_iter
        )
        if best is None or trace[-1] < best[2][-1]:
            best = (centers, assignments, trace)
    centers, assignments, trace = best
    distances = np.sqrt(_squared_distances(points, centers))
    return ClusteringResult(
        k=k,
        centers=centers,
        assignments=assignments,
        objective=float(np.sum((points - centers[assignments]) ** 2)),
        mean_distance=float(np.mean(distances.min(axis=1))),
        feature_means=np.array([raw[assignments == c].mean(axis=0) for c in range(k)]),
        vehicle_ids=vehicle_ids,
        objective_trace=trace,
    )


def normalized_log_likelihood(mean_distances: Sequence[float]) -> np.ndarray:
    """ln(L') = ln[(L - L_min) / (L_max - L_min) * (e - 1) + 1] over a k sweep.

    A flat sweep (L_max = L_min) maps every k to 0.
    """
    values = np.asarray(mean_distances, dtype=float)
    spread = values.max() - values.min()
    if spread <= 0:
        return np.zeros_like(values)
    return np.log((values - values.min()) / spread * (math.e - 1.0) + 1.0)


def select_k(
    features: Union[Sequence[DriverFeatures], np.ndarray],
    k_range: Sequence[int] = range(1, 11),
    seed: int = 0,
    criterion: str = "aic",
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Selection:
    """Sweeps k and picks the one minimizing the selection criterion.

    AIC = 2k + 20 ln(L') and BIC = k ln(n) + 10 ln(L'); `bic-literal` uses the printed
    multiplicative form k ln(n) * 10 * ln(L'). Ties go to the smaller k.

    Raises:
        ValidationError: unknown criterion or a k outside [1, n].
    """
    if criterion not in SELECTION_CRITERIA:
        raise ValidationError(f"unknown selection criterion {criterion}")
    n = len(features)
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1 or ks[-1] > n:
        raise ValidationError(f"k range {ks} must lie within [1, {n}]")
    results = [kmeans(features, k, seed=seed, restarts=restarts, max_iter=max_iter) for k in ks]
    ln_lprime = normalized_log_likelihood([r.mean_distance for r in results])

    diagnostics = []
    for result, ln_l in zip(results, ln_lprime):
        k = result.k
        aic = 2.0 * k + 2.0 * 10.0 * ln_l
        bic = k * math.log(n) + 10.0 * ln_l
        bic_literal = k * math.log(n) * 10.0 * ln_l
        diagnostics.append(
            KDiagnostic(
                k, result.mean_distance, float(ln_l), aic, bic, bic_literal,
                replace(result, aic=aic, bic=bic),
            )
        )
        logger.debug(f"k={k} L={result.mean_distance:.6f} ln(L')={ln_l:.6f} AIC={aic:.4f} BIC={bic:.4f}")

    def score(d: KDiagnostic) -> float:
        return {"aic": d.aic, "bic": d.bic, "bic-literal": d.bic_literal}[criterion]

    best = min(diagnostics, key=lambda d: (score(d), d.k))
    logger.info(f"Selected k = {best.k} by {criterion.upper()} over k in {ks[0]}..{ks[-1]}")
    return Selection(best.k, diagnostics)


def label_clusters(result: ClusteringResult) -> ClusteringResult:
    """Names the three clusters by ascending center speed, ties by ascending acceleration.

    Any other k keeps numeric cluster ids.
    """
    if result.k != len(ARCHETYPES):
        return replace(result, labels=None)
    order = sorted(
        range(result.k),
        key=lambda c: (result.centers[c, SPEED_COLUMN], result.centers[c, ACCEL_COLUMN], c),
    )
    return replace(result, labels={c: ARCHETYPES[rank] for rank, c in enumerate(order)})


def recovery_agreement(assignments: Sequence[int], truth: Sequence[str]) -> float:
    """Fraction of points whose cluster matches the truth under the best relabeling."""
    clusters = sorted(set(int(a) for a in assignments))
    classes = sorted(set(truth))
    counts = np.zeros((len(clusters), len(classes)))
    for a, t in zip(assignments, truth):
        counts[clusters.index(int(a)), classes.index(t)] += 1
    rows, cols = linear_sum_assignment(-counts)
    return float(counts[rows, cols].sum() / max(len(truth), 1))


def write_assignments_csv(result: ClusteringResult, path: Union[str, Path]) -> None:
    """Writes `vehicle_id,cluster,label`."""
    pd.DataFrame({
        "vehicle_id": result.vehicle_ids,
        "cluster": result.assignments.astype(int),
        "label": [result.label_of(int(c)) for c in result.assignments],
    }).to_csv(path, index=False, encoding="utf-8")


def read_assignments_csv(path: Union[str, Path]) -> Dict[str, str]:
    """Label per vehicle id from an assignments file."""
    frame = pd.read_csv(path, dtype={"vehicle_id": str, "label": str}, encoding="utf-8")
    return dict(zip(frame["vehicle_id"], frame["label"]))


def write_diagnostics_csv(selection: Selection, path: Union[str, Path]) -> None:
    """Writes `k,L,ln_Lprime,aic,bic` for every k of the sweep."""
    pd.DataFrame(
        [(d.k, d.mean_distance, d.ln_lprime, d.aic, d.bic) for d in selection.diagnostics],
        columns=["k", "L", "ln_Lprime", "aic", "bic"],
    ).to_csv(path, index=False, encoding="utf-8")


def write_features_csv(features: Sequence[DriverFeatures], path: Union[str, Path]) -> None:
    """Writes `vehicle_id,accel_range,avg_speed,avg_accel`."""
    pd.DataFrame(
        [[f.vehicle_id, *f.as_array()] for f in features], columns=["vehicle_id", *FEATURE_NAMES]
    ).to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def read_features_csv(path: Union[str, Path]) -> List[DriverFeatures]:
    """Reads features written by `write_features_csv`."""
    frame = pd.read_csv(path, dtype={"vehicle_id": str}, encoding="utf-8")
    return [
        DriverFeatures(row["vehicle_id"], row["accel_range"], row["avg_speed"], row["avg_accel"])
        for row in frame.to_dict("records")
    ]
