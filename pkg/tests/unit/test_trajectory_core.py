# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
from parameterized import parameterized

from errors import CoverageError, DegenerateGeometryError, ValidationError
from trajectory_core import (
    TrajectorySample,
    VehicleTrack,
    differentiate_speed,
    extract_window,
    preprocess_tracks,
    read_profiles_csv,
    read_tracks_csv,
    resample_to_grid,
    write_profiles_csv,
    write_tracks_csv,
)

from .helpers import constant_accel_track, linear_profile


def _track(t, x, v, a=None, vehicle_id="veh-00001"):
    return VehicleTrack(
        vehicle_id=vehicle_id,
        entry_time=float(t[0]),
        t=np.asarray(t, dtype=float),
        x=np.asarray(x, dtype=float),
        v=np.asarray(v, dtype=float),
        a=None if a is None else np.asarray(a, dtype=float),
    )


class TestDifferentiateSpeed(unittest.TestCase):
    @parameterized.expand([
        ("constant", [10.0, 10.0, 10.0], [0.0, 0.05, 0.10], [0.0, 0.0, 0.0]),
        ("ramp", [10.0, 10.5, 11.0], [0.0, 0.05, 0.10], [10.0, 10.0, 10.0]),
        ("two_samples", [20.0, 21.0], [0.0, 0.05], [20.0, 20.0]),
    ])
    def test_difference_quotients(self, _, v, t, expected):
        track = _track(t, np.cumsum([1.0] * len(t)), v)
        np.testing.assert_allclose(differentiate_speed(track).a, expected, atol=1e-9)

    def test_affine_speed_gives_exact_slope(self):
        """Uneven sampling still yields the constant slope at every sample."""
        t = np.array([0.0, 0.04, 0.1, 0.13, 0.2, 0.26])
        track = _track(t, 1.0 + np.arange(len(t)), 15.0 - 2.5 * t)
        np.testing.assert_allclose(differentiate_speed(track).a, -2.5, atol=1e-9)

    def test_other_columns_unchanged(self):
        track = constant_accel_track(steps=20)
        result = differentiate_speed(track)
        np.testing.assert_array_equal(result.x, track.x)
        np.testing.assert_array_equal(result.v, track.v)
        self.assertIsNone(track.a)

    def test_single_sample_rejected(self):
        with self.assertRaises(ValidationError):
            _track([0.0], [1.0], [10.0])


class TestTrackValidation(unittest.TestCase):
    def test_negative_speed_rejected(self):
        with self.assertRaises(ValidationError):
            _track([0.0, 0.05], [0.0, 1.0], [1.0, -1.0])

    def test_time_must_increase(self):
        with self.assertRaises(ValidationError):
            _track([0.0, 0.0], [0.0, 1.0], [1.0, 1.0])

    def test_repeated_position_is_degenerate(self):
        with self.assertRaises(DegenerateGeometryError):
            _track([0.0, 0.05, 0.1], [1.0, 1.0, 2.0], [10.0, 10.0, 10.0], a=[0.0, 0.0, 0.0])

    def test_backward_positions_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            _track([0.0, 0.05, 0.1], [1.0, 3.0, 2.0], [10.0, 10.0, 10.0])
        self.assertNotIsInstance(ctx.exception, DegenerateGeometryError)

    def test_from_samples_round_trip(self):
        samples = [TrajectorySample(1.0, 0.0, 10.0), TrajectorySample(1.05, 0.5, 10.2)]
        track = VehicleTrack.from_samples("veh-9", samples)
        self.assertEqual(track.entry_time, 1.0)
        self.assertIsNone(track.a)
        self.assertEqual(track.samples, samples)


class TestResampleToGrid(unittest.TestCase):
    def test_bracket_interpolation(self):
        track = _track([0.0, 0.1], [4.2, 5.6], [10.0, 10.0], a=[1.0, 2.4])
        profile = resample_to_grid(track)
        np.testing.assert_array_equal(profile.positions, [5])
        self.assertAlmostEqual(profile.a_at[0], 1.8, places=12)

    def test_grid_point_on_samples(self):
        track = _track([0.0, 0.1, 0.2], [3.0, 4.0, 5.5], [10.0, 11.0, 12.0], a=[0.1, 0.7, -0.2])
        profile = resample_to_grid(track)
        np.testing.assert_array_equal(profile.positions, [3, 4, 5])
        self.assertAlmostEqual(profile.a_at[0], 0.1, places=12)
        self.assertAlmostEqual(profile.a_at[1], 0.7, places=12)

    @parameterized.expand([(seed,) for seed in range(5)])
    def test_affine_acceleration_is_exact(self, seed):
        rng = np.random.default_rng(seed)
        x = np.cumsum(rng.uniform(0.3, 1.7, size=120)) - 60.3
        slope, intercept = rng.normal(size=2)
        a = slope * x + intercept
        track = _track(np.arange(len(x)) * 0.05, x, 20.0 + 0.01 * x, a=a)
        profile = resample_to_grid(track)
        np.testing.assert_array_equal(
            profile.positions, np.arange(math.ceil(x[0]), math.floor(x[-1]) + 1)
        )
        np.testing.assert_allclose(profile.a_at, slope * profile.positions + intercept, atol=1e-9)
        np.testing.assert_allclose(profile.v_at, 20.0 + 0.01 * profile.positions, atol=1e-9)

    @parameterized.expand([(seed,) for seed in range(5)])
    def test_values_stay_inside_bracket(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = np.cumsum(rng.uniform(0.2, 2.5, size=80))
        a = rng.normal(size=80)
        profile = resample_to_grid(_track(np.arange(80) * 0.05, x, np.full(80, 10.0), a=a))
        right = np.searchsorted(x, profile.positions, side="left")
        left = np.maximum(right - 1, 0)
        lo = np.minimum(a[left], a[right])
        hi = np.maximum(a[left], a[right])
        self.assertTrue(np.all(profile.a_at >= lo - 1e-12))
        self.assertTrue(np.all(profile.a_at <= hi + 1e-12))

    def test_coarser_spacing(self):
        track = differentiate_speed(constant_accel_track(steps=100))
        profile = resample_to_grid(track, grid_spacing=5)
        self.assertTrue(np.all(np.diff(profile.positions) == 5))
        self.assertTrue(np.all(profile.positions % 5 == 0))

    def test_acceleration_required(self):
        with self.assertRaises(ValidationError):
            resample_to_grid(constant_accel_track(steps=10))


class TestExtractWindow(unittest.TestCase):
    def setUp(self):
        self.profile = linear_profile(start=-380, end=320)

    def test_segments(self):
        history, target = extract_window(self.profile, -100, 100, 50)
        self.assertEqual(history.shape, (100, 2))
        self.assertEqual(target.shape, (50,))
        np.testing.assert_allclose(history[:, 1], 0.01 * (np.arange(-199, -99) + 380))
        np.testing.assert_allclose(target, 0.01 * (np.arange(-99, -49) + 380))

    @parameterized.expand([
        ("history_before_start", -350, 100, 50),
        ("horizon_after_end", 300, 100, 50),
        ("zero_horizon", 0, 100, 0),
    ])
    def test_uncovered(self, _, anchor, history_len, horizon):
        with self.assertRaises(CoverageError):
            extract_window(self.profile, anchor, history_len, horizon)

    def test_horizon_length(self):
        _, target = extract_window(self.profile, 0, 100, 10)
        self.assertEqual(len(target), 10)


class TestPreprocessAndCsv(unittest.TestCase):
    def test_track_without_grid_position_skipped(self):
        good = constant_accel_track("veh-a", steps=50)
        bad = _track([0.0, 0.05], [1.2, 1.7], [10.0, 10.0], vehicle_id="veh-b")
        with self.assertLogs("trajectory_core", level="WARNING"):
            profiles = preprocess_tracks([good, bad])
        self.assertEqual([p.vehicle_id for p in profiles], ["veh-a"])

    def test_tracks_csv(self):
        tracks = [constant_accel_track("veh-a", steps=30), constant_accel_track("veh-b", steps=40)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "trajectories.csv"
            write_tracks_csv(tracks, path)
            self.assertEqual(path.read_text(encoding="utf-8").splitlines()[0], "vehicle_id,t,x,v,a")
            loaded = read_tracks_csv(path)
        self.assertEqual([t.vehicle_id for t in loaded], ["veh-a", "veh-b"])
        np.testing.assert_allclose(loaded[1].x, tracks[1].x)
        np.testing.assert_allclose(loaded[1].a, 0.5, atol=1e-9)

    def test_tracks_csv_without_acceleration(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "input.csv"
            path.write_text("vehicle_id,t,x,v\n7,0.0,0.0,10\n7,0.05,0.5,10\n", encoding="utf-8")
            (track,) = read_tracks_csv(path)
        self.assertEqual(track.vehicle_id, "7")
        self.assertIsNone(track.a)

    def test_tracks_csv_skips_invalid_vehicle(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "input.csv"
            path.write_text(
                "vehicle_id,t,x,v\n1,0.0,0.0,10\n1,0.05,0.5,10\n2,0.0,3.0,10\n2,0.05,2.0,10\n",
                encoding="utf-8",
            )
            with self.assertLogs("trajectory_core", level="WARNING"):
                tracks = read_tracks_csv(path)
        self.assertEqual([t.vehicle_id for t in tracks], ["1"])

    def test_tracks_csv_missing_column(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "input.csv"
            path.write_text("vehicle_id,t,x\n1,0.0,0.0\n", encoding="utf-8")
            with self.assertRaises(ValidationError):
                read_tracks_csv(path)

    def test_profiles_csv(self):
        profiles = [linear_profile("veh-a", 0, 20, entry_time=3.5), linear_profile("veh-b", 5, 9)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "profiles.csv"
            write_profiles_csv(profiles, path)
            loaded = read_profiles_csv(path)
        self.assertEqual(loaded[0].entry_time, 3.5)
        np.testing.assert_array_equal(loaded[1].positions, np.arange(5, 10))
        np.testing.assert_allclose(loaded[0].a_at, profiles[0].a_at)
