# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""File containing constants to be used in the acceleration prediction pipeline."""

SECTION_START = -380.0
SECTION_END = 320.0
SPEED_LIMIT = 27.78
SAMPLING_INTERVAL = 0.05

DECELERATION_ONSET = -180.0
IN_TUNNEL_ACCELERATION_ONSET = -80.0
POST_EXIT_ACCELERATION = 120.0

ARCHETYPES = ["conservative", "moderate", "aggressive"]
UNCLUSTERED = "unclustered"

PERCENTILES = [20, 40, 60, 80]
ENV_CHANNELS = [
    "v_p20",
    "v_p40",
    "v_p60",
    "v_p80",
    "a_p20",
    "a_p40",
    "a_p60",
    "a_p80",
]
ENV_SPANS = ["prediction", "history", "both"]

MODEL_FAMILIES = ["seq2seq", "bilstm", "rnn", "ann", "cnn"]
BASELINE_KINDS = ["rnn", "ann", "cnn", "bilstm"]
SELECTION_CRITERIA = ["aic", "bic", "bic-literal"]

MODEL_MAGIC = b"ACCPRED\x00"
MODEL_FORMAT_VERSION = 1

# artifact file names, keyed by the subcommand producing them
ARTIFACTS = {
    "generate": ["trajectories.csv", "labels.csv"],
    "preprocess": ["profiles.csv"],
    "features": ["env_sequence.csv", "driver_features.csv"],
    "cluster": ["assignments.csv", "k_diagnostics.csv"],
    "train": ["models/manifest.yaml", "splits.csv"],
    "predict": ["traces/index.csv"],
    "evaluate": ["grid.csv", "window_sweep.csv"],
    "report": ["report.md"],
}
RESOLVED_CONFIG = "config.resolved.yaml"

# field-study values: archetype calibration targets and MAE references printed beside results
ARCHETYPE_TARGETS = {
    "conservative": {"accel_range": 0.8805, "avg_accel": 0.0843, "avg_speed": 21.7648},
    "moderate": {"accel_range": 1.1023, "avg_accel": 0.1198, "avg_speed": 25.7631},
    "aggressive": {"accel_range": 1.0383, "avg_accel": 0.1201, "avg_speed": 28.0423},
}
REFERENCE_WINDOW_MAE = {1: 0.0664, 2: 0.0620, 15: 0.0587, 100: 0.0587, 200: 0.0591}
REFERENCE_SEQ2SEQ_MAE = {
    "conservative": {10: 0.0383, 30: 0.0510, 50: 0.0587},
    "moderate": {10: 0.0562, 30: 0.0803, 50: 0.0911},
    "aggressive": {10: 0.0726, 30: 0.1033, 50: 0.1214},
}

EXIT_CODES = {
    "ConfigError": 2,
    "MissingArtifactError": 3,
    "ValidationError": 4,
    "CoverageError": 4,
    "DegenerateGeometryError": 4,
    "NonFiniteError": 5,
    "ModelFormatError": 6,
    "AccelPredError": 1,
}
