# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Run configuration: the option schema in `config.yaml`, user overrides and validation."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from constants import MODEL_FAMILIES
from errors import ConfigError, ValidationError
from synth_data import ArchetypeSpec, ScenarioSpec, default_archetypes

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "config.yaml"
STYLE_KEYS = ["label", "mean-speed", "mean-accel", "accel-range", "weight"]

# `path:line` of every option set in a run file, keyed by (section, option)
Locations = Dict[Tuple[str, str], str]


@dataclass(frozen=True)
class EnvConfig:
    """Environmental sequence construction."""

    window_minutes: float = 15.0
    min_support: int = 5
    span: str = "prediction"

    @property
    def window_seconds(self) -> float:
        """Window length in seconds."""
        return self.window_minutes * 60.0


@dataclass(frozen=True)
class ClusteringConfig:
    """Cluster-count sweep."""

    k_min: int = 1
    k_max: int = 10
    criterion: str = "aic"
    restarts: int = 10
    max_iter: int = 300

    @property
    def k_range(self) -> range:
        """Cluster counts evaluated."""
        return range(self.k_min, self.k_max + 1)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings shared by every cell of the grid."""

    families: Tuple[str, ...] = tuple(MODEL_FAMILIES)
    history_len: int = 100
    horizons: Tuple[int, ...] = (10, 30, 50)
    hidden_size: int = 64
    align_width: int = 2
    dropout: float = 0.2
    teacher_forcing: float = 0.5
    conv_channels: int = 16
    conv_kernel: int = 5
    ann_hidden: int = 64


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer, early stopping and windowing."""

    learning_rate: float = 1e-3
    batch_size: int = 64
    max_steps: int = 2000
    eval_every: int = 100
    patience: int = 5
    clip_norm: float = 5.0
    anchor_stride: int = 5
    max_val_windows: int = 512
    split: Tuple[float, float, float] = (0.7, 0.2, 0.1)


@dataclass(frozen=True)
class EvaluationConfig:
    """Grid seeds, window sweep and reporting."""

    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    window_minutes: Tuple[float, ...] = (1.0, 2.0, 15.0, 100.0, 200.0)
    sweep_horizon: int = 50
    max_test_windows: int = 0
    trace_count: int = 3


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one pipeline run."""

    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    archetypes: Tuple[ArchetypeSpec, ...] = field(default_factory=lambda: tuple(default_archetypes()))
    grid_spacing: int = 1
    env: EnvConfig = field(default_factory=EnvConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int = 0
    jobs: int = 1
    custom_styles: Tuple[Dict[str, Any], ...] = ()

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        """Sectioned mapping with hyphenated option names, accepted back by `load_config`."""
        first = self.archetypes[0]
        return {
            "scenario": {
                "n-vehicles": self.scenario.n_vehicles,
                "duration": self.scenario.duration,
                "sampling-interval": self.scenario.sampling_interval,
                "marker-jitter": self.scenario.marker_jitter,
            },
            "archetypes": {
                "noise-scale": first.noise_scale,
                "speed-spread": first.speed_spread,
                "styles": [dict(style) for style in self.custom_styles],
            },
            "preprocess": {"grid-spacing": self.grid_spacing},
            "env": _hyphenate(self.env),
            "clustering": _hyphenate(self.clustering),
            "model": _hyphenate(self.model),
            "training": _hyphenate(self.training),
            "evaluation": _hyphenate(self.evaluation),
            "run": {"seed": self.seed, "jobs": self.jobs},
        }


def _hyphenate(section) -> Dict[str, Any]:
    return {
        name.replace("_", "-"): list(value) if isinstance(value, tuple) else value
        for name, value in vars(section).items()
    }


def load_schema(path: Union[str, Path] = SCHEMA_PATH) -> Dict[str, Dict[str, Dict[str, Any]]]:
    """Reads the option schema: section -> option -> type, description, default, limits."""
    with open(path, "r", encoding="utf-8") as handle:
        return yaml.safe_load(handle)["options"]


def _check_scalar(kind: str, value: Any) -> bool:
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "string":
        return isinstance(value, str)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == "mapping":
        return isinstance(value, dict)
    return False


def check_option(spec: Dict[str, Any], value: Any) -> Optional[str]:
    """Returns a problem description when `value` violates its option schema."""
    kind = spec["type"]
    items = value if kind == "list" else [value]
    item_kind = spec.get("items", kind)
    if kind == "list" and not isinstance(value, list):
        return f"expected a list of {item_kind}, got {value!r}"
    for item in items:
        if not _check_scalar(item_kind, item):
            return f"expected {item_kind}, got {item!r}"
        if "choices" in spec and item not in spec["choices"]:
            return f"{item!r} is not one of {spec['choices']}"
        if "minimum" in spec and item < spec["minimum"]:
            return f"{item!r} is below the minimum {spec['minimum']}"
        if "maximum" in spec and item > spec["maximum"]:
            return f"{item!r} is above the maximum {spec['maximum']}"
    return None


def _read_user_file(path: Union[str, Path], schema) -> Tuple[Dict[str, Dict[str, Any]], Locations, List[str]]:
    """Parses a run file, collecting diagnostics prefixed with `path:line`.

    Returns:
        The accepted options, the `path:line` of each accepted option and the diagnostics.
    """
    text = Path(path).read_text(encoding="utf-8")
    values: Dict[str, Dict[str, Any]] = {}
    locations: Locations = {}
    diagnostics = []
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
        if root is None:
            return values, locations, diagnostics
        if not isinstance(root, yaml.MappingNode):
            return values, locations, [f"{path}:{root.start_mark.line + 1}: top level must be a mapping"]
        for section_node, options_node in root.value:
            section = loader.construct_object(section_node)
            where = f"{path}:{section_node.start_mark.line + 1}"
            if section not in schema:
                diagnostics.append(f"{where}: unknown section '{section}'")
                continue
            if not isinstance(options_node, yaml.MappingNode):
                diagnostics.append(f"{where}: section '{section}' must be a mapping")
                continue
            for key_node, value_node in options_node.value:
                option = loader.construct_object(key_node)
                where = f"{path}:{key_node.start_mark.line + 1}"
                if option not in schema[section]:
                    diagnostics.append(f"{where}: unknown option '{section}.{option}'")
                    continue
                value = loader.construct_object(value_node, deep=True)
                problem = check_option(schema[section][option], value)
                if problem:
                    diagnostics.append(f"{where}: {section}.{option}: {problem}")
                    continue
                values.setdefault(section, {})[option] = value
                locations[(section, option)] = where
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark else 0
        diagnostics.append(f"{path}:{line}: invalid YAML ({getattr(e, 'problem', e)})")
    finally:
        loader.dispose()
    return values, locations, diagnostics


def _at(locations: Locations, *keys: Tuple[str, str]) -> str:
    """`path:line: ` of the first listed option set in the run file; empty when all are defaults."""
    for key in keys:
        if key in locations:
            return f"{locations[key]}: "
    return ""


def _archetypes(options: Dict[str, Any], diagnostics: List[str], locations: Locations) -> Tuple[ArchetypeSpec, ...]:
    noise, spread = options["noise-scale"], options["speed-spread"]
    styles = options["styles"]
    if not styles:
        return tuple(default_archetypes(noise, spread))
    where = _at(locations, ("archetypes", "styles"))
    archetypes = []
    for position, style in enumerate(styles):
        missing = [key for key in STYLE_KEYS if key not in style]
        if missing:
            diagnostics.append(f"{where}archetypes.styles[{position}]: missing {missing}")
            continue
        try:
            archetypes.append(
                ArchetypeSpec(
                    label=str(style["label"]),
                    mean_speed=float(style["mean-speed"]),
                    mean_accel=float(style["mean-accel"]),
                    accel_range=float(style["accel-range"]),
                    mixture_weight=float(style["weight"]),
                    noise_scale=noise,
                    speed_spread=spread,
                )
            )
        except (TypeError, ValueError) as e:
            diagnostics.append(f"{where}archetypes.styles[{position}]: {e}")
    if archetypes and abs(sum(a.mixture_weight for a in archetypes) - 1.0) > 1e-9:
        diagnostics.append(f"{where}archetypes.styles: weights must sum to 1")
    return tuple(archetypes)


def _cross_checks(values: Dict[str, Dict[str, Any]], diagnostics: List[str], locations: Locations) -> None:
    clustering, model, training = values["clustering"], values["model"], values["training"]
    if clustering["k-min"] > clustering["k-max"]:
        where = _at(locations, ("clustering", "k-min"), ("clustering", "k-max"))
        diagnostics.append(f"{where}clustering: k-min must not exceed k-max")
    if clustering["k-max"] > values["scenario"]["n-vehicles"]:
        where = _at(locations, ("clustering", "k-max"), ("scenario", "n-vehicles"))
        diagnostics.append(f"{where}clustering: k-max exceeds the number of vehicles")
    split = training["split"]
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) <= 0:
        where = _at(locations, ("training", "split"))
        diagnostics.append(f"{where}training.split: expected three positive fractions summing to 1")
    if "cnn" in model["families"] and model["history-len"] < 2 * model["conv-kernel"] - 1:
        where = _at(locations, ("model", "history-len"), ("model", "conv-kernel"), ("model", "families"))
        diagnostics.append(f"{where}model: history-len too short for two convolutions of conv-kernel")
    if not model["families"] or not model["horizons"]:
        where = _at(locations, ("model", "families"), ("model", "horizons"))
        diagnostics.append(f"{where}model: families and horizons must not be empty")
    if not values["evaluation"]["seeds"]:
        diagnostics.append(f"{_at(locations, ('evaluation', 'seeds'))}evaluation.seeds must not be empty")


def load_config(
    path: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    schema_path: Union[str, Path] = SCHEMA_PATH,
) -> RunConfig:
    """Merges schema defaults, an optional run file and command-line overrides.

    Raises:
        ConfigError: every problem found, each prefixed with its file and line.
    """
    schema = load_schema(schema_path)
    values = {
        section: {name: option.get("default") for name, option in options.items()}
        for section, options in schema.items()
    }
    diagnostics: List[str] = []
    locations: Locations = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError([f"{path}: no such configuration file"])
        user, locations, diagnostics = _read_user_file(path, schema)
        for section, options in user.items():
            values[section].update(options)
    for option, override in (("seed", seed), ("jobs", jobs)):
        if override is not None:
            problem = check_option(schema["run"][option], override)
            if problem:
                diagnostics.append(f"--{option}: {problem}")
            else:
                values["run"][option] = override
    if diagnostics:
        raise ConfigError(diagnostics)

    _cross_checks(values, diagnostics, locations)
    archetypes = _archetypes(values["archetypes"], diagnostics, locations)
    if diagnostics:
        raise ConfigError(diagnostics)

    run = values["run"]
    try:
        scenario = ScenarioSpec(
            n_vehicles=values["scenario"]["n-vehicles"],
            duration=float(values["scenario"]["duration"]),
            seed=run["seed"],
            sampling_interval=float(values["scenario"]["sampling-interval"]),
            marker_jitter=float(values["scenario"]["marker-jitter"]),
        )
    except ValidationError as e:
        raise ConfigError([f"scenario: {e}"]) from e

    def section(name: str, cls):
        return cls(**{
            key.replace("-", "_"): tuple(value) if isinstance(value, list) else value
            for key, value in values[name].items()
        })

    config = RunConfig(
        scenario=scenario,
        archetypes=archetypes,
        grid_spacing=values["preprocess"]["grid-spacing"],
        env=section("env", EnvConfig),
        clustering=section("clustering", ClusteringConfig),
        model=section("model", ModelConfig),
        training=section("training", TrainingConfig),
        evaluation=section("evaluation", EvaluationConfig),
        seed=run["seed"],
        jobs=run["jobs"],
        custom_styles=tuple(values["archetypes"]["styles"]),
    )
    logger.debug(f"Loaded configuration {config}")
    return config


def write_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Writes the resolved configuration as YAML."""
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(config.to_dict(), handle, sort_keys=False)
