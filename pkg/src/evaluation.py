# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Error metrics, the comparison grid, the environmental window sweep and reports."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import RunConfig
from constants import (
    ARCHETYPES,
    MODEL_FAMILIES,
    REFERENCE_SEQ2SEQ_MAE,
    REFERENCE_WINDOW_MAE,
    UNCLUSTERED,
)
from env_features import EnvSequence, build_vehicle_env
from errors import AccelPredError, ValidationError
from model_core import named_rng
from predictor import (
    NetworkConfig,
    SeqModel,
    WindowSet,
    build_windows,
    stratified_split,
    train,
)
from trajectory_core import SpatialProfile

logger = logging.getLogger(__name__)

GRID_COLUMNS = [
    "model",
    "class",
    "horizon_m",
    "env",
    "seed_count",
    "mae_mean",
    "mae_std",
    "rmse_mean",
    "rmse_std",
]
SWEEP_COLUMNS = ["window_min", "seed_count", "mae_mean", "mae_std", "rmse_mean", "rmse_std"]
TRACE_COLUMNS = ["vehicle_id", "anchor_m", "offset_m", "y_true", "y_pred"]
FLOAT_FORMAT = "%.17g"


def _paired(y_true, y_pred) -> Tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValidationError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValidationError("no values to score")
    return y_true, y_pred


def mae(y_true, y_pred) -> float:
    """Mean absolute error."""
    y_true, y_pred = _paired(y_true, y_pred)
    return float(np.mean(np.abs(y_pred - y_true)))


def rmse(y_true, y_pred) -> float:
    """Root mean squared error."""
    y_true, y_pred = _paired(y_true, y_pred)
    return float(np.sqrt(np.mean((y_pred - y_true) ** 2)))


@dataclass(frozen=True)
class MetricReport:
    """Scores of one model on one set of windows, with its condition tags."""

    mae: float
    rmse: float
    n_samples: int
    family: str = ""
    driver_class: str = ""
    horizon: int = 0
    env: bool = False
    seed: int = 0


class CellKey(NamedTuple):
    """Conditions of one grid cell."""

    family: str
    driver_class: str
    horizon: int
    env: bool


@dataclass(frozen=True)
class CellStats:
    """Seed-aggregated scores; deviations are population standard deviations."""

    seed_count: int
    mae_mean: float
    mae_std: float
    rmse_mean: float
    rmse_std: float

    @classmethod
    def from_reports(cls, reports: Sequence[MetricReport]) -> "CellStats":
        """Mean and deviation over per-seed reports."""
        if not reports:
            raise ValidationError("cannot aggregate an empty set of reports")
        maes = np.array([r.mae for r in reports])
        rmses = np.array([r.rmse for r in reports])
        return cls(
            seed_count=len(reports),
            mae_mean=float(np.mean(maes)),
            mae_std=float(np.std(maes)),
            rmse_mean=float(np.mean(rmses)),
            rmse_std=float(np.std(rmses)),
        )


@dataclass
class ExperimentGrid:
    """Per-cell aggregated scores of the comparison experiments."""

    cells: Dict[CellKey, CellStats] = field(default_factory=dict)

    def add(self, key: CellKey, reports: Sequence[MetricReport]) -> None:
        """Aggregates the per-seed reports of a cell."""
        self.cells[key] = CellStats.from_reports(reports)

    def get(self, family: str, driver_class: str, horizon: int, env: bool) -> Optional[CellStats]:
        """Stats of a cell, None when absent."""
        return self.cells.get(CellKey(family, driver_class, horizon, env))

    def __len__(self) -> int:
        return len(self.cells)

    def to_frame(self) -> pd.DataFrame:
        """One row per populated cell, in the report CSV schema."""
        rows = [
            [
                key.family,
                key.driver_class,
                key.horizon,
                "Y" if key.env else "N",
                stats.seed_count,
                stats.mae_mean,
                stats.mae_std,
                stats.rmse_mean,
                stats.rmse_std,
            ]
            for key, stats in sorted(self.cells.items(), key=lambda kv: _cell_order(kv[0]))
        ]
        return pd.DataFrame(rows, columns=GRID_COLUMNS)


def _family_order(family: str):
    return (MODEL_FAMILIES.index(family) if family in MODEL_FAMILIES else len(MODEL_FAMILIES), family)


def _cell_order(key: CellKey):
    return (_family_order(key.family), _class_order(key.driver_class), key.horizon, not key.env)


def _class_order(label: str):
    base, _, part = label.partition(":")
    rank = ARCHETYPES.index(base) if base in ARCHETYPES else len(ARCHETYPES)
    return (base == UNCLUSTERED, rank, base, part)


def write_grid_csv(grid: ExperimentGrid, path: Union[str, Path]) -> None:
    """Writes the grid CSV with round-trip float precision."""
    grid.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")


def read_grid_csv(path: Union[str, Path]) -> ExperimentGrid:
    """Reads a grid written by `write_grid_csv`."""
    frame = pd.read_csv(path, dtype={"model": str, "class": str, "env": str}, encoding="utf-8")
    missing = [c for c in GRID_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    grid = ExperimentGrid()
    for row in frame.to_dict("records"):
        key = CellKey(row["model"], row["class"], int(row["horizon_m"]), row["env"] == "Y")
        grid.cells[key] = CellStats(
            int(row["seed_count"]),
            float(row["mae_mean"]),
            float(row["mae_std"]),
            float(row["rmse_mean"]),
            float(row["rmse_std"]),
        )
    return grid


@dataclass(frozen=True)
class Trace:
    """Predicted and true accelerations of one window."""

    vehicle_id: str
    anchor: int
    y_true: np.ndarray
    y_pred: np.ndarray


def evaluate_model(
    model: SeqModel,
    windows: WindowSet,
    max_windows: int = 0,
    sample_seed: int = 0,
    trace_count: int = 0,
) -> Tuple[MetricReport, List[Trace]]:
    """Per-sample MAE and RMSE over test windows, plus evenly spaced example traces.

    Raises:
        ValidationError: no windows to score.
    """
    if len(windows) == 0:
        raise ValidationError("no test windows to evaluate")
    indices = np.arange(len(windows))
    if 0 < max_windows < len(windows):
        indices = np.sort(named_rng(sample_seed, "test").choice(len(windows), max_windows, replace=False))
    history, env, target = windows.materialize(indices)
    pred = model.predict_windows(history, env if model.config.env_enabled else None)
    config = model.config
    report = MetricReport(
        mae=mae(target, pred),
        rmse=rmse(target, pred),
        n_samples=int(target.size),
        family=config.family,
        horizon=config.horizon,
        env=config.env_enabled,
        seed=model.seed,
    )
    traces = []
    if trace_count > 0:
        ids = windows.vehicle_ids
        anchors = windows.anchors
        for n in np.unique(np.linspace(0, len(indices) - 1, trace_count).astype(int)):
            i = indices[n]
            traces.append(Trace(ids[i], int(anchors[i]), target[n].copy(), pred[n].copy()))
    return report, traces


class CellJob(NamedTuple):
    """One training run of the grid."""

    family: str
    driver_class: str
    horizon: int
    env: bool
    seed: int

    @property
    def key(self) -> CellKey:
        """Grid cell the run contributes to."""
        return CellKey(self.family, self.driver_class, self.horizon, self.env)

    @property
    def file_name(self) -> str:
        """Model file name."""
        return f"{self.family}_{self.driver_class}_h{self.horizon}_{'Y' if self.env else 'N'}_s{self.seed}.bin"


class ExperimentData:
    """Profiles, class labels, the vehicle split and environmental sequences of a run."""

    def __init__(
        self,
        profiles: Sequence[SpatialProfile],
        labels: Dict[str, str],
        config: RunConfig,
        envs: Optional[Dict[str, EnvSequence]] = None,
    ):
        self.profiles = [p for p in profiles if p.vehicle_id in labels]
        self.labels = labels
        self.config = config
        self.split = stratified_split(
            {p.vehicle_id: labels[p.vehicle_id] for p in self.profiles}, config.training.split, config.seed
        )
        if envs is None:
            envs = build_vehicle_env(self.profiles, config.env.window_seconds, config.env.min_support)
        self.envs = envs
        self._windows: Dict[int, WindowSet] = {}

    @property
    def classes(self) -> List[str]:
        """Class labels, styles first."""
        return sorted(set(self.labels.values()), key=_class_order)

    def windows(self, horizon: int) -> WindowSet:
        """All windows of a horizon, built once."""
        if horizon not in self._windows:
            self._windows[horizon] = build_windows(
                self.profiles,
                self.config.model.history_len,
                horizon,
                self.envs,
                self.config.env.span,
                self.config.training.anchor_stride,
            )
        return self._windows[horizon]

    def members(self, part: str, driver_class: str = UNCLUSTERED) -> List[str]:
        """Vehicles of a split part, restricted to a class unless pooled."""
        ids = self.split[part]
        if driver_class == UNCLUSTERED:
            return ids
        return [v for v in ids if self.labels[v] == driver_class]

    def network_config(self, family: str, horizon: int, env: bool) -> NetworkConfig:
        """Architecture of a grid cell."""
        model = self.config.model
        return NetworkConfig(
            family=family,
            history_len=model.history_len,
            horizon=horizon,
            env_enabled=env,
            env_span=self.config.env.span,
            align_width=model.align_width,
            hidden_size=model.hidden_size,
            dropout=model.dropout,
            teacher_forcing=model.teacher_forcing,
            conv_channels=model.conv_channels,
            conv_kernel=model.conv_kernel,
            ann_hidden=model.ann_hidden,
        )


def plan_cells(config: RunConfig, classes: Sequence[str]) -> List[CellJob]:
    """Every (family, class, horizon, env, seed) training run, pooled class included."""
    return [
        CellJob(family, driver_class, horizon, env, seed)
        for family in config.model.families
        for driver_class in list(classes) + [UNCLUSTERED]
        for horizon in config.model.horizons
        for env in (True, False)
        for seed in config.evaluation.seeds
    ]


_WORKER_DATA: Optional[ExperimentData] = None


def _install(data: ExperimentData) -> None:
    global _WORKER_DATA
    _WORKER_DATA = data


def run_parallel(function: Callable, items: Sequence, data: ExperimentData, jobs: int = 1) -> List:
    """Applies `function` to every item with `data` installed, results in item order."""
    if jobs <= 1 or len(items) <= 1:
        _install(data)
        return [function(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_install, initargs=(data,)) as executor:
        return list(executor.map(function, items))


def train_cell(job: CellJob) -> Optional[SeqModel]:
    """Trains one grid run on the installed data; None when the cell cannot be trained."""
    data = _WORKER_DATA
    windows = data.windows(job.horizon)
    try:
        return train(
            windows.for_vehicles(data.members("train", job.driver_class)),
            windows.for_vehicles(data.members("validation", job.driver_class)),
            data.network_config(job.family, job.horizon, job.env),
            data.config.training,
            seed=job.seed,
        )
    except AccelPredError as e:
        logger.warning(f"Cell {job} not trained: {e}")
        return None


def evaluate_cell(item: Tuple[CellJob, SeqModel]) -> List[Tuple[CellKey, MetricReport, List[Trace]]]:
    """Scores a trained run on its test vehicles; pooled runs also per class."""
    job, model = item
    data = _WORKER_DATA
    windows = data.windows(job.horizon)
    targets = [job.driver_class]
    if job.driver_class == UNCLUSTERED:
        targets += [f"{UNCLUSTERED}:{c}" for c in data.classes]
    results = []
    for target in targets:
        members = data.members("test", target.partition(":")[2] or target)
        try:
            report, traces = evaluate_model(
                model,
                windows.for_vehicles(members),
                data.config.evaluation.max_test_windows,
                data.config.seed,
                data.config.evaluation.trace_count if job.seed == data.config.evaluation.seeds[0] else 0,
            )
        except AccelPredError as e:
            logger.warning(f"Cell {job} not scored on {target}: {e}")
            continue
        report = replace(report, driver_class=target)
        results.append((CellKey(job.family, target, job.horizon, job.env), report, traces))
    return results


def collect_grid(
    results: Sequence[List[Tuple[CellKey, MetricReport, List[Trace]]]],
) -> Tuple[ExperimentGrid, Dict[CellKey, List[Trace]]]:
    """Groups per-run results into seed-aggregated cells and per-cell traces."""
    reports: Dict[CellKey, List[MetricReport]] = {}
    traces: Dict[CellKey, List[Trace]] = {}
    for run in results:
        for key, report, run_traces in run:
            reports.setdefault(key, []).append(report)
            if run_traces:
                traces.setdefault(key, []).extend(run_traces)
    grid = ExperimentGrid()
    for key in sorted(reports, key=_cell_order):
        grid.add(key, reports[key])
        stats = grid.cells[key]
        logger.info(
            f"{key.family} {key.driver_class} {key.horizon} m env {'Y' if key.env else 'N'}: "
            f"MAE {stats.mae_mean:.4f} ± {stats.mae_std:.4f} over {stats.seed_count} seeds"
        )
    return grid, traces


def run_comparison_grid(
    data: ExperimentData, jobs: int = 1
) -> Tuple[ExperimentGrid, Dict[CellKey, List[Trace]], Dict[CellJob, SeqModel]]:
    """Trains and scores every cell of the grid; cells that fail are left absent."""
    plan = plan_cells(data.config, data.classes)
    logger.info(f"Training {len(plan)} models with {jobs} worker(s)")
    models = dict(zip(plan, run_parallel(train_cell, plan, data, jobs)))
    trained = [(job, model) for job, model in models.items() if model is not None]
    grid, traces = collect_grid(run_parallel(evaluate_cell, trained, data, jobs))
    return grid, traces, {job: model for job, model in trained}


def _sweep_run(seed: int) -> Optional[MetricReport]:
    data = _WORKER_DATA
    horizon = data.config.evaluation.sweep_horizon
    windows = data.windows(horizon)
    try:
        model = train(
            windows.for_vehicles(data.members("train")),
            windows.for_vehicles(data.members("validation")),
            data.network_config("seq2seq", horizon, True),
            data.config.training,
            seed=seed,
        )
        report, _ = evaluate_model(
            model,
            windows.for_vehicles(data.members("test")),
            data.config.evaluation.max_test_windows,
            data.config.seed,
        )
    except AccelPredError as e:
        logger.warning(f"Window sweep run with seed {seed} failed: {e}")
        return None
    return report


def run_window_sweep(
    profiles: Sequence[SpatialProfile],
    labels: Dict[str, str],
    config: RunConfig,
    window_minutes: Optional[Sequence[float]] = None,
    jobs: int = 1,
) -> Dict[float, CellStats]:
    """Pooled Seq2Seq with environmental input, retrained for every window length.

    Raises:
        ValidationError: a window is not shorter than the recording.
    """
    window_minutes = list(window_minutes or config.evaluation.window_minutes)
    longest = max(window_minutes) * 60.0
    if longest >= config.scenario.duration:
        raise ValidationError(
            f"recording of {config.scenario.duration:.0f} s is too short for a {longest:.0f} s window"
        )
    table = {}
    for minutes in window_minutes:
        data = ExperimentData(profiles, labels, replace(config, env=replace(config.env, window_minutes=minutes)))
        reports = [r for r in run_parallel(_sweep_run, list(config.evaluation.seeds), data, jobs) if r]
        if not reports:
            logger.warning(f"Window {minutes:g} min left out: no run could be trained")
            continue
        table[float(minutes)] = CellStats.from_reports(reports)
        logger.info(f"Window {minutes:g} min: MAE {table[float(minutes)].mae_mean:.4f}")
    return table


def write_sweep_csv(table: Dict[float, CellStats], path: Union[str, Path]) -> None:
    """Writes one row per window length."""
    rows = [
        [minutes, s.seed_count, s.mae_mean, s.mae_std, s.rmse_mean, s.rmse_std]
        for minutes, s in sorted(table.items())
    ]
    pd.DataFrame(rows, columns=SWEEP_COLUMNS).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8"
    )


def read_sweep_csv(path: Union[str, Path]) -> Dict[float, CellStats]:
    """Reads a table written by `write_sweep_csv`."""
    frame = pd.read_csv(path, encoding="utf-8")
    return {
        float(row.window_min): CellStats(
            int(row.seed_count), row.mae_mean, row.mae_std, row.rmse_mean, row.rmse_std
        )
        for row in frame.itertuples(index=False)
    }


def write_traces(traces: Dict[CellKey, List[Trace]], directory: Union[str, Path]) -> Path:
    """Writes one trace CSV per condition plus an index; returns the index path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for key in sorted(traces, key=_cell_order):
        name = f"{key.family}_{key.driver_class.replace(':', '-')}_h{key.horizon}_{'Y' if key.env else 'N'}.csv"
        rows = [
            [trace.vehicle_id, trace.anchor, offset + 1, truth, pred]
            for trace in traces[key]
            for offset, (truth, pred) in enumerate(zip(trace.y_true, trace.y_pred))
        ]
        pd.DataFrame(rows, columns=TRACE_COLUMNS).to_csv(
            directory / name, index=False, float_format=FLOAT_FORMAT, encoding="utf-8"
        )
        index.append([name, key.family, key.driver_class, key.horizon, "Y" if key.env else "N"])
    index_path = directory / "index.csv"
    pd.DataFrame(index, columns=["file", "model", "class", "horizon_m", "env"]).to_csv(
        index_path, index=False, encoding="utf-8"
    )
    return index_path


class CheckResult(NamedTuple):
    """Outcome of one directional comparison; `passed` is None when cells are missing."""

    name: str
    passed: Optional[bool]
    detail: str


def _mean_mae(grid: ExperimentGrid, family: str, driver_class: str, horizon: int, env: bool):
    stats = grid.get(family, driver_class, horizon, env)
    return None if stats is None else stats.mae_mean


def _grid_axes(grid: ExperimentGrid):
    families = sorted({k.family for k in grid.cells}, key=_family_order)
    classes = sorted({k.driver_class for k in grid.cells if ":" not in k.driver_class}, key=_class_order)
    horizons = sorted({k.horizon for k in grid.cells})
    return families, classes, horizons


def directional_checks(
    grid: ExperimentGrid, sweep: Optional[Dict[float, CellStats]] = None
) -> List[CheckResult]:
    """Horizon degradation, environmental benefit, clustering benefit and window sweep."""
    families, classes, horizons = _grid_axes(grid)
    checks = []

    for family in families:
        violations, compared = [], 0
        for driver_class in classes:
            for env in (True, False):
                values = [_mean_mae(grid, family, driver_class, h, env) for h in horizons]
                values = [v for v in values if v is not None]
                if len(values) < 2:
                    continue
                compared += 1
                if any(b < a for a, b in zip(values, values[1:])):
                    violations.append(f"{driver_class}/{'Y' if env else 'N'}")
        passed = None if not compared else not violations
        detail = f"{compared} series compared" + (f"; decreasing: {', '.join(violations)}" if violations else "")
        checks.append(CheckResult(f"horizon degradation ({family})", passed, detail))

    gains, losses = [], []
    for driver_class in classes:
        for horizon in horizons:
            with_env = _mean_mae(grid, "seq2seq", driver_class, horizon, True)
            without = _mean_mae(grid, "seq2seq", driver_class, horizon, False)
            if with_env is None or without is None:
                continue
            gains.append((without - with_env) / without * 100.0 if without > 0 else 0.0)
            if with_env > without:
                losses.append(f"{driver_class}/{horizon} m")
    detail = f"mean improvement {np.mean(gains):.1f}%" if gains else "no paired cells"
    if losses:
        detail += f"; worse with env: {', '.join(losses)}"
    checks.append(CheckResult("environmental input (seq2seq)", None if not gains else not losses, detail))

    per_horizon = []
    for horizon in horizons:
        clustered, pooled = [], []
        for driver_class in classes:
            if driver_class == UNCLUSTERED:
                continue
            own = _mean_mae(grid, "seq2seq", driver_class, horizon, True)
            shared = _mean_mae(grid, "seq2seq", f"{UNCLUSTERED}:{driver_class}", horizon, True)
            if own is not None and shared is not None:
                clustered.append(own)
                pooled.append(shared)
        if clustered:
            per_horizon.append((horizon, float(np.mean(clustered)), float(np.mean(pooled))))
    if per_horizon:
        passed = all(c < p for _, c, p in per_horizon)
        detail = "; ".join(f"{h} m: {(p - c) / p * 100.0 if p > 0 else 0.0:.1f}%" for h, c, p in per_horizon)
    else:
        passed, detail = None, "no paired cells"
    checks.append(CheckResult("clustering benefit (seq2seq)", passed, detail))

    if sweep and 1.0 in sweep and 15.0 in sweep:
        short, standard = sweep[1.0].mae_mean, sweep[15.0].mae_mean
        checks.append(
            CheckResult("window sweep (15 min vs 1 min)", standard <= short, f"{standard:.4f} vs {short:.4f}")
        )
    return checks


def _fmt(value: Optional[float]) -> str:
    return "" if value is None or math.isnan(value) else f"{value:.4f}"


def markdown_tables(
    grid: ExperimentGrid,
    families: Sequence[str] = MODEL_FAMILIES,
    horizons: Sequence[int] = (10, 30, 50),
) -> str:
    """One table per family: classes down, horizon x metric x env across."""
    columns = [f"{h}m {metric} {env}" for h in horizons for metric in ("MAE", "RMSE") for env in ("Y", "N")]
    _, classes, _ = _grid_axes(grid)
    pooled_parts = sorted({k.driver_class for k in grid.cells if ":" in k.driver_class}, key=_class_order)
    lines = []
    for family in families:
        lines += [f"### {family}", "", "| Class | " + " | ".join(columns) + " |", "|---" * (len(columns) + 1) + "|"]
        for driver_class in classes + pooled_parts:
            cells = []
            for h in horizons:
                for metric in ("mae_mean", "rmse_mean"):
                    for env in (True, False):
                        stats = grid.get(family, driver_class, h, env)
                        cells.append(_fmt(None if stats is None else getattr(stats, metric)))
            if any(cells):
                lines.append(f"| {driver_class} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def emit_report(
    grid: ExperimentGrid,
    out_dir: Union[str, Path],
    sweep: Optional[Dict[float, CellStats]] = None,
    families: Sequence[str] = MODEL_FAMILIES,
    horizons: Sequence[int] = (10, 30, 50),
    selection: Optional[pd.DataFrame] = None,
) -> Path:
    """Writes grid.csv and report.md; returns the Markdown path."""
    out_dir = Path(out_dir)
    write_grid_csv(grid, out_dir / "grid.csv")
    lines = ["# Acceleration prediction report", ""]
    if selection is not None and len(selection):
        lines += [
            "## Cluster count selection",
            "",
            "| k | L | ln L' | AIC | BIC |",
            "|---|---|---|---|---|",
            *[
                f"| {int(r.k)} | {r.L:.4f} | {r.ln_Lprime:.4f} | {r.aic:.3f} | {r.bic:.3f} |"
                for r in selection.itertuples(index=False)
            ],
            "",
        ]
    lines += ["## Prediction error by cell (mean over seeds, m/s²)", "", markdown_tables(grid, families, horizons)]
    if sweep:
        lines += [
            "## Environmental window length",
            "",
            "| Window (min) | MAE | RMSE | Field-study MAE |",
            "|---|---|---|---|",
            *[
                f"| {m:g} | {s.mae_mean:.4f} | {s.rmse_mean:.4f} | {_fmt(REFERENCE_WINDOW_MAE.get(int(m)))} |"
                for m, s in sorted(sweep.items())
            ],
            "",
        ]
    reference = [
        f"| {c} | {h} | {_fmt(_mean_mae(grid, 'seq2seq', c, h, True))} | {REFERENCE_SEQ2SEQ_MAE[c][h]:.4f} |"
        for c in ARCHETYPES
        for h in sorted(REFERENCE_SEQ2SEQ_MAE[c])
    ]
    lines += [
        "## Seq2Seq with environmental input beside field-study values",
        "",
        "| Class | Horizon (m) | MAE | Field-study MAE |",
        "|---|---|---|---|",
        *reference,
        "",
        "## Directional checks",
        "",
        "| Check | Result | Detail |",
        "|---|---|---|",
        *[
            f"| {c.name} | {'n/a' if c.passed is None else ('pass' if c.passed else 'fail')} | {c.detail} |"
            for c in directional_checks(grid, sweep)
        ],
        "",
    ]
    path = out_dir / "report.md"
    path.write_text("\n".join(lines), encoding="utf-8")
    return path
