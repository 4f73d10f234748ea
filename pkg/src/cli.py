#!/usr/bin/env python3
# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.
"""Command-line entry point of the acceleration prediction pipeline."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import pandas as pd
import yaml

from clustering import (
    compute_features,
    label_clusters,
    read_assignments_csv,
    read_features_csv,
    recovery_agreement,
    select_k,
    write_assignments_csv,
    write_diagnostics_csv,
    write_features_csv,
)
from config import RunConfig, load_config, write_config
from constants import ARTIFACTS, EXIT_CODES, RESOLVED_CONFIG
from env_features import build_env_sequence, write_env_csv
from errors import AccelPredError, MissingArtifactError
from evaluation import (
    CellJob,
    ExperimentData,
    collect_grid,
    emit_report,
    evaluate_cell,
    plan_cells,
    read_grid_csv,
    read_sweep_csv,
    run_parallel,
    run_window_sweep,
    train_cell,
    write_grid_csv,
    write_sweep_csv,
    write_traces,
)
from predictor import (
    ManifestEntry,
    SeqModel,
    load_model,
    read_manifest,
    save_model,
    write_manifest,
)
from synth_data import generate_population, population_labels
from trajectory_core import (
    preprocess_tracks,
    read_profiles_csv,
    read_tracks_csv,
    write_profiles_csv,
    write_tracks_csv,
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ["generate", "preprocess", "features", "cluster", "train", "predict", "evaluate", "report"]


class PipelineRunner:
    """Runs pipeline stages against one output directory."""

    def __init__(self, config: RunConfig, out_dir: Path) -> None:
        self.config = config
        self.out_dir = out_dir
        self.handlers: Dict[str, Callable[[], None]] = {
            "generate": self._on_generate,
            "preprocess": self._on_preprocess,
            "features": self._on_features,
            "cluster": self._on_cluster,
            "train": self._on_train,
            "predict": self._on_predict,
            "evaluate": self._on_evaluate,
            "report": self._on_report,
            "pipeline": self._on_pipeline,
        }

    def artifact(self, producer: str, index: int = 0) -> Path:
        """Path of an artifact of a producing subcommand."""
        return self.out_dir / ARTIFACTS[producer][index]

    def require(self, producer: str, index: int = 0) -> Path:
        """Path of an upstream artifact that must already exist."""
        path = self.artifact(producer, index)
        if not path.is_file():
            raise MissingArtifactError(str(path), producer)
        return path

    def run(self, subcommand: str) -> None:
        """Echoes the resolved configuration and runs one subcommand."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_config(self.config, self.out_dir / RESOLVED_CONFIG)
        logger.info(
            f"Resolved configuration (seed {self.config.seed}):\n"
            + yaml.safe_dump(self.config.to_dict(), sort_keys=False)
        )
        self.handlers[subcommand]()

    def _on_generate(self) -> None:
        """Synthesizes trajectories and their hidden styles."""
        scenario, archetypes = self.config.scenario, self.config.archetypes
        write_tracks_csv(generate_population(scenario, archetypes), self.artifact("generate", 0))
        labels = population_labels(scenario, archetypes)
        pd.DataFrame({"vehicle_id": list(labels), "archetype": list(labels.values())}).to_csv(
            self.artifact("generate", 1), index=False, encoding="utf-8"
        )

    def _on_preprocess(self) -> None:
        """Differentiates and resamples every trajectory."""
        tracks = read_tracks_csv(self.require("generate"))
        write_profiles_csv(preprocess_tracks(tracks, self.config.grid_spacing), self.artifact("preprocess"))

    def _on_features(self) -> None:
        """Writes the latest environmental sequence and the clustering features."""
        profiles = read_profiles_csv(self.require("preprocess"))
        env = build_env_sequence(
            profiles, self.config.scenario.duration, self.config.env.window_seconds, self.config.env.min_support
        )
        write_env_csv(env, self.artifact("features", 0))
        write_features_csv([compute_features(p) for p in profiles], self.artifact("features", 1))

    def _on_cluster(self) -> None:
        """Selects the cluster count and labels every vehicle."""
        features = read_features_csv(self.require("features", 1))
        clustering = self.config.clustering
        k_max = min(clustering.k_max, len(features))
        selection = select_k(
            features,
            range(clustering.k_min, k_max + 1),
            seed=self.config.seed,
            criterion=clustering.criterion,
            restarts=clustering.restarts,
            max_iter=clustering.max_iter,
        )
        result = label_clusters(selection.result())
        write_assignments_csv(result, self.artifact("cluster", 0))
        write_diagnostics_csv(selection, self.artifact("cluster", 1))
        logger.info(f"selected k = {selection.best_k}")
        truth_path = self.artifact("generate", 1)
        if truth_path.is_file():
            truth = pd.read_csv(truth_path, dtype=str, encoding="utf-8")
            hidden = dict(zip(truth["vehicle_id"], truth["archetype"]))
            pairs = [(c, hidden[v]) for v, c in zip(result.vehicle_ids, result.assignments) if v in hidden]
            if pairs:
                agreement = recovery_agreement([c for c, _ in pairs], [h for _, h in pairs])
                logger.info(f"Agreement with generating styles: {agreement:.3f}")

    def _experiment(self) -> ExperimentData:
        profiles = read_profiles_csv(self.require("preprocess"))
        labels = read_assignments_csv(self.require("cluster", 0))
        return ExperimentData(profiles, labels, self.config)

    def _load_models(self) -> List[Tuple[CellJob, SeqModel]]:
        manifest_path = self.require("train", 0)
        return [
            (
                CellJob(entry.family, entry.driver_class, entry.horizon, entry.env, entry.seed),
                load_model(manifest_path.parent / entry.file),
            )
            for entry in read_manifest(manifest_path)
        ]

    def _on_train(self) -> None:
        """Trains every grid cell and writes the models with their manifest."""
        data = self._experiment()
        plan = plan_cells(self.config, data.classes)
        models = run_parallel(train_cell, plan, data, self.config.jobs)
        models_dir = self.artifact("train", 0).parent
        models_dir.mkdir(parents=True, exist_ok=True)
        write_config(self.config, models_dir / RESOLVED_CONFIG)
        entries = []
        for job, model in zip(plan, models):
            if model is None:
                continue
            save_model(model, models_dir / job.file_name)
            entries.append(
                ManifestEntry(
                    job.file_name, job.family, job.driver_class, job.horizon, job.env, job.seed, model.config.to_dict()
                )
            )
        write_manifest(entries, self.artifact("train", 0))
        rows = [(v, part) for part, ids in data.split.items() for v in ids]
        pd.DataFrame(sorted(rows), columns=["vehicle_id", "split"]).to_csv(
            self.artifact("train", 1), index=False, encoding="utf-8"
        )
        logger.info(f"Saved {len(entries)} of {len(plan)} models")

    def _on_predict(self) -> None:
        """Writes predicted-versus-true traces of the first seed of every cell."""
        data = self._experiment()
        first_seed = self.config.evaluation.seeds[0]
        runs = [(job, model) for job, model in self._load_models() if job.seed == first_seed]
        _, traces = collect_grid(run_parallel(evaluate_cell, runs, data, self.config.jobs))
        traces_dir = self.artifact("predict").parent
        write_traces(traces, traces_dir)
        write_config(self.config, traces_dir / RESOLVED_CONFIG)

    def _on_evaluate(self) -> None:
        """Scores every saved model and runs the environmental window sweep."""
        data = self._experiment()
        grid, _ = collect_grid(run_parallel(evaluate_cell, self._load_models(), data, self.config.jobs))
        write_grid_csv(grid, self.artifact("evaluate", 0))
        sweep = run_window_sweep(data.profiles, data.labels, self.config, jobs=self.config.jobs)
        write_sweep_csv(sweep, self.artifact("evaluate", 1))

    def _on_report(self) -> None:
        """Renders the Markdown report."""
        grid = read_grid_csv(self.require("evaluate", 0))
        sweep_path = self.artifact("evaluate", 1)
        selection_path = self.artifact("cluster", 1)
        emit_report(
            grid,
            self.out_dir,
            sweep=read_sweep_csv(sweep_path) if sweep_path.is_file() else None,
            families=self.config.model.families,
            horizons=self.config.model.horizons,
            selection=pd.read_csv(selection_path, encoding="utf-8") if selection_path.is_file() else None,
        )

    def _on_pipeline(self) -> None:
        """Runs every stage in order."""
        for subcommand in SUBCOMMANDS:
            logger.info(f"Stage {subcommand}")
            self.handlers[subcommand]()


def build_parser() -> argparse.ArgumentParser:
    """Subcommands sharing the run flags."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run file overriding config.yaml defaults")
    common.add_argument("--seed", type=int, default=None, help="root seed of every random stream")
    common.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
    common.add_argument("--jobs", type=int, default=None, help="worker processes for grid cells")
    common.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity"
    )
    parser = argparse.ArgumentParser(prog="accel-pred", description=__doc__)
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS + ["pipeline"]:
        subparsers.add_parser(name, parents=[common])
    return parser


def exit_code(error: AccelPredError) -> int:
    """Exit code of the most specific known category."""
    for cls in type(error).__mro__:
        if cls.__name__ in EXIT_CODES:
            return EXIT_CODES[cls.__name__]
    return EXIT_CODES["AccelPredError"]


def main(argv: Optional[List[str]] = None) -> int:
    """Parses arguments, runs the subcommand and maps errors to exit codes."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config, seed=args.seed, jobs=args.jobs)
        PipelineRunner(config, args.out).run(args.subcommand)
    except AccelPredError as e:
        logger.error(str(e))
        return exit_code(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
