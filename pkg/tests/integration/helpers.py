#!/usr/bin/env python3
# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import yaml

from constants import ARTIFACTS

logger = logging.getLogger(__name__)

# small enough to run every stage in well under a minute
TINY_RUN = {
    "scenario": {"n-vehicles": 40, "duration": 1500},
    "env": {"window-minutes": 15, "min-support": 2},
    "clustering": {"k-max": 3, "restarts": 2},
    "model": {
        "families": ["seq2seq", "rnn", "ann"],
        "history-len": 20,
        "horizons": [5, 10],
        "hidden-size": 4,
        "ann-hidden": 8,
        "conv-channels": 2,
        "conv-kernel": 3,
    },
    "training": {
        "max-steps": 4,
        "eval-every": 2,
        "batch-size": 16,
        "anchor-stride": 20,
        "max-val-windows": 32,
    },
    "evaluation": {
        "seeds": [0, 1],
        "window-minutes": [1, 15],
        "sweep-horizon": 10,
        "max-test-windows": 32,
        "trace-count": 1,
    },
}


def write_run_file(path: Path, overrides: Optional[Dict[str, Dict]] = None) -> Path:
    """Writes the tiny run configuration, optionally merging section overrides.

    Args:
        path: destination of the YAML run file
        overrides: options replacing those of `TINY_RUN`, keyed by section
    Returns:
        The path written.
    """
    sections = {name: dict(options) for name, options in TINY_RUN.items()}
    for name, options in (overrides or {}).items():
        sections.setdefault(name, {}).update(options)
    path.write_text(yaml.safe_dump(sections, sort_keys=False), encoding="utf-8")
    return path


def artifact_paths(stages: Iterable[str] = ARTIFACTS) -> List[str]:
    """Artifact names produced by the given subcommands."""
    return [name for stage in stages for name in ARTIFACTS[stage]]


def tree_contents(root: Path, skip: Iterable[str] = ()) -> Dict[str, bytes]:
    """Maps every file below `root` to its bytes, keyed by relative path."""
    skipped = set(skip)
    contents = {}
    for path in sorted(root.rglob("*")):
        relative = path.relative_to(root).as_posix()
        if path.is_file() and relative not in skipped:
            contents[relative] = path.read_bytes()
    logger.info(f"Read {len(contents)} files below {root}")
    return contents


def differing_files(left: Dict[str, bytes], right: Dict[str, bytes]) -> List[str]:
    """Relative paths that are missing on one side or differ in content."""
    return sorted(name for name in set(left) | set(right) if left.get(name) != right.get(name))
