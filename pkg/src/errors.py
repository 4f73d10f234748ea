# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

"""Error categories raised by the acceleration prediction pipeline."""

from typing import List


class AccelPredError(Exception):
    """Base class for every pipeline error."""


class ValidationError(AccelPredError, ValueError):
    """Inputs violate a precondition (shape, length, range)."""


class DegenerateGeometryError(ValidationError):
    """Two bracketing samples share the same position."""


class CoverageError(ValidationError):
    """A window does not fit inside the covered range; callers skip the anchor."""


class NonFiniteError(AccelPredError, ArithmeticError):
    """NaN or Inf produced by a numeric operation."""

    def __init__(self, operation: str):
        super().__init__(f"non-finite values produced by {operation}")
        self.operation = operation


class ConfigError(AccelPredError):
    """The run configuration does not parse or validate."""

    def __init__(self, diagnostics: List[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(diagnostics))
        self.diagnostics = diagnostics


class MissingArtifactError(AccelPredError):
    """An upstream artifact needed by a subcommand does not exist."""

    def __init__(self, path: str, producer: str):
        super().__init__(f"missing artifact {path}; run the '{producer}' subcommand first")
        self.path = path
        self.producer = producer


class ModelFormatError(AccelPredError):
    """A serialized model file is malformed or of an unknown version."""
