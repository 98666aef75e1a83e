"""Exception hierarchy; the CLI maps these onto process exit codes."""

from __future__ import annotations

from typing import Any, Optional, Sequence


class ModelError(Exception):
    """Base class for every failure raised by this package."""


class DimensionError(ModelError, ValueError):
    """Array lengths, scenario counts or indices disagree with the instance."""


class DegenerateConductError(ModelError, ValueError):
    """beta_spot * (1 + delta) + cost_c fell below the singularity floor."""


class ScenarioError(ModelError, ValueError):
    """Calibration is invalid or truncated sampling ran out of retries."""


class ConfigError(ModelError, ValueError):
    """Config file failed to parse or validate."""


class ConvergenceError(ModelError, RuntimeError):
    def __init__(
        self,
        message: str,
        diagnostics: Sequence[Any] = (),
        last_iterate: Optional[Any] = None,
    ) -> None:
        super().__init__(message)
        self.diagnostics = tuple(diagnostics)
        self.last_iterate = last_iterate
