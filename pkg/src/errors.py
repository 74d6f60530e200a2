"""Error types raised by the capture toolkit.

Each error carries the process exit code the command line maps it to.
"""

from typing import Optional


class TetherNetError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1


class ConfigurationError(TetherNetError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class SchemaVersionError(TetherNetError, ValueError):
    """Persisted file written with an unknown format version."""

    exit_code = 3


class WidthMismatchError(TetherNetError, ValueError):
    """Feature width or variant does not match the model."""

    exit_code = 4


class IntegrationDiverged(TetherNetError, RuntimeError):
    """Non-finite force or state component during integration."""

    exit_code = 5

    def __init__(self, body_index: int, time: float, detail: Optional[str] = None):
        self.body_index = body_index
        self.time = time
        message = f"Integration diverged at t={time:.6f} s on body {body_index}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class ScenarioError(TetherNetError, ValueError):
    """Scenario or action outside the allowed bounds."""

    exit_code = 6


class TrainingError(TetherNetError, RuntimeError):
    """Training could not proceed (non-finite loss, too little data)."""

    exit_code = 7


class MissingArtifactError(TetherNetError, FileNotFoundError):
    """An input file does not exist."""

    exit_code = 8
