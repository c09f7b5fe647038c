from __future__ import annotations


class DVLBeamError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DVLBeamError):
    """Experiment configuration is invalid or unreadable."""


class DataError(DVLBeamError):
    """Input data could not be loaded, validated or windowed."""


class TrainingError(DVLBeamError):
    """Training was aborted."""


class ModelError(DVLBeamError):
    """A model or checkpoint does not fit the requested experiment."""


class GeometryError(DVLBeamError):
    """Beam geometry or least-squares inversion failed."""


class ShapeMismatch(DVLBeamError, ValueError):
    """Array shapes do not agree."""


# CLI exit codes; 2 stays with click for usage errors
EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_TRAINING = 5
EXIT_MODEL = 6


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the documented CLI exit code."""
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, ModelError):
        return EXIT_MODEL
    return 1
