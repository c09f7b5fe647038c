from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from dvl.geometry import N_BEAMS, Array, BeamGeometry, BeamVelocities, project_to_beams
from utils.errors import DataError, DVLBeamError, ShapeMismatch
from utils.seeding import make_rng

logger = logging.getLogger("dvlbeam.error_model")


class InvalidErrorParams(DVLBeamError, ValueError):
    """Error-model parameters violate their invariants."""


class EmptySeries(DataError):
    """A velocity series to corrupt is empty."""


def _vector(values: ArrayLike, size: int, name: str) -> Array:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise InvalidErrorParams(f"{name} must have {size} components, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidErrorParams(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ErrorParams:
    """
    Sensor error model of a unit under test::

        y = T [v ⊙ (1 + scale)] + bias + n,    n ~ N(0, noise_std² I₄)

    ``bias`` is per beam (4), ``scale`` is per DVL-frame axis (3).
    Defaults reproduce the sea-trial unit under test: zero scale factor,
    1 mm/s bias on every beam and 1 mm/s white noise.
    """

    bias: Array = field(default_factory=lambda: np.full(N_BEAMS, 0.001))
    scale: Array = field(default_factory=lambda: np.zeros(3))
    noise_std: float = 0.001
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "bias", _vector(self.bias, N_BEAMS, "bias"))
        object.__setattr__(self, "scale", _vector(self.scale, 3, "scale"))
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise InvalidErrorParams(f"noise_std must be finite and >= 0, got {self.noise_std}")
        if np.any(self.scale <= -1.0):
            raise InvalidErrorParams("scale components must be > -1")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidErrorParams(f"seed must fit in 64 bits, got {self.seed}")

    @classmethod
    def error_free(cls, seed: int = 0) -> "ErrorParams":
        return cls(bias=np.zeros(N_BEAMS), scale=np.zeros(3), noise_std=0.0, seed=seed)

    def with_seed(self, seed: int) -> "ErrorParams":
        return ErrorParams(bias=self.bias, scale=self.scale, noise_std=self.noise_std, seed=seed)


def corrupt_measurement(
    geom: BeamGeometry,
    v: ArrayLike,
    params: ErrorParams,
    noise_draw: ArrayLike,
) -> BeamVelocities:
    """Apply the error model to one velocity with an explicit noise vector."""
    noise = np.asarray(noise_draw, dtype=np.float64)
    if noise.shape != (N_BEAMS,):
        raise ShapeMismatch(f"noise_draw must have shape (4,), got {noise.shape}")
    # scale acts on the DVL-frame velocity before projection
    scaled = np.asarray(v, dtype=np.float64) * (1.0 + params.scale)
    return project_to_beams(geom, scaled) + params.bias + noise


def noise_stream(params: ErrorParams, n_samples: int) -> Array:
    """The M×4 Gaussian noise draws used by :func:`corrupt_series`."""
    rng = make_rng(params.seed)
    return rng.standard_normal((n_samples, N_BEAMS)) * params.noise_std


def corrupt_series(geom: BeamGeometry, velocities: ArrayLike, params: ErrorParams) -> Array:
    """
    Corrupt an M×3 velocity series into M×4 beam measurements.

    Noise comes from a PCG64 stream seeded with ``params.seed`` (ziggurat
    normals), so identical ``(seed, series)`` pairs give bit-identical output.
    """
    vel = np.asarray(velocities, dtype=np.float64)
    if vel.size == 0:
        raise EmptySeries("cannot corrupt an empty velocity series")
    if vel.ndim != 2 or vel.shape[1] != 3:
        raise ShapeMismatch(f"velocities must be M×3, got shape {vel.shape}")

    noise = noise_stream(params, vel.shape[0])
    beams = project_to_beams(geom, vel * (1.0 + params.scale)) + params.bias + noise
    logger.debug(
        "Corrupted %d samples (noise_std=%.3g, seed=%d)", vel.shape[0], params.noise_std, params.seed
    )
    return beams
