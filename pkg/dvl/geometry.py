from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from utils.errors import GeometryError, ShapeMismatch

Array = NDArray[np.float64]

# 3-vector in the DVL sensor frame [m/s]
DVLVelocity = Array
# 4-vector, one component per acoustic beam [m/s]
BeamVelocities = Array

N_BEAMS = 4

# Smallest singular value of the active submatrix accepted by the solver
SINGULAR_TOLERANCE = 1e-10


class DegenerateGeometry(GeometryError):
    """Pitch angle outside the open interval (0°, 90°)."""


class InsufficientBeams(GeometryError):
    """Fewer than three active beams; velocity is unobservable."""


class SingularSystem(GeometryError):
    """The active beam submatrix is rank deficient."""


@dataclass(frozen=True)
class BeamGeometry:
    """
    Janus-configured four-beam transducer layout.

    Row ``i`` of ``matrix`` is the unit direction of beam ``i+1``:
    ``[cos(psi_i) sin(alpha), sin(psi_i) sin(alpha), cos(alpha)]`` with
    ``psi_i = (i-1)*90° + 45°`` (beams are 1-based in docs and CLI).
    """

    alpha: float
    yaw_angles: Array
    matrix: Array

    @property
    def alpha_deg(self) -> float:
        return math.degrees(self.alpha)


def beam_yaw_angles() -> Array:
    """Yaw of beams 1..4 in radians: 45°, 135°, 225°, 315°."""
    return np.radians(np.arange(N_BEAMS, dtype=np.float64) * 90.0 + 45.0)


def build_geometry(alpha: float) -> BeamGeometry:
    """Build the 4×3 transducer matrix for pitch angle *alpha* (radians)."""
    if not math.isfinite(alpha) or not (0.0 < alpha < math.pi / 2):
        raise DegenerateGeometry(
            f"alpha must lie strictly between 0° and 90°, got {math.degrees(alpha):.6g}°"
        )

    yaw = beam_yaw_angles()
    sa, ca = math.sin(alpha), math.cos(alpha)
    matrix = np.column_stack([np.cos(yaw) * sa, np.sin(yaw) * sa, np.full(N_BEAMS, ca)])

    yaw.setflags(write=False)
    matrix.setflags(write=False)
    return BeamGeometry(alpha=float(alpha), yaw_angles=yaw, matrix=matrix)


def build_geometry_deg(alpha_deg: float) -> BeamGeometry:
    """Degree-valued entry point used at the config/CLI boundary."""
    return build_geometry(math.radians(alpha_deg))


def _as_finite(values: ArrayLike, last_dim: int, what: str) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != last_dim:
        raise ShapeMismatch(f"{what} must have trailing dimension {last_dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


def project_to_beams(geom: BeamGeometry, v: ArrayLike) -> BeamVelocities:
    """
    ``v_beam = T · v`` for a single velocity (shape 3) or a series (shape M×3).
    """
    vel = _as_finite(v, 3, "velocity")
    return vel @ geom.matrix.T


def _active_indices(active_mask: Sequence[bool] | None) -> NDArray[np.intp]:
    if active_mask is None:
        return np.arange(N_BEAMS)
    mask = np.asarray(active_mask, dtype=bool)
    if mask.shape != (N_BEAMS,):
        raise ShapeMismatch(f"active_mask must have {N_BEAMS} entries, got shape {mask.shape}")
    active = np.flatnonzero(mask)
    if active.size < 3:
        raise InsufficientBeams(
            f"{active.size} active beam(s); at least 3 are needed to recover velocity"
        )
    return active


def _active_system(geom: BeamGeometry, active: NDArray[np.intp]) -> Array:
    sub = geom.matrix[active]
    sv = np.linalg.svd(sub, compute_uv=False)
    if sv.min() < SINGULAR_TOLERANCE:
        raise SingularSystem(
            f"beam submatrix for beams {[int(i) + 1 for i in active]} is rank deficient "
            f"(smallest singular value {sv.min():.3e})"
        )
    return sub


def solve_velocity(
    geom: BeamGeometry,
    beams: ArrayLike,
    active_mask: Sequence[bool] | None = None,
) -> DVLVelocity:
    """
    Least-squares DVL velocity from the active beams.

    Contract: ``argmin_v ||y_active - T_active v||²`` i.e.
    ``(TᵀT)⁻¹ Tᵀ y`` on the active rows. Solved with an orthogonal (QR)
    factorization of the active submatrix; with exactly three active beams
    this is the exact linear solve.
    """
    y = _as_finite(beams, N_BEAMS, "beams")
    if y.ndim != 1:
        raise ShapeMismatch(f"beams must be a 4-vector, got shape {y.shape}")
    active = _active_indices(active_mask)
    sub = _active_system(geom, active)

    q, r = np.linalg.qr(sub)
    return np.linalg.solve(r, q.T @ y[active])


def solve_velocities(
    geom: BeamGeometry,
    beams: ArrayLike,
    active_mask: Sequence[bool] | None = None,
) -> Array:
    """Row-wise :func:`solve_velocity` over an M×4 beam series (shared mask)."""
    y = _as_finite(beams, N_BEAMS, "beams")
    if y.ndim != 2:
        raise ShapeMismatch(f"beams must be an M×4 series, got shape {y.shape}")
    active = _active_indices(active_mask)
    sub = _active_system(geom, active)

    q, r = np.linalg.qr(sub)
    return np.linalg.solve(r, q.T @ y[:, active].T).T


def beam_residual(geom: BeamGeometry, beams: ArrayLike, v: ArrayLike) -> float:
    """Euclidean residual ``||y - T v||`` over all four beams."""
    y = _as_finite(beams, N_BEAMS, "beams")
    return float(np.linalg.norm(y - project_to_beams(geom, v)))
