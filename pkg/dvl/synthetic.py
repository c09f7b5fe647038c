from __future__ import annotations

import logging
from typing import Literal, Sequence

import numpy as np

from dvl.dataset import SAMPLE_PERIOD_S, Section
from dvl.geometry import Array, BeamGeometry, project_to_beams
from utils.errors import DataError
from utils.seeding import make_rng

logger = logging.getLogger("dvlbeam.synthetic")

Profile = Literal["constant", "sinusoidal-sway", "turn"]
PROFILES: tuple[str, ...] = ("constant", "sinusoidal-sway", "turn")

MAX_SPEED = 3.0        # m/s
MAX_STEP_CHANGE = 0.2  # m/s per 1 Hz sample
MIN_DURATION_S = 10

DEFAULT_CONSTANT_VELOCITY = (1.0, 0.0, 0.05)


class BadProfile(DataError):
    """Unknown synthesis profile or unusable synthesis parameters."""


def synth_trajectory(
    profile: str,
    duration_s: int,
    rng_seed: int,
    constant_velocity: Sequence[float] = DEFAULT_CONSTANT_VELOCITY,
) -> Array:
    """
    1 Hz ground-truth DVL-frame velocity series (``duration_s`` × 3).

    Output speed never exceeds 3 m/s and consecutive samples never differ by
    more than 0.2 m/s (Euclidean).
    """
    if profile not in PROFILES:
        raise BadProfile(f"unknown profile {profile!r}; expected one of {', '.join(PROFILES)}")
    if duration_s < MIN_DURATION_S:
        raise BadProfile(f"duration must be at least {MIN_DURATION_S} s, got {duration_s}")

    n = int(duration_s)
    rng = make_rng(rng_seed)
    t = np.arange(n, dtype=np.float64) * SAMPLE_PERIOD_S

    if profile == "constant":
        v0 = np.asarray(constant_velocity, dtype=np.float64)
        if v0.shape != (3,) or np.linalg.norm(v0) > MAX_SPEED:
            raise BadProfile(f"constant velocity must be a 3-vector with norm <= {MAX_SPEED} m/s")
        return np.tile(v0, (n, 1))

    if profile == "sinusoidal-sway":
        vel = _sinusoidal_sway(t, rng)
    else:
        vel = _turn(t, rng)
    return _limit(vel)


def _sinusoidal_sway(t: Array, rng: np.random.Generator) -> Array:
    # Surge cruise with slow speed oscillation, sway and heave oscillations.
    surge0 = rng.uniform(0.8, 1.6)
    amp = rng.uniform([0.05, 0.1, 0.02], [0.3, 0.5, 0.1])
    period = rng.uniform(30.0, 120.0, size=3)
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    osc = amp * np.sin(2 * np.pi * t[:, None] / period + phase)
    osc[:, 0] += surge0
    return osc


def _turn(t: Array, rng: np.random.Generator) -> Array:
    # Body-frame view of a turning AUV: sideslip and speed loss follow a
    # piecewise-constant turn rate, smoothed by a 10 s moving average.
    speed = rng.uniform(0.8, 2.0)
    n = t.shape[0]
    seg_len = int(rng.integers(40, 100))
    n_seg = -(-n // seg_len)
    rates = rng.uniform(0.01, 0.05, size=n_seg) * rng.choice([-1.0, 1.0], size=n_seg)
    rate = np.repeat(rates, seg_len)[:n]
    kernel = np.ones(10) / 10.0
    rate = np.convolve(np.pad(rate, (9, 0), mode="edge"), kernel, mode="valid")

    sideslip = -5.0 * rate
    surge_speed = speed * (1.0 - 2.0 * np.abs(rate))
    heave = rng.uniform(0.02, 0.08) * np.sin(2 * np.pi * t / rng.uniform(40.0, 120.0))
    return np.column_stack(
        [surge_speed * np.cos(sideslip), surge_speed * np.sin(sideslip), heave]
    )


def _limit(vel: Array) -> Array:
    """Clamp speed and per-step change so the smoothness contract holds exactly."""
    out = np.empty_like(vel)
    prev = None
    for i, v in enumerate(vel):
        speed = np.linalg.norm(v)
        if speed > MAX_SPEED:
            v = v * (MAX_SPEED / speed)
        if prev is not None:
            step = v - prev
            size = np.linalg.norm(step)
            if size > MAX_STEP_CHANGE:
                v = prev + step * (MAX_STEP_CHANGE / size)
        out[i] = v
        prev = v
    return out


def synth_section(
    name: str,
    profile: str,
    duration_s: int,
    rng_seed: int,
    geom: BeamGeometry,
    t0: float = 0.0,
    constant_velocity: Sequence[float] = DEFAULT_CONSTANT_VELOCITY,
) -> Section:
    """Synthetic section with exact (error-free) beam projections."""
    vel = synth_trajectory(profile, duration_s, rng_seed, constant_velocity)
    t = t0 + np.arange(vel.shape[0], dtype=np.float64) * SAMPLE_PERIOD_S
    logger.debug("Synthesised %s: profile=%s, %d s, seed=%d", name, profile, duration_s, rng_seed)
    return Section(name=name, t=t, beams=project_to_beams(geom, vel), v_true=vel)
