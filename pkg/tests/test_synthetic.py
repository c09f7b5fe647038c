import numpy as np
import pytest

from dvl.geometry import project_to_beams
from dvl.synthetic import (
    MAX_SPEED,
    MAX_STEP_CHANGE,
    PROFILES,
    BadProfile,
    synth_section,
    synth_trajectory,
)


def test_constant_profile():
    vel = synth_trajectory("constant", 100, rng_seed=0, constant_velocity=(1.0, 0.0, 0.05))
    assert vel.shape == (100, 3)
    np.testing.assert_array_equal(vel, np.tile([1.0, 0.0, 0.05], (100, 1)))


@pytest.mark.parametrize("profile", PROFILES)
@pytest.mark.parametrize("seed", [0, 1, 2**40 + 3])
def test_smooth_and_bounded(profile, seed):
    vel = synth_trajectory(profile, 400, rng_seed=seed)
    assert np.all(np.linalg.norm(vel, axis=1) <= MAX_SPEED + 1e-12)
    assert np.all(np.linalg.norm(np.diff(vel, axis=0), axis=1) <= MAX_STEP_CHANGE + 1e-12)


@pytest.mark.parametrize("profile", PROFILES)
def test_same_seed_same_series(profile):
    a = synth_trajectory(profile, 200, rng_seed=99)
    b = synth_trajectory(profile, 200, rng_seed=99)
    assert a.tobytes() == b.tobytes()


def test_seeds_differ():
    a = synth_trajectory("sinusoidal-sway", 200, rng_seed=1)
    b = synth_trajectory("sinusoidal-sway", 200, rng_seed=2)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("profile, duration", [("zigzag", 100), ("constant", 9)])
def test_bad_profile(profile, duration):
    with pytest.raises(BadProfile):
        synth_trajectory(profile, duration, rng_seed=0)


def test_section_has_exact_projections(geom):
    section = synth_section("s", "turn", 50, rng_seed=4, geom=geom, t0=100.0)
    np.testing.assert_array_equal(section.beams, project_to_beams(geom, section.v_true))
    assert section.t[0] == 100.0 and section.t[-1] == 149.0
