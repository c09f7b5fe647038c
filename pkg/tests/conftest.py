from __future__ import annotations

import logging
import textwrap
from pathlib import Path

import numpy as np
import pytest

from dvl.dataset import Section
from dvl.geometry import build_geometry_deg, project_to_beams
from utils.logger import ROOT_LOGGER


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    root = logging.getLogger(ROOT_LOGGER)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()


@pytest.fixture
def geom():
    return build_geometry_deg(20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_section(name: str, velocities, geom, t0: float = 0.0) -> Section:
    vel = np.asarray(velocities, dtype=np.float64)
    t = t0 + np.arange(vel.shape[0], dtype=np.float64)
    return Section(name=name, t=t, beams=project_to_beams(geom, vel), v_true=vel)


@pytest.fixture
def small_config(tmp_path: Path) -> Path:
    """A fast synthetic experiment: tiny networks, a few epochs, short sections."""
    path = tmp_path / "small.toml"
    path.write_text(
        textwrap.dedent(
            f"""
            seed = 7
            output_dir = "{(tmp_path / 'run').as_posix()}"

            [window]
            length = 3
            missing_beams = [3, 4]

            [dataset]
            source = "synthetic"

            [dataset.synthetic]
            profile = "sinusoidal-sway"
            duration_s = 40
            train_sections = 2
            test_sections = 1

            [libeamsnet]
            dense_widths = [8]

            [libeamsnet.train]
            epochs = 3
            batch_size = 8

            [missbeamnet]
            hidden_size = 6

            [missbeamnet.train]
            epochs = 3
            batch_size = 8
            """
        ),
        encoding="utf-8",
    )
    return path
