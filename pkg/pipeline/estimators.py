from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from dvl.dataset import WindowBatch, WindowSample, describe_mask, validate_mask
from dvl.geometry import N_BEAMS, Array, BeamVelocities
from neural.checkpoint import CheckpointHeader, load_checkpoint, save_checkpoint
from neural.model import Network
from neural.networks import LiBeamsNet, MissBeamNet
from utils.errors import ModelError, ShapeMismatch

logger = logging.getLogger("dvlbeam.estimators")

ESTIMATOR_TAGS: tuple[str, ...] = ("average", "libeamsnet", "missbeamnet")
NEURAL_TAGS: tuple[str, ...] = ("libeamsnet", "missbeamnet")

DISPLAY_NAMES = {
    "libeamsnet": "LiBeamsNet",
    "missbeamnet": "MissBeamNet",
    "average": "Average",
    "oracle": "Oracle",
}

# floor of a fitted beam scale, m/s
MIN_BEAM_SCALE = 1e-6


class ModelMismatch(ModelError):
    """A model does not fit the sample's window length or missing-beam mask."""


@dataclass(frozen=True)
class BeamScaling:
    """
    Window-relative standardisation of beam velocities.

    Every beam is taken relative to its mean over the past window and divided
    by a per-beam scale fitted on the training set. Networks consume and
    produce values in these units; a zero output maps back to the window mean.
    """

    scale: Array  # (4,)

    def __post_init__(self) -> None:
        scale = np.array(self.scale, dtype=np.float64)
        if scale.shape != (N_BEAMS,) or not np.all(np.isfinite(scale)) or np.any(scale <= 0):
            raise ShapeMismatch(f"beam scale must be {N_BEAMS} positive finite values, got {self.scale}")
        scale.setflags(write=False)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def fit(cls, batch: WindowBatch) -> "BeamScaling":
        """Spread of every beam around its past-window mean over *batch*."""
        spread = (batch.target_all - batch.past.mean(axis=1)).std(axis=0)
        spread = np.where(np.isfinite(spread), spread, 1.0)
        return cls(scale=np.maximum(spread, MIN_BEAM_SCALE))

    def inputs(self, past: Array, available: Array, missing_mask: Sequence[bool]) -> tuple[Array, Array]:
        keep = ~np.array(missing_mask)
        ref = past.mean(axis=1)
        return (past - ref[:, None, :]) / self.scale, (available - ref[:, keep]) / self.scale[keep]

    def targets(self, past: Array, targets: Array, columns: Array) -> Array:
        return (targets - past.mean(axis=1)[:, columns]) / self.scale[columns]

    def outputs(self, past: Array, scaled: Array, columns: Array) -> Array:
        return scaled * self.scale[columns] + past.mean(axis=1)[:, columns]

    def to_header(self) -> dict[str, list[float]]:
        return {"beam_scale": [float(x) for x in self.scale]}

    @classmethod
    def from_header(cls, normalization: dict[str, list[float]]) -> "BeamScaling | None":
        if not normalization:
            return None
        if set(normalization) != {"beam_scale"}:
            raise ModelMismatch(f"unknown normalization entries {sorted(normalization)}")
        return cls(scale=np.asarray(normalization["beam_scale"], dtype=np.float64))


@dataclass
class Estimator:
    """
    A missing-beam strategy bound to the mask (and window) it was built for.

    A neural estimator without *scaling* feeds raw beam velocities to its
    network.
    """

    tag: str
    missing_mask: tuple[bool, ...]
    window: int
    network: Network | None = None
    scaling: BeamScaling | None = None

    def __post_init__(self) -> None:
        if self.tag not in ESTIMATOR_TAGS:
            raise ValueError(f"unknown estimator {self.tag!r}")
        self.missing_mask = validate_mask(self.missing_mask)
        if (self.tag in NEURAL_TAGS) != (self.network is not None):
            raise ValueError(f"{self.tag}: neural estimators need a network, the baseline none")

    @property
    def name(self) -> str:
        return DISPLAY_NAMES[self.tag]

    @property
    def n_missing(self) -> int:
        return sum(self.missing_mask)

    @property
    def output_columns(self) -> Array:
        """Beams the network regresses: all four for LiBeamsNet, the missing ones otherwise."""
        if self.tag == "libeamsnet":
            return np.ones(N_BEAMS, dtype=bool)
        return np.array(self.missing_mask)

    def check_compatible(self, missing_mask: Sequence[bool], window: int) -> None:
        if tuple(missing_mask) != self.missing_mask:
            raise ModelMismatch(
                f"{self.name} was built for missing beams {describe_mask(self.missing_mask)}, "
                f"data has {describe_mask(missing_mask)}"
            )
        if window != self.window:
            raise ModelMismatch(f"{self.name} was built for window {self.window}, data has {window}")

    def network_inputs(self, past: Array, available: Array) -> tuple[Array, Array]:
        if self.scaling is None:
            return past, available
        return self.scaling.inputs(past, available, self.missing_mask)

    def network_targets(self, past: Array, targets: Array) -> Array:
        if self.scaling is None:
            return targets
        return self.scaling.targets(past, targets, self.output_columns)

    def infer(self, past: Array, available: Array) -> Array:
        """Inference-mode network output in m/s, (B, 4) or (B, n_missing)."""
        out = self.network.predict(*self.network_inputs(past, available))
        if self.scaling is None:
            return out
        return self.scaling.outputs(past, out, self.output_columns)


# ----------------------------------------------------------------------
# Per-sample strategies
# ----------------------------------------------------------------------

def average_predict(sample: WindowSample) -> Array:
    """Mean of the N past values of each missing beam."""
    missing = np.array(sample.missing_mask)
    return sample.past[:, missing].mean(axis=0)


def _single(sample: WindowSample) -> tuple[Array, Array]:
    return sample.past[None], sample.current_available[None]


def libeamsnet_forward(model: Estimator, sample: WindowSample) -> BeamVelocities:
    """Full four-beam estimate of the CNN regressor (inference mode)."""
    if model.tag != "libeamsnet":
        raise ModelMismatch(f"expected a LiBeamsNet model, got {model.name}")
    model.check_compatible(sample.missing_mask, sample.past.shape[0])
    return model.infer(*_single(sample))[0]


def missbeamnet_forward(model: Estimator, sample: WindowSample) -> Array:
    """Missing-beam estimate of the LSTM regressor (inference mode)."""
    if model.tag != "missbeamnet":
        raise ModelMismatch(f"expected a MissBeamNet model, got {model.name}")
    model.check_compatible(sample.missing_mask, sample.past.shape[0])
    return model.infer(*_single(sample))[0]


def reconstruct_full_beams(sample: WindowSample, predictions: Array) -> BeamVelocities:
    """
    Measured beams in the available slots, predictions in the missing ones.

    *predictions* may be the missing-beam vector or a full four-beam
    estimate, whose available components are then discarded.
    """
    missing = np.array(sample.missing_mask)
    pred = np.asarray(predictions, dtype=np.float64)
    if pred.shape == (N_BEAMS,):
        pred = pred[missing]
    if pred.shape != (int(missing.sum()),):
        raise ShapeMismatch(
            f"predictions of shape {pred.shape} do not fit {int(missing.sum())} missing beam(s)"
        )
    beams = np.empty(N_BEAMS)
    beams[~missing] = sample.current_available
    beams[missing] = pred
    return beams


# ----------------------------------------------------------------------
# Batched strategies (evaluation)
# ----------------------------------------------------------------------

def predict_missing(estimator: Estimator, batch: WindowBatch, chunk: int = 4096) -> Array:
    """Missing-beam predictions (S, n_missing) for a whole batch."""
    estimator.check_compatible(batch.missing_mask, batch.window)
    missing = np.array(batch.missing_mask)

    if estimator.tag == "average":
        return batch.past[:, :, missing].mean(axis=1)

    parts = []
    for start in range(0, len(batch), chunk):
        sl = slice(start, start + chunk)
        out = estimator.infer(batch.past[sl], batch.current_available[sl])
        parts.append(out[:, missing] if estimator.tag == "libeamsnet" else out)
    return np.concatenate(parts, axis=0)


def reconstruct_batch(batch: WindowBatch, missing_predictions: Array) -> Array:
    """Row-wise :func:`reconstruct_full_beams` for a batch (S, 4)."""
    missing = np.array(batch.missing_mask)
    if missing_predictions.shape != (len(batch), int(missing.sum())):
        raise ShapeMismatch(
            f"predictions {missing_predictions.shape} do not fit batch of {len(batch)} "
            f"with {int(missing.sum())} missing beam(s)"
        )
    beams = np.empty((len(batch), N_BEAMS))
    beams[:, ~missing] = batch.current_available
    beams[:, missing] = missing_predictions
    return beams


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

def save_estimator(estimator: Estimator, path: Path, extra: dict | None = None) -> Path:
    if estimator.network is None:
        raise ModelError("the average estimator has no checkpoint")
    header = CheckpointHeader(
        estimator=estimator.tag,
        missing_mask=list(estimator.missing_mask),
        window=estimator.window,
        specs=estimator.network.state.specs,
        normalization=estimator.scaling.to_header() if estimator.scaling else {},
        extra=extra or {},
    )
    return save_checkpoint(path, header, estimator.network.state)


def load_estimator(
    path: Path,
    expected_tag: str | None = None,
    missing_mask: Sequence[bool] | None = None,
    window: int | None = None,
) -> Estimator:
    header, state = load_checkpoint(path)
    if expected_tag is not None and header.estimator != expected_tag:
        raise ModelMismatch(f"{path}: holds a {header.estimator} model, expected {expected_tag}")
    if header.estimator == "libeamsnet":
        network: Network = LiBeamsNet(state)
    elif header.estimator == "missbeamnet":
        network = MissBeamNet(state)
    else:
        raise ModelMismatch(f"{path}: unknown estimator tag {header.estimator!r}")

    estimator = Estimator(
        tag=header.estimator,
        missing_mask=tuple(header.missing_mask),
        window=header.window,
        network=network,
        scaling=BeamScaling.from_header(header.normalization),
    )
    if missing_mask is not None or window is not None:
        estimator.check_compatible(
            missing_mask if missing_mask is not None else estimator.missing_mask,
            window if window is not None else estimator.window,
        )
    logger.info("Loaded %s from %s (mask %s)", estimator.name, path, describe_mask(estimator.missing_mask))
    return estimator
