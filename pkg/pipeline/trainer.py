from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from config.experiment import LiBeamsNetConfig, MissBeamNetConfig
from dvl.dataset import WindowBatch, WindowSample, stack_windows
from neural.model import Network
from neural.networks import LiBeamsNet, MissBeamNet
from neural.ops import mse_loss
from neural.optim import TrainConfig, adam_step, lr_at
from pipeline.estimators import NEURAL_TAGS, BeamScaling, Estimator
from utils.errors import TrainingError
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger("dvlbeam.trainer")

# epoch_callback(epoch, train_loss, test_loss)
EpochCallback = Callable[[int, float, float], None]


class EmptyTrainSet(TrainingError):
    """No training samples."""


class NonFiniteLoss(TrainingError):
    """A batch loss became NaN or infinite."""


@dataclass
class EpochLoss:
    epoch: int
    train_loss: float
    test_loss: float


@dataclass
class LossHistory:
    """Per-epoch (train, test) losses; test loss is NaN without a test set."""

    epochs: list[EpochLoss] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def test_losses(self) -> list[float]:
        return [e.test_loss for e in self.epochs]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": [e.epoch for e in self.epochs],
                "train_loss": self.train_losses,
                "test_loss": self.test_losses,
            }
        )


def build_network(
    kind: str,
    window: int,
    missing_mask: Sequence[bool],
    architecture: LiBeamsNetConfig | MissBeamNetConfig | None,
    seed: int,
) -> Network:
    n_available = len(missing_mask) - sum(missing_mask)
    rng = make_rng(derive_seed(seed, "init"))
    if kind == "libeamsnet":
        arch = architecture if isinstance(architecture, LiBeamsNetConfig) else LiBeamsNetConfig()
        specs = LiBeamsNet.layer_specs(
            window=window,
            n_available=n_available,
            filters=arch.filters,
            kernel_size=arch.kernel_size,
            dense_widths=arch.dense_widths,
            dropout_rate=arch.dropout,
            activation=arch.activation,
        )
        return LiBeamsNet.build(specs, rng)
    if kind == "missbeamnet":
        arch = architecture if isinstance(architecture, MissBeamNetConfig) else MissBeamNetConfig()
        specs = MissBeamNet.layer_specs(n_available=n_available, hidden_size=arch.hidden_size)
        return MissBeamNet.build(specs, rng)
    raise ValueError(f"{kind!r} is not a trainable estimator; expected one of {NEURAL_TAGS}")


def _network_arrays(estimator: Estimator, batch: WindowBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(past, available, targets) in the units the network is trained in."""
    # LiBeamsNet regresses all four beams, MissBeamNet only the missing ones
    targets = batch.target_all if estimator.tag == "libeamsnet" else batch.target_missing
    past, available = estimator.network_inputs(batch.past, batch.current_available)
    return past, available, estimator.network_targets(batch.past, targets)


def dataset_loss(estimator: Estimator, batch: WindowBatch, chunk: int = 4096) -> float:
    """Inference-mode MSE over a whole sample set, in network units."""
    past, available, targets = _network_arrays(estimator, batch)
    total = 0.0
    for start in range(0, len(batch), chunk):
        sl = slice(start, start + chunk)
        out = estimator.network.predict(past[sl], available[sl])
        loss, _ = mse_loss(out, targets[sl])
        total += loss * out.size
    return total / targets.size


def train(
    kind: str,
    train_samples: Sequence[WindowSample],
    test_samples: Sequence[WindowSample],
    config: TrainConfig,
    architecture: LiBeamsNetConfig | MissBeamNetConfig | None = None,
    epoch_callback: EpochCallback | None = None,
) -> tuple[Estimator, LossHistory]:
    """
    Train one network with ADAM, step-decayed learning rate and shuffled
    mini-batches; the last partial batch of an epoch is kept.

    Inputs and targets are standardised by a :class:`BeamScaling` fitted on
    the training samples, and losses are reported in those units. Returns
    the final-epoch model, scaling included, and its loss history.
    """
    if kind not in NEURAL_TAGS:
        raise ValueError(f"{kind!r} is not a trainable estimator; expected one of {NEURAL_TAGS}")
    if not train_samples:
        raise EmptyTrainSet(f"{kind}: no training samples")

    train_batch = stack_windows(train_samples)
    test_batch = stack_windows(test_samples) if test_samples else None
    mask = train_batch.missing_mask
    seed = config.seed if config.seed is not None else 0

    network = build_network(kind, train_batch.window, mask, architecture, seed)
    estimator = Estimator(
        tag=kind,
        missing_mask=mask,
        window=train_batch.window,
        network=network,
        scaling=BeamScaling.fit(train_batch),
    )
    shuffle_rng = make_rng(derive_seed(seed, "shuffle"))
    dropout_rng = make_rng(derive_seed(seed, "dropout"))
    past, available, targets = _network_arrays(estimator, train_batch)
    n = len(train_batch)

    logger.info(
        "[RUN ] Training %s: %d train / %d test samples, %d parameters, %d epochs",
        kind, n, len(test_batch) if test_batch else 0, network.state.n_parameters, config.epochs,
    )
    history = LossHistory()
    started = time.time()

    for epoch in range(1, config.epochs + 1):
        lr = lr_at(config, epoch)
        order = shuffle_rng.permutation(n)
        network.train()
        batch_losses: list[float] = []

        for b, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            out = network.forward(past[idx], available[idx], rng=dropout_rng)
            loss, grad = mse_loss(out, targets[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"{kind}: non-finite loss at epoch {epoch}, batch {b}")
            grads = network.backward(grad)
            adam_step(network.state, grads, lr, config.beta1, config.beta2, config.eps)
            batch_losses.append(loss)

        train_loss = float(np.mean(batch_losses))
        test_loss = dataset_loss(estimator, test_batch) if test_batch is not None else math.nan
        history.epochs.append(EpochLoss(epoch=epoch, train_loss=train_loss, test_loss=test_loss))

        logger.debug("%s epoch %d/%d lr=%.1e train=%.6g test=%.6g", kind, epoch, config.epochs, lr, train_loss, test_loss)
        if epoch_callback:
            epoch_callback(epoch, train_loss, test_loss)

    network.eval()
    network.state.scratch.clear()
    logger.info(
        "Trained %s in %.1fs: final train loss %.6g, test loss %.6g",
        kind, time.time() - started, history.train_losses[-1], history.test_losses[-1],
    )
    return estimator, history
