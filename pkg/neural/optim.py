from __future__ import annotations

from typing import Any, Mapping

import numpy as np
from pydantic import BaseModel, Field, model_validator

from neural.model import ModelState
from neural.ops import Tensor
from utils.errors import DVLBeamError, ShapeMismatch


DEFAULT_DECAY_EPOCH = 50


class EpochOutOfRange(DVLBeamError, ValueError):
    """Epoch number outside 1..epochs."""


class TrainConfig(BaseModel):
    """Optimisation protocol: ADAM, step-decay schedule, mini-batches."""

    epochs: int = Field(default=100, ge=1)
    base_lr: float = Field(default=0.001, gt=0)
    decay_factor: float = Field(default=0.1, gt=0, le=1)
    decay_epoch: int = Field(default=DEFAULT_DECAY_EPOCH, ge=1)
    batch_size: int = Field(default=4, ge=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    seed: int | None = Field(default=None, ge=0, lt=2**64)

    @model_validator(mode="before")
    @classmethod
    def _default_decay_epoch(cls, data: Any) -> Any:
        # an unset decay epoch follows a shortened run: min(50, epochs)
        if isinstance(data, dict) and data.get("decay_epoch") is None and "epochs" in data:
            data = {**data, "decay_epoch": min(DEFAULT_DECAY_EPOCH, int(data["epochs"]))}
        return data

    @model_validator(mode="after")
    def _decay_within_run(self) -> "TrainConfig":
        if self.decay_epoch > self.epochs:
            raise ValueError(
                f"decay_epoch ({self.decay_epoch}) must not exceed epochs ({self.epochs})"
            )
        return self


def lr_at(config: TrainConfig, epoch: int) -> float:
    """``base_lr`` through ``decay_epoch`` (1-based), ``base_lr·decay_factor`` after."""
    if not 1 <= epoch <= config.epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside 1..{config.epochs}")
    if epoch <= config.decay_epoch:
        return config.base_lr
    return config.base_lr * config.decay_factor


def adam_step(
    state: ModelState,
    gradients: Mapping[str, Tensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ModelState:
    """
    One bias-corrected ADAM update, in place; returns *state*.

    Only the tensors named in *gradients* are touched, each independently.
    """
    for key, g in gradients.items():
        if key not in state.params:
            raise ShapeMismatch(f"gradient for unknown parameter {key!r}")
        if g.shape != state.params[key].shape:
            raise ShapeMismatch(f"{key}: gradient {g.shape} vs parameter {state.params[key].shape}")

    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    step_size = lr / bc1

    for key, g in gradients.items():
        m, v, p = state.m[key], state.v[key], state.params[key]
        buf = state.scratch.get(key)
        if buf is None or buf.shape != p.shape:
            buf = state.scratch[key] = np.empty_like(p)

        m *= beta1
        np.multiply(g, 1.0 - beta1, out=buf)
        m += buf
        v *= beta2
        np.multiply(g, g, out=buf)
        buf *= 1.0 - beta2
        v += buf

        np.divide(v, bc2, out=buf)
        np.sqrt(buf, out=buf)
        buf += eps
        np.divide(m, buf, out=buf)
        buf *= step_size
        p -= buf
    return state
