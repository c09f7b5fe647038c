from __future__ import annotations

import logging
from typing import Callable, Mapping

import numpy as np

from neural.model import Network
from neural.ops import Tensor, mse_loss
from utils.seeding import make_rng

logger = logging.getLogger("dvlbeam.gradcheck")

DEFAULT_STEP = 1e-5


def numerical_gradient(loss_fn: Callable[[], float], param: Tensor, step: float = DEFAULT_STEP) -> Tensor:
    """Central finite differences of ``loss_fn`` w.r.t. *param* (perturbed in place, restored)."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = loss_fn()
        flat[i] = orig - step
        minus = loss_fn()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor) -> float:
    """``||a - n|| / max(||a|| + ||n||, tiny)``; 0 when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_tensors(
    loss_fn: Callable[[], float],
    params: Mapping[str, Tensor],
    analytic: Mapping[str, Tensor],
    step: float = DEFAULT_STEP,
) -> dict[str, float]:
    """Relative error of every analytic gradient against central differences."""
    return {
        key: relative_error(analytic[key], numerical_gradient(loss_fn, params[key], step))
        for key in analytic
    }


def check_gradients(
    network: Network,
    past: Tensor,
    available: Tensor,
    target: Tensor,
    dropout_seed: int = 0,
    step: float = DEFAULT_STEP,
) -> dict[str, float]:
    """
    Gradient check of a whole network under the MSE loss.

    Forward passes run in training mode with a dropout generator re-seeded on
    every evaluation, so every loss evaluation sees the same mask; the
    network's own mode flag is left unchanged.
    """

    def loss() -> float:
        out = network.forward(past, available, rng=make_rng(dropout_seed), training=True)
        value, _ = mse_loss(out, target)
        network._cache = None
        return value

    out = network.forward(past, available, rng=make_rng(dropout_seed), training=True)
    _, grad_out = mse_loss(out, target)
    analytic = network.backward(grad_out)

    errors = check_tensors(loss, network.params, analytic, step)
    worst = max(errors.values()) if errors else 0.0
    logger.debug("Gradient check: worst relative error %.3e", worst)
    return errors
