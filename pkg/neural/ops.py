"""
Batched numeric kernels with exact analytic gradients.

Every forward kernel takes a leading batch axis (or none) and every
backward kernel returns parameter gradients summed over the batch. Loss
functions average over the batch, so summing here yields batch-mean
gradients end to end.

Layouts:
    dense   x (..., n)        W (m, n)            b (m,)
    conv1d  x (..., C_in, L)  W (C_out, C_in, k)  b (C_out,)
    lstm    x (B, T, d)       W (4H, d) U (4H, H) b (4H,)   gate order i, f, o, g
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from utils.errors import ShapeMismatch

Tensor = NDArray[np.float64]

ACTIVATIONS = ("relu", "tanh", "identity")


# ----------------------------------------------------------------------
# Dense
# ----------------------------------------------------------------------

def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise ShapeMismatch(
            f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape} do not agree"
        )
    return x @ weights.T + bias


def dense_backward(x: Tensor, weights: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (d_input, d_weights, d_bias)."""
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    d_w = g2.T @ x2
    d_b = g2.sum(axis=0)
    d_x = grad_out @ weights
    return d_x, d_w, d_b


# ----------------------------------------------------------------------
# 1-D convolution (valid cross-correlation, stride 1)
# ----------------------------------------------------------------------

def conv1d_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if weights.ndim != 3 or x.ndim < 2:
        raise ShapeMismatch(f"conv1d: input {x.shape} / weights {weights.shape} have wrong rank")
    c_out, c_in, k = weights.shape
    if x.shape[-2] != c_in or bias.shape != (c_out,):
        raise ShapeMismatch(
            f"conv1d: input channels {x.shape[-2]} vs weights {weights.shape}, bias {bias.shape}"
        )
    if x.shape[-1] < k:
        raise ShapeMismatch(f"conv1d: input length {x.shape[-1]} shorter than kernel {k}")
    windows = sliding_window_view(x, k, axis=-1)          # (..., C_in, L', k)
    return np.einsum("...clk,ock->...ol", windows, weights) + bias[:, None]


def conv1d_backward(x: Tensor, weights: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (d_input, d_weights, d_bias)."""
    k = weights.shape[2]
    out_len = grad_out.shape[-1]
    windows = sliding_window_view(x, k, axis=-1)
    # leading batch axes folded into one: (B, C_in, L', k) and (B, C_out, L')
    flat_windows = windows.reshape((-1,) + windows.shape[-3:])
    flat_grad = grad_out.reshape((-1,) + grad_out.shape[-2:])

    d_w = np.einsum("bclk,bol->ock", flat_windows, flat_grad)
    d_b = flat_grad.sum(axis=(0, 2))
    d_x = np.zeros_like(x)
    for j in range(k):
        d_x[..., j : j + out_len] += np.einsum("...ol,oc->...cl", grad_out, weights[:, :, j])
    return d_x, d_w, d_b


# ----------------------------------------------------------------------
# LSTM
# ----------------------------------------------------------------------

def sigmoid(z: Tensor) -> Tensor:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LSTMCache:
    x: Tensor
    h: Tensor       # (T+1, B, H), h[0] = 0
    c: Tensor       # (T+1, B, H), c[0] = 0
    gates: Tensor   # (T, B, 4H) post-activation i, f, o, g


def lstm_forward(
    x: Tensor, w_input: Tensor, w_hidden: Tensor, bias: Tensor
) -> tuple[Tensor, LSTMCache]:
    """
    Run the LSTM over ``x`` (B, T, d) or (T, d) from zero initial state.

    Returns the final hidden state (B, H) or (H,) and the cache for
    backpropagation through time.
    """
    squeeze = x.ndim == 2
    xb = x[None] if squeeze else x
    if xb.ndim != 3 or xb.shape[1] == 0:
        raise ShapeMismatch(f"lstm: expected a non-empty (B, T, d) sequence, got {x.shape}")
    hidden = w_hidden.shape[1]
    if (
        w_input.shape != (4 * hidden, xb.shape[2])
        or w_hidden.shape != (4 * hidden, hidden)
        or bias.shape != (4 * hidden,)
    ):
        raise ShapeMismatch(
            f"lstm: input {x.shape}, W {w_input.shape}, U {w_hidden.shape}, b {bias.shape}"
        )

    n_batch, n_steps, _ = xb.shape
    h = np.zeros((n_steps + 1, n_batch, hidden))
    c = np.zeros((n_steps + 1, n_batch, hidden))
    gates = np.empty((n_steps, n_batch, 4 * hidden))
    hs = slice(0, hidden), slice(hidden, 2 * hidden), slice(2 * hidden, 3 * hidden)

    for t in range(n_steps):
        z = xb[:, t] @ w_input.T + h[t] @ w_hidden.T + bias
        gates[t, :, : 3 * hidden] = sigmoid(z[:, : 3 * hidden])
        gates[t, :, 3 * hidden :] = np.tanh(z[:, 3 * hidden :])
        i, f, o = (gates[t, :, s] for s in hs)
        g = gates[t, :, 3 * hidden :]
        c[t + 1] = f * c[t] + i * g
        h[t + 1] = o * np.tanh(c[t + 1])

    cache = LSTMCache(x=xb, h=h, c=c, gates=gates)
    h_last = h[-1]
    return (h_last[0] if squeeze else h_last), cache


def lstm_backward(
    cache: LSTMCache, w_input: Tensor, w_hidden: Tensor, grad_h_last: Tensor
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """
    Backpropagation through time from a gradient on the final hidden state.

    Returns (d_input, d_w_input, d_w_hidden, d_bias).
    """
    hidden = w_hidden.shape[1]
    n_steps, n_batch, _ = cache.gates.shape
    dh = grad_h_last.reshape(cache.h.shape[1:])
    dc = np.zeros_like(dh)

    # gate pre-activation gradients of every step, (T, B, 4H)
    dz_all = np.empty((n_steps, n_batch, 4 * hidden))

    for t in reversed(range(n_steps)):
        gt = cache.gates[t]
        i, f, o, g = (gt[:, k * hidden : (k + 1) * hidden] for k in range(4))
        dz = dz_all[t]
        tc = np.tanh(cache.c[t + 1])

        dc = dc + dh * o * (1.0 - tc * tc)
        np.multiply(dc * g, i * (1.0 - i), out=dz[:, :hidden])
        np.multiply(dc * cache.c[t], f * (1.0 - f), out=dz[:, hidden : 2 * hidden])
        np.multiply(dh * tc, o * (1.0 - o), out=dz[:, 2 * hidden : 3 * hidden])
        np.multiply(dc * i, 1.0 - g * g, out=dz[:, 3 * hidden :])

        dh = dz @ w_hidden
        dc *= f

    # weight gradients as one contraction over all (step, sample) rows
    flat_dz = dz_all.reshape(n_steps * n_batch, 4 * hidden)
    x_rows = cache.x.transpose(1, 0, 2).reshape(n_steps * n_batch, -1)
    h_rows = cache.h[:n_steps].reshape(n_steps * n_batch, hidden)

    d_wi = flat_dz.T @ x_rows
    d_wh = flat_dz.T @ h_rows
    d_b = flat_dz.sum(axis=0)
    d_x = (dz_all @ w_input).transpose(1, 0, 2)
    return d_x, d_wi, d_wh, d_b


# ----------------------------------------------------------------------
# Dropout / activations
# ----------------------------------------------------------------------

def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: Tensor, rate: float, training_mode: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training_mode or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    return x * dropout_mask(x.shape, rate, rng)


def activate(name: str, x: Tensor) -> Tensor:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def activate_backward(name: str, x: Tensor, out: Tensor, grad_out: Tensor) -> Tensor:
    if name == "relu":
        return grad_out * (x > 0.0)
    if name == "tanh":
        return grad_out * (1.0 - out * out)
    if name == "identity":
        return grad_out
    raise ValueError(f"unknown activation {name!r}")


# ----------------------------------------------------------------------
# Loss
# ----------------------------------------------------------------------

def mse_loss(pred: Tensor, target: Tensor) -> tuple[float, Tensor]:
    """
    Mean squared error over all elements and its gradient ``2(pred-target)/n``.

    For a (B, k) batch this is the batch mean of per-sample MSE.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n
