from __future__ import annotations

from typing import Sequence

import numpy as np

from neural.model import LayerSpec, ModelState, Network, init_params
from neural.ops import (
    Tensor,
    activate,
    activate_backward,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_mask,
    lstm_backward,
    lstm_forward,
)
from utils.errors import ShapeMismatch

N_BEAMS = 4


def _check_inputs(past: Tensor, available: Tensor, window: int, n_available: int) -> None:
    if past.ndim != 3 or past.shape[1:] != (window, N_BEAMS):
        raise ShapeMismatch(f"past must be (B, {window}, {N_BEAMS}), got {past.shape}")
    if available.shape != (past.shape[0], n_available):
        raise ShapeMismatch(
            f"available beams must be ({past.shape[0]}, {n_available}), got {available.shape}"
        )


class LiBeamsNet(Network):
    """
    1-D CNN regressor producing a full four-beam estimate.

    past window (B, N, 4) → conv1d over time with the beams as channels →
    activation → flatten → dropout → hidden dense layers → concat current
    available beams → dense → (B, 4).
    """

    def __init__(self, state: ModelState) -> None:
        super().__init__(state)
        conv = state.spec("conv")
        self.window = conv.input_length
        self.conv_activation = state.spec("conv_act").activation
        self.dropout_rate = state.spec("drop").rate
        self.hidden = [s.name for s in state.specs if s.kind == "dense" and s.name != "out"]
        self.hidden_activation = {
            name: state.spec(f"{name}_act").activation for name in self.hidden
        }
        out = state.spec("out")
        prev = self.hidden[-1] if self.hidden else None
        feature_dim = (
            state.spec(prev).out_features if prev else conv.filters * (conv.input_length - conv.kernel_size + 1)
        )
        self.n_available = out.in_features - feature_dim
        if self.n_available < 0 or out.out_features != N_BEAMS:
            raise ShapeMismatch("LiBeamsNet output layer does not match its feature width")

    @staticmethod
    def layer_specs(
        window: int,
        n_available: int,
        filters: int = 6,
        kernel_size: int = 2,
        dense_widths: Sequence[int] = (32, 16),
        dropout_rate: float = 0.2,
        activation: str = "relu",
    ) -> list[LayerSpec]:
        specs = [
            LayerSpec(
                name="conv",
                kind="conv1d",
                in_channels=N_BEAMS,
                filters=filters,
                kernel_size=kernel_size,
                input_length=window,
            ),
            LayerSpec(name="conv_act", kind="activation", activation=activation),
            LayerSpec(name="drop", kind="dropout", rate=dropout_rate),
        ]
        width = filters * (window - kernel_size + 1)
        for i, w in enumerate(dense_widths, start=1):
            specs.append(LayerSpec(name=f"fc{i}", kind="dense", in_features=width, out_features=w))
            specs.append(LayerSpec(name=f"fc{i}_act", kind="activation", activation=activation))
            width = w
        specs.append(
            LayerSpec(name="out", kind="dense", in_features=width + n_available, out_features=N_BEAMS)
        )
        return specs

    @classmethod
    def build(cls, specs: list[LayerSpec], rng: np.random.Generator) -> "LiBeamsNet":
        return cls(ModelState(specs=specs, params=init_params(specs, rng)))

    @property
    def feature_count(self) -> int:
        conv = self.state.spec("conv")
        return conv.filters * (conv.input_length - conv.kernel_size + 1)

    def forward(
        self,
        past: Tensor,
        available: Tensor,
        rng: np.random.Generator | None = None,
        training: bool | None = None,
    ) -> Tensor:
        _check_inputs(past, available, self.window, self.n_available)
        p = self.params
        training = self._mode(training)

        x = np.ascontiguousarray(past.transpose(0, 2, 1))      # (B, 4, N)
        z_conv = conv1d_forward(x, p["conv.W"], p["conv.b"])
        a_conv = activate(self.conv_activation, z_conv)
        feats = a_conv.reshape(a_conv.shape[0], -1)

        mask = None
        if training and self.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("training-mode forward needs a dropout generator")
            mask = dropout_mask(feats.shape, self.dropout_rate, rng)
            h = feats * mask
        else:
            h = feats

        layers: list[tuple[Tensor, Tensor, Tensor]] = []
        for name in self.hidden:
            z = dense_forward(h, p[f"{name}.W"], p[f"{name}.b"])
            a = activate(self.hidden_activation[name], z)
            layers.append((h, z, a))
            h = a

        cat = np.concatenate([h, available], axis=1)
        out = dense_forward(cat, p["out.W"], p["out.b"])

        if training:
            self._cache = {
                "x": x, "z_conv": z_conv, "a_conv": a_conv, "mask": mask,
                "layers": layers, "cat": cat, "hidden_width": h.shape[1],
            }
        return out

    def _backward(self, cache: dict, grad_out: Tensor) -> dict[str, Tensor]:
        p = self.params
        grads: dict[str, Tensor] = {}

        d_cat, grads["out.W"], grads["out.b"] = dense_backward(cache["cat"], p["out.W"], grad_out)
        d_h = d_cat[:, : cache["hidden_width"]]

        for name, (x_in, z, a) in zip(reversed(self.hidden), reversed(cache["layers"])):
            d_z = activate_backward(self.hidden_activation[name], z, a, d_h)
            d_h, grads[f"{name}.W"], grads[f"{name}.b"] = dense_backward(x_in, p[f"{name}.W"], d_z)

        if cache["mask"] is not None:
            d_h = d_h * cache["mask"]
        d_a = d_h.reshape(cache["a_conv"].shape)
        d_z = activate_backward(self.conv_activation, cache["z_conv"], cache["a_conv"], d_a)
        _, grads["conv.W"], grads["conv.b"] = conv1d_backward(cache["x"], p["conv.W"], d_z)
        return grads


class MissBeamNet(Network):
    """
    LSTM regressor producing only the missing beams.

    past window as a length-N sequence of 4-vectors → LSTM → final hidden
    state ++ current available beams → dense → (B, n_missing).
    """

    def __init__(self, state: ModelState) -> None:
        super().__init__(state)
        lstm = state.spec("lstm")
        out = state.spec("out")
        self.hidden_size = lstm.hidden_size
        self.n_available = out.in_features - lstm.hidden_size
        self.n_missing = out.out_features
        if lstm.input_size != N_BEAMS or self.n_available + self.n_missing != N_BEAMS:
            raise ShapeMismatch("MissBeamNet layer sizes do not match the four-beam layout")

    @staticmethod
    def layer_specs(n_available: int, hidden_size: int = 500) -> list[LayerSpec]:
        return [
            LayerSpec(name="lstm", kind="lstm", input_size=N_BEAMS, hidden_size=hidden_size),
            LayerSpec(
                name="out",
                kind="dense",
                in_features=hidden_size + n_available,
                out_features=N_BEAMS - n_available,
            ),
        ]

    @classmethod
    def build(cls, specs: list[LayerSpec], rng: np.random.Generator) -> "MissBeamNet":
        return cls(ModelState(specs=specs, params=init_params(specs, rng)))

    def forward(
        self,
        past: Tensor,
        available: Tensor,
        rng: np.random.Generator | None = None,
        training: bool | None = None,
    ) -> Tensor:
        if past.ndim != 3:
            raise ShapeMismatch(f"past must be (B, N, {N_BEAMS}), got {past.shape}")
        _check_inputs(past, available, past.shape[1], self.n_available)
        p = self.params

        h_last, lstm_cache = lstm_forward(past, p["lstm.W"], p["lstm.U"], p["lstm.b"])
        cat = np.concatenate([h_last, available], axis=1)
        out = dense_forward(cat, p["out.W"], p["out.b"])

        if self._mode(training):
            self._cache = {"lstm": lstm_cache, "cat": cat}
        return out

    def _backward(self, cache: dict, grad_out: Tensor) -> dict[str, Tensor]:
        p = self.params
        grads: dict[str, Tensor] = {}
        d_cat, grads["out.W"], grads["out.b"] = dense_backward(cache["cat"], p["out.W"], grad_out)
        d_h = d_cat[:, : self.hidden_size]
        _, grads["lstm.W"], grads["lstm.U"], grads["lstm.b"] = lstm_backward(
            cache["lstm"], p["lstm.W"], p["lstm.U"], d_h
        )
        return grads
