from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, model_validator

from neural.ops import ACTIVATIONS, Tensor
from utils.errors import DVLBeamError, ShapeMismatch

LayerKind = Literal["conv1d", "dense", "lstm", "dropout", "activation"]

# Initial forget-gate bias of every LSTM layer
LSTM_FORGET_BIAS = 1.0


class NoForwardCache(DVLBeamError):
    """backward() called without a preceding training forward pass."""


class LayerSpec(BaseModel):
    """Topology entry of one layer; only the fields of its kind are set."""

    name: str
    kind: LayerKind
    in_features: int | None = None
    out_features: int | None = None
    in_channels: int | None = None
    filters: int | None = None
    kernel_size: int | None = None
    input_length: int | None = None
    input_size: int | None = None
    hidden_size: int | None = None
    rate: float | None = None
    activation: str | None = None

    @model_validator(mode="after")
    def _check_kind(self) -> "LayerSpec":
        required = {
            "dense": ("in_features", "out_features"),
            "conv1d": ("in_channels", "filters", "kernel_size", "input_length"),
            "lstm": ("input_size", "hidden_size"),
            "dropout": ("rate",),
            "activation": ("activation",),
        }[self.kind]
        missing = [f for f in required if getattr(self, f) is None]
        if missing:
            raise ValueError(f"{self.kind} layer {self.name!r} needs {', '.join(missing)}")
        if self.kind == "conv1d" and self.kernel_size > self.input_length:
            raise ValueError(
                f"conv1d layer {self.name!r}: kernel {self.kernel_size} exceeds input length {self.input_length}"
            )
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        return self

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "dense":
            return {"W": (self.out_features, self.in_features), "b": (self.out_features,)}
        if self.kind == "conv1d":
            return {
                "W": (self.filters, self.in_channels, self.kernel_size),
                "b": (self.filters,),
            }
        if self.kind == "lstm":
            h = self.hidden_size
            return {"W": (4 * h, self.input_size), "U": (4 * h, h), "b": (4 * h,)}
        return {}

    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.in_features
        if self.kind == "conv1d":
            return self.in_channels * self.kernel_size
        if self.kind == "lstm":
            return self.hidden_size
        return 1


@dataclass
class ModelState:
    """
    Everything that evolves during training: parameters, ADAM moments,
    the optimizer step counter and the train/inference flag.

    Parameter keys are ``"<layer name>.<tensor>"``, e.g. ``"conv.W"``.
    """

    specs: list[LayerSpec]
    params: dict[str, Tensor]
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    step: int = 0
    training: bool = False
    # optimizer work buffers, one per parameter; never persisted
    scratch: dict[str, Tensor] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        expected = expected_shapes(self.specs)
        if set(expected) != set(self.params):
            raise ShapeMismatch(
                f"parameter names {sorted(self.params)} do not match layer specs {sorted(expected)}"
            )
        for key, shape in expected.items():
            if self.params[key].shape != shape:
                raise ShapeMismatch(f"{key}: expected shape {shape}, got {self.params[key].shape}")
        if not self.m:
            self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
        if not self.v:
            self.v = {k: np.zeros_like(p) for k, p in self.params.items()}

    def spec(self, name: str) -> LayerSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def expected_shapes(specs: list[LayerSpec]) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for spec in specs:
        for tensor, shape in spec.param_shapes().items():
            shapes[f"{spec.name}.{tensor}"] = shape
    return shapes


def init_params(specs: list[LayerSpec], rng: np.random.Generator) -> dict[str, Tensor]:
    """
    Uniform ±sqrt(1/fan_in) weights, zero biases, LSTM forget-gate bias 1.

    Layers are initialised in spec order from a single generator, so the
    result is a pure function of (specs, seed).
    """
    params: dict[str, Tensor] = {}
    for spec in specs:
        limit = math.sqrt(1.0 / spec.fan_in())
        for tensor, shape in spec.param_shapes().items():
            key = f"{spec.name}.{tensor}"
            if tensor == "b":
                params[key] = np.zeros(shape)
            else:
                params[key] = rng.uniform(-limit, limit, size=shape)
        if spec.kind == "lstm":
            h = spec.hidden_size
            params[f"{spec.name}.b"][h : 2 * h] = LSTM_FORGET_BIAS
    return params


class Network(ABC):
    """
    A fixed-topology regressor over (past window, current available beams).

    Subclasses own the forward pass and its exact reverse; the cache of the
    last training-mode forward is consumed by :meth:`backward`. A forward
    pass runs in the mode of ``state.training`` unless ``training`` is passed,
    in which case the shared flag is left alone.
    """

    def __init__(self, state: ModelState) -> None:
        self.state = state
        self._cache: dict | None = None

    @property
    def params(self) -> dict[str, Tensor]:
        return self.state.params

    def train(self) -> None:
        self.state.training = True

    def eval(self) -> None:
        self.state.training = False
        self._cache = None

    def _mode(self, training: bool | None) -> bool:
        return self.state.training if training is None else training

    @abstractmethod
    def forward(
        self,
        past: Tensor,
        available: Tensor,
        rng: np.random.Generator | None = None,
        training: bool | None = None,
    ) -> Tensor:
        """past (B, N, 4), available (B, k) → output (B, out)."""
        ...

    def predict(self, past: Tensor, available: Tensor) -> Tensor:
        """Inference-mode forward pass; keeps no cache."""
        return self.forward(past, available, training=False)

    @abstractmethod
    def _backward(self, cache: dict, grad_out: Tensor) -> dict[str, Tensor]:
        ...

    def backward(self, grad_out: Tensor) -> dict[str, Tensor]:
        """Exact gradients of every parameter for the cached forward pass."""
        if self._cache is None:
            raise NoForwardCache("backward() needs a preceding forward pass in training mode")
        grads = self._backward(self._cache, grad_out)
        self._cache = None
        return grads
