from __future__ import annotations

import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dvl.dataset import SchemaMap, mask_from_beams
from neural.optim import TrainConfig
from utils.errors import ConfigError
from utils.seeding import derive_seed

logger = logging.getLogger("dvlbeam.config")

_ESTIMATORS = ("average", "libeamsnet", "missbeamnet")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometryConfig(_Section):
    alpha_deg: float = Field(default=20.0, gt=0.0, lt=90.0)


class ErrorModelConfig(_Section):
    enabled: bool = True
    bias: list[float] = Field(default_factory=lambda: [0.001] * 4)
    scale: list[float] = Field(default_factory=lambda: [0.0] * 3)
    noise_std: float = Field(default=0.001, ge=0.0)

    @field_validator("bias")
    @classmethod
    def _bias_per_beam(cls, v: list[float]) -> list[float]:
        if len(v) != 4:
            raise ValueError(f"bias needs one value per beam (4), got {len(v)}")
        return v

    @field_validator("scale")
    @classmethod
    def _scale_per_axis(cls, v: list[float]) -> list[float]:
        if len(v) != 3:
            raise ValueError(f"scale needs one value per axis (3), got {len(v)}")
        if any(s <= -1.0 for s in v):
            raise ValueError("scale components must be > -1")
        return v


class WindowConfig(_Section):
    length: int = Field(default=3, ge=1)
    missing_beams: list[int] = Field(default_factory=lambda: [3, 4])

    @field_validator("missing_beams")
    @classmethod
    def _two_missing(cls, v: list[int]) -> list[int]:
        if len(v) != 2 or len(set(v)) != 2:
            raise ValueError(f"exactly 2 distinct missing beams are required, got {v}")
        if any(not 1 <= b <= 4 for b in v):
            raise ValueError(f"beam numbers must be in 1..4, got {v}")
        return sorted(v)

    def mask(self) -> tuple[bool, ...]:
        return mask_from_beams(self.missing_beams)


class SectionEntry(_Section):
    name: str
    path: Path
    role: Literal["train", "test"]


class SyntheticConfig(_Section):
    profile: Literal["constant", "sinusoidal-sway", "turn"] = "sinusoidal-sway"
    duration_s: int = Field(default=400, ge=10)
    train_sections: int = Field(default=11, ge=1)
    test_sections: int = Field(default=2, ge=0)
    constant_velocity: list[float] = Field(default_factory=lambda: [1.0, 0.0, 0.05])
    output_dir: Path = Path("data/synthetic")


class DatasetConfig(_Section):
    source: Literal["synthetic", "csv"] = "synthetic"
    schema_map: SchemaMap = Field(default_factory=SchemaMap, alias="schema")
    sections: list[SectionEntry] = Field(default_factory=list)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @model_validator(mode="after")
    def _csv_needs_sections(self) -> "DatasetConfig":
        if self.source == "csv" and not self.sections:
            raise ValueError("source 'csv' needs at least one [[dataset.sections]] entry")
        names = [s.name for s in self.sections]
        if len(names) != len(set(names)):
            raise ValueError("section names must be unique")
        return self


class LiBeamsNetConfig(_Section):
    filters: int = Field(default=6, ge=1)
    kernel_size: int = Field(default=2, ge=1)
    dense_widths: list[int] = Field(default_factory=lambda: [32, 16])
    dropout: float = Field(default=0.2, ge=0.0, lt=1.0)
    activation: Literal["relu", "tanh", "identity"] = "relu"
    train: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator("dense_widths")
    @classmethod
    def _positive_widths(cls, v: list[int]) -> list[int]:
        if any(w < 1 for w in v):
            raise ValueError("dense widths must be positive")
        return v


class MissBeamNetConfig(_Section):
    hidden_size: int = Field(default=500, ge=1)
    train: TrainConfig = Field(default_factory=TrainConfig)


class ExperimentConfig(_Section):
    """One experiment: data, unit-under-test errors, window, models, outputs."""

    seed: int = Field(default=2024, ge=0, lt=2**63)
    output_dir: Path = Path("runs/default")
    estimators: list[str] = Field(default_factory=lambda: list(_ESTIMATORS))
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    error_model: ErrorModelConfig = Field(default_factory=ErrorModelConfig)
    window: WindowConfig = Field(default_factory=WindowConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    libeamsnet: LiBeamsNetConfig = Field(default_factory=LiBeamsNetConfig)
    missbeamnet: MissBeamNetConfig = Field(default_factory=MissBeamNetConfig)

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, v: list[str]) -> list[str]:
        unknown = [e for e in v if e not in _ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimator(s) {unknown}; expected from {list(_ESTIMATORS)}")
        if "average" not in v:
            v = ["average", *v]
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def _kernel_fits_window(self) -> "ExperimentConfig":
        if self.libeamsnet.kernel_size > self.window.length:
            raise ValueError(
                f"libeamsnet.kernel_size ({self.libeamsnet.kernel_size}) exceeds window.length ({self.window.length})"
            )
        return self

    @property
    def neural_estimators(self) -> list[str]:
        return [e for e in self.estimators if e != "average"]

    def train_config(self, kind: str) -> TrainConfig:
        return self.libeamsnet.train if kind == "libeamsnet" else self.missbeamnet.train

    def architecture(self, kind: str) -> LiBeamsNetConfig | MissBeamNetConfig:
        return self.libeamsnet if kind == "libeamsnet" else self.missbeamnet

    def resolved(self) -> "ExperimentConfig":
        """Copy with every per-network seed filled in from the global seed."""
        data = self.model_dump(mode="python", by_alias=True)
        for kind in ("libeamsnet", "missbeamnet"):
            if data[kind]["train"]["seed"] is None:
                data[kind]["train"]["seed"] = derive_seed(self.seed, "train", kind) % 2**63
        return ExperimentConfig.model_validate(data)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2, by_alias=True)


# ----------------------------------------------------------------------
# Loading, overrides, path checks
# ----------------------------------------------------------------------

def _parse_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``key.path=value`` overrides (TOML literals, else strings) in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        node = data
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: {part!r} is not a table")
            node = nxt
        value = _parse_value(raw.strip())
        logger.info("Override %s = %r (was %r)", ".".join(parts), value, node.get(parts[-1]))
        node[parts[-1]] = value
    return data


def read_config_data(path: Path) -> dict[str, Any]:
    """Raw mapping from a TOML config, a resolved JSON config or a report JSON."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
            # reports embed the resolved config under "config"
            if isinstance(data, dict) and "config" in data and "seed" not in data:
                data = data["config"]
        else:
            data = tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return data


def format_validation_error(exc: ValidationError) -> list[str]:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return lines


def load_experiment_config(path: Path, overrides: list[str] | None = None) -> ExperimentConfig:
    data = apply_overrides(read_config_data(path), overrides or [])
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("invalid config:\n  " + "\n  ".join(format_validation_error(exc))) from exc
    # relative section paths are resolved against the config file
    base = Path(path).resolve().parent
    for entry in config.dataset.sections:
        if not entry.path.is_absolute():
            entry.path = (base / entry.path).resolve()
    return config


def check_paths(config: ExperimentConfig) -> list[str]:
    """Problems with referenced input files, as ``key.path: message`` lines."""
    problems = []
    if config.dataset.source == "csv":
        for i, entry in enumerate(config.dataset.sections):
            if not entry.path.is_file():
                problems.append(f"dataset.sections.{i}.path: file not found: {entry.path}")
    return problems
