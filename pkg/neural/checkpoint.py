"""
Checkpoint container.

Layout (all integers little-endian)::

    b"DVLBCKPT"                 magic, 8 bytes
    uint32                      format version
    uint64                      header length in bytes
    header                      UTF-8 JSON (CheckpointHeader)
    tensor data                 float64 '<f8', C order, in header.tensors order

The header lists each tensor's name and shape, so a file can be read and
validated without any other context.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from neural.model import LayerSpec, ModelState, expected_shapes
from utils.errors import ModelError

logger = logging.getLogger("dvlbeam.checkpoint")

MAGIC = b"DVLBCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointFormatError(ModelError):
    """File is not a readable checkpoint of a supported version."""


class TensorEntry(BaseModel):
    name: str
    shape: list[int]


class CheckpointHeader(BaseModel):
    format_version: int = FORMAT_VERSION
    estimator: str
    missing_mask: list[bool]
    window: int
    step: int = 0
    specs: list[LayerSpec]
    tensors: list[TensorEntry] = Field(default_factory=list)
    # standardisation applied around the network, by name
    normalization: dict[str, list[float]] = Field(default_factory=dict)
    extra: dict[str, str | int | float | bool | list[int]] = Field(default_factory=dict)


def save_checkpoint(path: Path, header: CheckpointHeader, state: ModelState) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    names = list(state.params)
    header = header.model_copy(
        update={
            "specs": state.specs,
            "step": state.step,
            "tensors": [TensorEntry(name=n, shape=list(state.params[n].shape)) for n in names],
        }
    )
    blob = header.model_dump_json().encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(state.params[name], dtype="<f8").tobytes())
    logger.info("Checkpoint saved: %s (%d tensors)", path.name, len(names))
    return path


def _parse_header(data: bytes, path: Path) -> tuple[CheckpointHeader, int]:
    """Validated header and the byte offset where tensor data starts."""
    if len(data) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: truncated checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")

    start = _PREFIX.size
    try:
        header = CheckpointHeader.model_validate_json(data[start : start + header_len])
    except ValidationError as exc:
        raise CheckpointFormatError(f"{path}: invalid header: {exc}") from exc
    return header, start + header_len


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError as exc:
        raise ModelError(f"checkpoint not found: {path}") from exc


def read_header(path: Path) -> CheckpointHeader:
    path = Path(path)
    return _parse_header(_read_bytes(path), path)[0]


def load_checkpoint(path: Path) -> tuple[CheckpointHeader, ModelState]:
    """Read a checkpoint; shapes are validated against the stored layer specs."""
    path = Path(path)
    data = _read_bytes(path)
    header, offset = _parse_header(data, path)

    expected = expected_shapes(header.specs)
    params: dict[str, np.ndarray] = {}
    for entry in header.tensors:
        shape = tuple(entry.shape)
        if expected.get(entry.name) != shape:
            raise CheckpointFormatError(
                f"{path}: tensor {entry.name} shape {shape} does not match layer specs"
            )
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointFormatError(f"{path}: truncated tensor data for {entry.name}")
        params[entry.name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end

    if offset != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - offset} trailing bytes")
    if set(params) != set(expected):
        raise CheckpointFormatError(f"{path}: tensors {sorted(set(expected) - set(params))} missing")

    state = ModelState(specs=header.specs, params=params, step=header.step)
    return header, state
