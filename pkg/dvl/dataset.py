from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from dvl.error_model import ErrorParams, corrupt_series
from dvl.geometry import N_BEAMS, Array, BeamGeometry, BeamVelocities, DVLVelocity, solve_velocities
from utils.errors import DataError

logger = logging.getLogger("dvlbeam.dataset")

Role = Literal["train", "test"]

DEFAULT_WINDOW = 3
SAMPLE_PERIOD_S = 1.0


class MissingColumn(DataError):
    """A column named in the schema map is absent from the file."""


class NonMonotonicTime(DataError):
    """Timestamps are not strictly increasing."""


class ParseError(DataError):
    """A field could not be parsed as a finite number."""


class SectionTooShort(DataError):
    """A section has no more samples than the window length."""


class MaskUnsupported(DataError):
    """Missing-beam mask outside the supported 1–2 missing beams."""


class OverlappingAssignment(DataError):
    """A section is assigned to both train and test."""


class UnassignedSection(DataError):
    """A section is missing from the assignment, or the assignment names an unknown section."""


class SchemaMap(BaseModel):
    """
    Column names of a recorded DVL CSV.

    The default follows the A-KIT DVL export layout as used here: a time
    column, four beam-velocity columns and the three reference DVL-frame
    velocity components.
    """

    time: str = "time"
    beams: list[str] = Field(default_factory=lambda: ["beam_1", "beam_2", "beam_3", "beam_4"])
    velocity: list[str] = Field(default_factory=lambda: ["v_x", "v_y", "v_z"])
    delimiter: str = ","

    @field_validator("beams")
    @classmethod
    def _four_beams(cls, v: list[str]) -> list[str]:
        if len(v) != N_BEAMS:
            raise ValueError(f"beams must name exactly {N_BEAMS} columns, got {len(v)}")
        return v

    @field_validator("velocity")
    @classmethod
    def _three_axes(cls, v: list[str]) -> list[str]:
        if len(v) != 3:
            raise ValueError(f"velocity must name exactly 3 columns, got {len(v)}")
        return v

    @field_validator("delimiter")
    @classmethod
    def _single_char(cls, v: str) -> str:
        if len(v) != 1:
            raise ValueError("delimiter must be a single character")
        return v

    def columns(self) -> list[str]:
        return [self.time, *self.beams, *self.velocity]


@dataclass(frozen=True)
class BeamRecord:
    t: float
    beams: BeamVelocities
    v_true: DVLVelocity


@dataclass(frozen=True)
class Section:
    """A contiguous 1 Hz recording: timestamps, beam measurements, reference velocity."""

    name: str
    t: Array
    beams: Array
    v_true: Array

    def __post_init__(self) -> None:
        n = self.t.shape[0]
        if self.beams.shape != (n, N_BEAMS) or self.v_true.shape != (n, 3):
            raise DataError(
                f"section {self.name!r}: inconsistent shapes t={self.t.shape}, "
                f"beams={self.beams.shape}, v_true={self.v_true.shape}"
            )
        for arr in (self.t, self.beams, self.v_true):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __getitem__(self, i: int) -> BeamRecord:
        return BeamRecord(t=float(self.t[i]), beams=self.beams[i], v_true=self.v_true[i])

    @property
    def duration_s(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0


@dataclass
class SectionSet:
    sections: dict[str, Section]
    roles: dict[str, Role]
    warnings: list[str] = field(default_factory=list)

    def by_role(self, role: Role) -> list[Section]:
        return [self.sections[name] for name, r in self.roles.items() if r == role]

    @property
    def train(self) -> list[Section]:
        return self.by_role("train")

    @property
    def test(self) -> list[Section]:
        return self.by_role("test")


@dataclass(frozen=True)
class WindowSample:
    """
    One regression sample at time index ``t`` of a section.

    ``past`` holds the N complete measurements at ``t-N .. t-1``;
    ``times`` the N+1 timestamps involved (past rows, then ``t``).
    """

    section: str
    times: Array
    past: Array
    current_available: Array
    missing_mask: tuple[bool, ...]
    target_missing: Array
    target_all: BeamVelocities
    v_true_t: DVLVelocity


@dataclass(frozen=True)
class WindowBatch:
    """Stacked view of a sample sequence, leading axis = sample."""

    missing_mask: tuple[bool, ...]
    sections: list[str]
    times: Array
    past: Array
    current_available: Array
    target_missing: Array
    target_all: Array
    v_true: Array

    def __len__(self) -> int:
        return int(self.past.shape[0])

    @property
    def window(self) -> int:
        return int(self.past.shape[1])


# ----------------------------------------------------------------------
# Masks
# ----------------------------------------------------------------------

def mask_from_beams(missing_beams: Iterable[int]) -> tuple[bool, ...]:
    """1-based missing beam numbers → 4-entry boolean mask (True = missing)."""
    beams = list(missing_beams)
    for b in beams:
        if not 1 <= b <= N_BEAMS:
            raise MaskUnsupported(f"beam numbers must be in 1..{N_BEAMS}, got {b}")
    return tuple((i + 1) in beams for i in range(N_BEAMS))


def validate_mask(missing_mask: Sequence[bool]) -> tuple[bool, ...]:
    mask = tuple(bool(m) for m in missing_mask)
    if len(mask) != N_BEAMS:
        raise MaskUnsupported(f"missing mask must have {N_BEAMS} entries, got {len(mask)}")
    n_missing = sum(mask)
    if not 1 <= n_missing <= 2:
        raise MaskUnsupported(f"{n_missing} missing beam(s); only 1 or 2 missing beams are supported")
    return mask


def describe_mask(missing_mask: Sequence[bool]) -> str:
    return ",".join(str(i + 1) for i, m in enumerate(missing_mask) if m)


# ----------------------------------------------------------------------
# CSV ingestion / emission
# ----------------------------------------------------------------------

def _parse_float(text: object) -> float:
    # correctly rounded decimal parse; NaN marks a cell that does not parse
    try:
        return float(text)
    except (TypeError, ValueError):
        return float("nan")


def load_csv(path: Path, schema: SchemaMap | None = None, name: str | None = None) -> Section:
    """
    Load one recorded section.

    Raises MissingColumn, ParseError (with file line numbers) or
    NonMonotonicTime; every message names the file.
    """
    schema = schema or SchemaMap()
    path = Path(path)
    name = name or path.stem

    try:
        df = pd.read_csv(path, sep=schema.delimiter, encoding="utf-8", dtype=str)
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc

    missing = [c for c in schema.columns() if c not in df.columns]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")

    values = df[schema.columns()].map(_parse_float).to_numpy(dtype=np.float64)
    bad_rows = np.flatnonzero(~np.isfinite(values).all(axis=1))
    if bad_rows.size:
        # +2: header is line 1, data starts at line 2
        lines = ", ".join(str(int(r) + 2) for r in bad_rows[:10])
        more = f" (+{bad_rows.size - 10} more)" if bad_rows.size > 10 else ""
        raise ParseError(f"{path}: non-finite or unparsable value at line(s) {lines}{more}")

    t = values[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0):
        first = int(np.flatnonzero(steps <= 0)[0]) + 3
        raise NonMonotonicTime(f"{path}: time is not strictly increasing at line {first}")
    if steps.size and np.any(np.abs(steps - SAMPLE_PERIOD_S) > 0.1 * SAMPLE_PERIOD_S):
        logger.warning("%s: sample spacing deviates from %.1f s", path.name, SAMPLE_PERIOD_S)

    section = Section(
        name=name,
        t=t.copy(),
        beams=values[:, 1 : 1 + N_BEAMS].copy(),
        v_true=values[:, 1 + N_BEAMS :].copy(),
    )
    logger.info("Loaded %s: %d records over %.0f s", path.name, len(section), section.duration_s)
    return section


def write_csv(section: Section, path: Path, schema: SchemaMap | None = None) -> Path:
    """Write a section in the layout :func:`load_csv` reads (exact float round trip)."""
    schema = schema or SchemaMap()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([section.t, section.beams, section.v_true])
    df = pd.DataFrame(data, columns=schema.columns())
    df.to_csv(path, sep=schema.delimiter, index=False, float_format="%.17g", encoding="utf-8")
    return path


# ----------------------------------------------------------------------
# Unit-under-test emulation
# ----------------------------------------------------------------------

def corrupt_section(section: Section, geom: BeamGeometry, params: ErrorParams) -> Section:
    """Replace a section's beams by the error-model output of its reference velocity."""
    beams = corrupt_series(geom, section.v_true, params)
    return replace(section, beams=beams)


def reference_velocities(section: Section, geom: BeamGeometry) -> Array:
    """All-four-beam least-squares velocity of every record."""
    return solve_velocities(geom, section.beams)


# ----------------------------------------------------------------------
# Windowing
# ----------------------------------------------------------------------

def make_windows(
    section: Section,
    n: int = DEFAULT_WINDOW,
    missing_mask: Sequence[bool] = (False, False, True, True),
) -> list[WindowSample]:
    """One sample per index ``t`` in ``[n, len)``; windows stay inside the section."""
    mask = validate_mask(missing_mask)
    if n < 1:
        raise SectionTooShort(f"window length must be >= 1, got {n}")
    if len(section) <= n:
        raise SectionTooShort(
            f"section {section.name!r} has {len(section)} records; window {n} needs more than {n}"
        )

    missing = np.array(mask)
    available = ~missing
    samples: list[WindowSample] = []
    for t in range(n, len(section)):
        current = section.beams[t]
        samples.append(
            WindowSample(
                section=section.name,
                times=section.t[t - n : t + 1],
                past=section.beams[t - n : t],
                current_available=current[available],
                missing_mask=mask,
                target_missing=current[missing],
                target_all=current,
                v_true_t=section.v_true[t],
            )
        )
    return samples


def stack_windows(samples: Sequence[WindowSample]) -> WindowBatch:
    if not samples:
        raise DataError("no window samples to stack")
    masks = {s.missing_mask for s in samples}
    if len(masks) != 1:
        raise MaskUnsupported("samples with different missing masks cannot be stacked")
    return WindowBatch(
        missing_mask=samples[0].missing_mask,
        sections=[s.section for s in samples],
        times=np.stack([s.times for s in samples]),
        past=np.stack([s.past for s in samples]),
        current_available=np.stack([s.current_available for s in samples]),
        target_missing=np.stack([s.target_missing for s in samples]),
        target_all=np.stack([s.target_all for s in samples]),
        v_true=np.stack([s.v_true_t for s in samples]),
    )


def window_sections(
    sections: Sequence[Section], n: int, missing_mask: Sequence[bool]
) -> list[WindowSample]:
    samples: list[WindowSample] = []
    for section in sections:
        samples.extend(make_windows(section, n, missing_mask))
    return samples


def check_leakage(train: Sequence[WindowSample], test: Sequence[WindowSample]) -> None:
    """Raise if any timestamp of a test sample also appears in a train sample."""
    train_times = {float(x) for s in train for x in s.times}
    test_sections = {s.section for s in test}
    shared = test_sections & {s.section for s in train}
    if shared:
        raise OverlappingAssignment(f"sections used for both train and test: {sorted(shared)}")
    for s in test:
        for x in s.times:
            if float(x) in train_times:
                raise OverlappingAssignment(
                    f"test sample in {s.section!r} at t={float(x):g} overlaps a train timestamp"
                )


# ----------------------------------------------------------------------
# Train / test split
# ----------------------------------------------------------------------

def split_sections(
    sections: Sequence[Section],
    assignment: Mapping[Role, Sequence[str]],
) -> SectionSet:
    """Assign every section exactly once to ``train`` or ``test``."""
    by_name = {s.name: s for s in sections}
    if len(by_name) != len(sections):
        raise OverlappingAssignment("section names must be unique")

    train = list(assignment.get("train", []))
    test = list(assignment.get("test", []))

    both = sorted(set(train) & set(test))
    if both:
        raise OverlappingAssignment(f"assigned to both train and test: {', '.join(both)}")
    dupes = sorted({n for n in train + test if (train + test).count(n) > 1})
    if dupes:
        raise OverlappingAssignment(f"assigned more than once: {', '.join(dupes)}")

    unknown = sorted(set(train + test) - set(by_name))
    if unknown:
        raise UnassignedSection(f"assignment names unknown section(s): {', '.join(unknown)}")
    unassigned = sorted(set(by_name) - set(train + test))
    if unassigned:
        raise UnassignedSection(f"section(s) without a role: {', '.join(unassigned)}")

    roles: dict[str, Role] = {n: "train" for n in train}
    roles.update({n: "test" for n in test})
    result = SectionSet(sections=by_name, roles=roles)

    if not test:
        msg = "test assignment is empty; test loss and evaluation will be unavailable"
        logger.warning(msg)
        result.warnings.append(msg)
    logger.info("Split %d section(s): %d train / %d test", len(by_name), len(train), len(test))
    return result
