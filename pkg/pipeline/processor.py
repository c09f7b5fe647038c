from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum, auto
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from config.experiment import ExperimentConfig
from dvl.dataset import (
    Section,
    SectionSet,
    WindowBatch,
    check_leakage,
    corrupt_section,
    describe_mask,
    load_csv,
    split_sections,
    stack_windows,
    window_sections,
    write_csv,
)
from dvl.error_model import ErrorParams
from dvl.geometry import BeamGeometry, build_geometry_deg, solve_velocities
from dvl.synthetic import synth_section
from pipeline import report as report_io
from pipeline.estimators import (
    DISPLAY_NAMES,
    Estimator,
    load_estimator,
    predict_missing,
    reconstruct_batch,
    save_estimator,
)
from pipeline.metrics import BeamDiagnostics, EvalReport, build_report, compute_metrics, mae, rmse
from pipeline.trainer import EpochCallback, LossHistory, train
from utils.errors import DataError, DVLBeamError, ModelError, TrainingError
from utils.seeding import derive_seed

logger = logging.getLogger("dvlbeam.processor")


class Stage(Enum):
    LOAD = auto()
    CORRUPT = auto()
    WINDOW = auto()
    TRAIN = auto()
    EVALUATE = auto()
    SIMULATE = auto()


# Failures that are not already categorised are re-raised as these
_STAGE_ERRORS: dict[Stage, type[DVLBeamError]] = {
    Stage.LOAD: DataError,
    Stage.CORRUPT: DataError,
    Stage.WINDOW: DataError,
    Stage.TRAIN: TrainingError,
    Stage.EVALUATE: ModelError,
    Stage.SIMULATE: DataError,
}


@dataclass
class TrainResult:
    kind: str
    checkpoint: Path
    loss_csv: Path
    skipped: bool = False
    history: LossHistory | None = None


class Processor:
    """
    Runs one experiment: data → unit-under-test corruption → windows →
    training / evaluation, with a fixed output layout::

      <out>/resolved_config.json
      <out>/checkpoints/<estimator>.ckpt
      <out>/losses/loss_<estimator>.csv
      <out>/reports/{table.txt, metrics.csv, metrics_by_section.csv,
                     beam_diagnostics.csv, report.json}

    Restartability:
      ``train(resume=True)`` skips every estimator whose checkpoint and loss
      CSV already exist.
    """

    def __init__(self, config: ExperimentConfig) -> None:
        self._config = config.resolved()
        self._geom: BeamGeometry | None = None
        self._sections: SectionSet | None = None

    @property
    def config(self) -> ExperimentConfig:
        return self._config

    @property
    def geometry(self) -> BeamGeometry:
        if self._geom is None:
            self._geom = build_geometry_deg(self._config.geometry.alpha_deg)
        return self._geom

    # ------------------------------------------------------------------
    # Output paths
    # ------------------------------------------------------------------

    @property
    def output_dir(self) -> Path:
        return self._config.output_dir

    def checkpoint_path(self, kind: str) -> Path:
        return self.output_dir / "checkpoints" / f"{kind}.ckpt"

    def loss_path(self, kind: str) -> Path:
        return self.output_dir / "losses" / f"loss_{kind}.csv"

    @property
    def reports_dir(self) -> Path:
        return self.output_dir / "reports"

    def write_resolved_config(self) -> Path:
        path = self.output_dir / "resolved_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self._config.to_json() + "\n", encoding="utf-8")
        return path

    # ------------------------------------------------------------------
    # Stage helpers
    # ------------------------------------------------------------------

    @contextmanager
    def _stage(self, stage: Stage, what: str) -> Iterator[None]:
        logger.info("[RUN ] %s: %s", stage.name.title(), what)
        try:
            yield
        except DVLBeamError:
            raise
        except Exception as exc:
            logger.error("%s failed: %s", stage.name.title(), exc, exc_info=True)
            raise _STAGE_ERRORS[stage](f"{stage.name.lower()} failed: {exc}") from exc

    def error_params(self, section_name: str) -> ErrorParams:
        """Error model of the unit under test; noise seeded per section."""
        em = self._config.error_model
        seed = derive_seed(self._config.seed, "corruption", section_name)
        if not em.enabled:
            return ErrorParams.error_free(seed=seed)
        return ErrorParams(bias=em.bias, scale=em.scale, noise_std=em.noise_std, seed=seed)

    # ------------------------------------------------------------------
    # Data
    # ------------------------------------------------------------------

    def _synthesise(self) -> tuple[list[Section], dict[str, list[str]]]:
        syn = self._config.dataset.synthetic
        n_train, n_test = syn.train_sections, syn.test_sections
        sections: list[Section] = []
        assignment: dict[str, list[str]] = {"train": [], "test": []}
        for k in range(n_train + n_test):
            role = "train" if k < n_train else "test"
            name = f"{role}_{k + 1:02d}"
            # contiguous, non-overlapping time axes across sections
            sections.append(
                synth_section(
                    name=name,
                    profile=syn.profile,
                    duration_s=syn.duration_s,
                    rng_seed=derive_seed(self._config.seed, "synthesis", k),
                    geom=self.geometry,
                    t0=float(k * syn.duration_s),
                    constant_velocity=syn.constant_velocity,
                )
            )
            assignment[role].append(name)
        return sections, assignment

    def _read_recorded(self) -> tuple[list[Section], dict[str, list[str]]]:
        ds = self._config.dataset
        sections = [load_csv(e.path, ds.schema_map, name=e.name) for e in ds.sections]
        assignment: dict[str, list[str]] = {"train": [], "test": []}
        for e in ds.sections:
            assignment[e.role].append(e.name)
        return sections, assignment

    def load_sections(self) -> SectionSet:
        """Load (or synthesise) every section and corrupt it with the error model."""
        if self._sections is not None:
            return self._sections

        ds = self._config.dataset
        with self._stage(Stage.LOAD, f"{ds.source} sections"):
            if ds.source == "synthetic":
                sections, assignment = self._synthesise()
            else:
                sections, assignment = self._read_recorded()

        with self._stage(Stage.CORRUPT, "unit-under-test error model"):
            corrupted = [
                corrupt_section(s, self.geometry, self.error_params(s.name)) for s in sections
            ]
        self._sections = split_sections(corrupted, assignment)
        return self._sections

    def windows(self) -> tuple[list, list]:
        sections = self.load_sections()
        w = self._config.window
        mask = w.mask()
        with self._stage(Stage.WINDOW, f"N={w.length}, missing beams {describe_mask(mask)}"):
            train_samples = window_sections(sections.train, w.length, mask)
            test_samples = window_sections(sections.test, w.length, mask)
        try:
            check_leakage(train_samples, test_samples)
        except DataError as exc:
            logger.warning("Train/test leakage: %s", exc)
        logger.info("Windows: %d train / %d test", len(train_samples), len(test_samples))
        return train_samples, test_samples

    # ------------------------------------------------------------------
    # Training
    # ------------------------------------------------------------------

    def train(self, resume: bool = False, epoch_callback: EpochCallback | None = None) -> list[TrainResult]:
        """Train every configured neural estimator; returns one result per estimator."""
        logger.info("=== Training: %s ===", self.output_dir)
        self.write_resolved_config()
        kinds = self._config.neural_estimators
        if not kinds:
            logger.warning("No neural estimator configured; nothing to train")
            return []

        results: list[TrainResult] = []
        samples: tuple[list, list] | None = None
        for kind in kinds:
            ckpt, loss_csv = self.checkpoint_path(kind), self.loss_path(kind)
            if resume and ckpt.is_file() and loss_csv.is_file():
                logger.info("[SKIP] %s already trained: %s", DISPLAY_NAMES[kind], ckpt.name)
                results.append(TrainResult(kind, ckpt, loss_csv, skipped=True))
                continue

            if samples is None:
                samples = self.windows()
            train_samples, test_samples = samples

            with self._stage(Stage.TRAIN, DISPLAY_NAMES[kind]):
                estimator, history = train(
                    kind,
                    train_samples,
                    test_samples,
                    self._config.train_config(kind),
                    architecture=self._config.architecture(kind),
                    epoch_callback=epoch_callback,
                )
                save_estimator(estimator, ckpt, extra={"seed": self._config.seed})
                report_io.write_csv(history.to_frame(), loss_csv)
            logger.info("Loss history saved: %s (%d epochs)", loss_csv.name, len(history))
            results.append(TrainResult(kind, ckpt, loss_csv, history=history))

        logger.info("=== Done: training ===")
        return results

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def load_estimators(self, checkpoints: Mapping[str, Path] | None = None) -> list[Estimator]:
        """The average baseline plus every configured network, checked against mask and N."""
        w = self._config.window
        mask = w.mask()
        estimators = [Estimator(tag="average", missing_mask=mask, window=w.length)]
        for kind in self._config.neural_estimators:
            path = Path((checkpoints or {}).get(kind) or self.checkpoint_path(kind))
            if not path.is_file():
                raise ModelError(f"no checkpoint for {DISPLAY_NAMES[kind]}: {path} (run `dvlbeam train` first)")
            estimators.append(load_estimator(path, expected_tag=kind, missing_mask=mask, window=w.length))
        return estimators

    def evaluate(
        self,
        checkpoints: Mapping[str, Path] | None = None,
        oracle: bool = False,
    ) -> EvalReport:
        """Score every strategy on the test sections and write the report files."""
        logger.info("=== Evaluation: %s ===", self.output_dir)
        self.write_resolved_config()
        estimators = self.load_estimators(checkpoints)
        _, test_samples = self.windows()
        if not test_samples:
            raise DataError("no test samples; assign at least one section the test role")
        batch = stack_windows(test_samples)

        with self._stage(Stage.EVALUATE, f"{len(batch)} test samples"):
            missing_preds = {e.name: predict_missing(e, batch) for e in estimators}
            if oracle:
                missing_preds[DISPLAY_NAMES["oracle"]] = batch.target_missing.copy()
            result = self._score(batch, missing_preds)
            report_io.write_report(result, self.reports_dir, self._config.to_json())

        for name, m in result.metrics.items():
            logger.info("%-12s RMSE=%.4f MAE=%.4f R2=%.4f VAF=%.2f", name, m.rmse, m.mae, m.r2, m.vaf)
        logger.info("=== Done: evaluation ===")
        return result

    def _score(self, batch: WindowBatch, missing_preds: Mapping[str, np.ndarray]) -> EvalReport:
        geom = self.geometry
        # ground truth: all four (corrupted) beams of the current epoch
        truth = np.linalg.norm(solve_velocities(geom, batch.target_all), axis=1)
        norms = {
            name: np.linalg.norm(solve_velocities(geom, reconstruct_batch(batch, preds)), axis=1)
            for name, preds in missing_preds.items()
        }
        result = build_report(truth, norms)

        sections = np.array(batch.sections)
        for section in dict.fromkeys(batch.sections):
            idx = sections == section
            result.per_section[section] = {
                name: compute_metrics(truth[idx], norm[idx]) for name, norm in norms.items()
            }

        missing_beams = [i + 1 for i, m in enumerate(batch.missing_mask) if m]
        for name, preds in missing_preds.items():
            result.beam_diagnostics[name] = [
                BeamDiagnostics(
                    beam=beam,
                    rmse=rmse(batch.target_missing[:, j], preds[:, j]),
                    mae=mae(batch.target_missing[:, j], preds[:, j]),
                )
                for j, beam in enumerate(missing_beams)
            ]
        return result

    # ------------------------------------------------------------------
    # Simulation
    # ------------------------------------------------------------------

    def simulate(self, output_dir: Path | None = None) -> list[Path]:
        """
        Write the synthetic, error-model-corrupted sections as CSVs in the
        configured schema, plus ``sections.toml`` listing them with their roles.
        """
        dest = Path(output_dir or self._config.dataset.synthetic.output_dir)
        logger.info("=== Simulation: %s ===", dest)
        with self._stage(Stage.SIMULATE, f"profile {self._config.dataset.synthetic.profile}"):
            sections, assignment = self._synthesise()
        with self._stage(Stage.CORRUPT, "unit-under-test error model"):
            sections = [corrupt_section(s, self.geometry, self.error_params(s.name)) for s in sections]

        schema = self._config.dataset.schema_map
        roles = {name: role for role, names in assignment.items() for name in names}
        paths = [write_csv(s, dest / f"{s.name}.csv", schema) for s in sections]

        listing = ["# Generated by `dvlbeam simulate`; paste into an experiment config.", ""]
        for s, path in zip(sections, paths):
            listing += [
                "[[dataset.sections]]",
                f'name = "{s.name}"',
                f'path = "{path.name}"',
                f'role = "{roles[s.name]}"',
                "",
            ]
        manifest = dest / "sections.toml"
        manifest.write_text("\n".join(listing), encoding="utf-8")
        logger.info("=== Done: %d section(s) written to %s ===", len(paths), dest)
        return paths
