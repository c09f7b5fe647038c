from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from utils.errors import DVLBeamError

# M = number of samples throughout; variances use the population convention.


class LengthMismatch(DVLBeamError, ValueError):
    """Truth and prediction series differ in length."""


class EmptyNormSeries(DVLBeamError, ValueError):
    """A metric was asked for on an empty series."""


class ConstantTruth(DVLBeamError, ValueError):
    """Ground truth has zero variance; R² and VAF are undefined."""


class ZeroBaseline(DVLBeamError, ValueError):
    """Improvement over a non-positive baseline is undefined."""


def norm_series(values: ArrayLike, name: str = "series") -> np.ndarray:
    """Validate a velocity-norm series: 1-D, non-empty, finite, non-negative."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise EmptyNormSeries(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative norms")
    return arr


def _pair(truth: ArrayLike, pred: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(truth, dtype=np.float64).reshape(-1)
    x_hat = np.asarray(pred, dtype=np.float64).reshape(-1)
    if x.size != x_hat.size:
        raise LengthMismatch(f"truth has {x.size} samples, prediction {x_hat.size}")
    if x.size == 0:
        raise EmptyNormSeries("metric series are empty")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_hat))):
        raise ValueError("metric series contain non-finite values")
    return x, x_hat


def rmse(truth: ArrayLike, pred: ArrayLike) -> float:
    x, x_hat = _pair(truth, pred)
    return math.sqrt(float(np.mean((x - x_hat) ** 2)))


def mae(truth: ArrayLike, pred: ArrayLike) -> float:
    x, x_hat = _pair(truth, pred)
    return float(np.mean(np.abs(x - x_hat)))


def r_squared(truth: ArrayLike, pred: ArrayLike) -> float:
    x, x_hat = _pair(truth, pred)
    ss_tot = float(np.sum((x - x.mean()) ** 2))
    if x.size < 2 or ss_tot == 0.0:
        raise ConstantTruth("R² needs at least two samples of non-constant truth")
    ss_res = float(np.sum((x - x_hat) ** 2))
    return 1.0 - ss_res / ss_tot


def vaf(truth: ArrayLike, pred: ArrayLike) -> float:
    """Variance accounted for, in percent."""
    x, x_hat = _pair(truth, pred)
    var_x = float(np.var(x))
    if x.size < 2 or var_x == 0.0:
        raise ConstantTruth("VAF needs at least two samples of non-constant truth")
    return (1.0 - float(np.var(x - x_hat)) / var_x) * 100.0


def improvement_percent(baseline: float, candidate: float) -> float:
    if not baseline > 0:
        raise ZeroBaseline(f"baseline must be positive, got {baseline}")
    return 100.0 * (baseline - candidate) / baseline


@dataclass
class StrategyMetrics:
    rmse: float
    mae: float
    r2: float
    vaf: float


def compute_metrics(truth: ArrayLike, pred: ArrayLike) -> StrategyMetrics:
    """All four metrics; R² and VAF are NaN when the truth is constant."""
    try:
        r2, v = r_squared(truth, pred), vaf(truth, pred)
    except ConstantTruth:
        r2 = v = math.nan
    return StrategyMetrics(rmse=rmse(truth, pred), mae=mae(truth, pred), r2=r2, vaf=v)


@dataclass
class BeamDiagnostics:
    beam: int
    rmse: float
    mae: float


@dataclass
class EvalReport:
    """
    Pooled metrics per strategy plus RMSE/MAE improvement over the baseline.

    ``improvements`` is empty when the baseline strategy is absent.
    """

    metrics: dict[str, StrategyMetrics]
    baseline: str | None = "Average"
    improvements: dict[str, tuple[float, float]] = field(default_factory=dict)
    per_section: dict[str, dict[str, StrategyMetrics]] = field(default_factory=dict)
    beam_diagnostics: dict[str, list[BeamDiagnostics]] = field(default_factory=dict)
    n_samples: int = 0
    warnings: list[str] = field(default_factory=list)


def build_report(
    truth: ArrayLike,
    predictions: dict[str, ArrayLike],
    baseline: str | None = "Average",
    skip_improvement: tuple[str, ...] = ("Oracle",),
) -> EvalReport:
    """Score every strategy's norm series against *truth*."""
    x = norm_series(truth, "truth")
    metrics = {name: compute_metrics(x, norm_series(p, name)) for name, p in predictions.items()}

    report = EvalReport(metrics=metrics, n_samples=int(x.size))
    if baseline is None or baseline not in metrics:
        report.baseline = None
        return report

    report.baseline = baseline
    base = metrics[baseline]
    for name, m in metrics.items():
        if name == baseline or name in skip_improvement:
            continue
        try:
            report.improvements[name] = (
                improvement_percent(base.rmse, m.rmse),
                improvement_percent(base.mae, m.mae),
            )
        except ZeroBaseline:
            report.warnings.append(f"baseline error is zero; no improvement for {name}")
    return report
