from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import pandas as pd

from pipeline.metrics import EvalReport, StrategyMetrics

logger = logging.getLogger("dvlbeam.report")

# Loss and report CSVs carry 9 significant digits
CSV_FLOAT_FORMAT = "%.9g"

COLUMN_ORDER = ("LiBeamsNet", "MissBeamNet", "Average", "Oracle")
TABLE_ROWS = ("RMSE [m/s]", "RMSE [%]", "MAE [m/s]", "MAE [%]", "R²", "VAF")


def _columns(report: EvalReport) -> list[str]:
    known = [c for c in COLUMN_ORDER if c in report.metrics]
    return known + [c for c in report.metrics if c not in known]


def _fmt(value: float, digits: int) -> str:
    return "N/A" if value is None or math.isnan(value) else f"{value:.{digits}f}"


def table_frame(report: EvalReport) -> pd.DataFrame:
    """Metric rows × strategy columns, formatted like the comparison table."""
    cols = _columns(report)
    rows: dict[str, list[str]] = {r: [] for r in TABLE_ROWS}
    for name in cols:
        m = report.metrics[name]
        imp = report.improvements.get(name)
        rows["RMSE [m/s]"].append(_fmt(m.rmse, 4))
        rows["RMSE [%]"].append(_fmt(imp[0], 2) if imp else "N/A")
        rows["MAE [m/s]"].append(_fmt(m.mae, 4))
        rows["MAE [%]"].append(_fmt(imp[1], 2) if imp else "N/A")
        rows["R²"].append(_fmt(m.r2, 4))
        rows["VAF"].append(_fmt(m.vaf, 2))
    frame = pd.DataFrame.from_dict(rows, orient="index", columns=cols)
    frame.index.name = "Metric"
    return frame


def render_table(report: EvalReport) -> str:
    return table_frame(report).to_string()


def metrics_frame(report: EvalReport) -> pd.DataFrame:
    records = []
    for name in _columns(report):
        m = report.metrics[name]
        imp = report.improvements.get(name, (math.nan, math.nan))
        records.append(
            {
                "strategy": name,
                "rmse": m.rmse,
                "mae": m.mae,
                "r2": m.r2,
                "vaf": m.vaf,
                "rmse_improvement_pct": imp[0],
                "mae_improvement_pct": imp[1],
                "n_samples": report.n_samples,
            }
        )
    return pd.DataFrame.from_records(records)


def per_section_frame(report: EvalReport) -> pd.DataFrame:
    records = []
    for section, by_strategy in report.per_section.items():
        for name, m in by_strategy.items():
            records.append({"section": section, "strategy": name, **_metric_dict(m)})
    return pd.DataFrame.from_records(records, columns=["section", "strategy", "rmse", "mae", "r2", "vaf"])


def beam_diagnostics_frame(report: EvalReport) -> pd.DataFrame:
    records = [
        {"strategy": name, "beam": d.beam, "rmse": d.rmse, "mae": d.mae}
        for name, diags in report.beam_diagnostics.items()
        for d in diags
    ]
    return pd.DataFrame.from_records(records, columns=["strategy", "beam", "rmse", "mae"])


def _metric_dict(m: StrategyMetrics) -> dict[str, float]:
    return {"rmse": m.rmse, "mae": m.mae, "r2": m.r2, "vaf": m.vaf}


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, encoding="utf-8", lineterminator="\n")
    return path


def write_report(report: EvalReport, reports_dir: Path, resolved_config_json: str) -> list[Path]:
    """
    Write table.txt, metrics.csv, metrics_by_section.csv, beam_diagnostics.csv
    and report.json. The text table and the JSON both embed the resolved config.
    """
    reports_dir.mkdir(parents=True, exist_ok=True)
    config = json.loads(resolved_config_json)

    table_path = reports_dir / "table.txt"
    lines = [render_table(report), "", f"samples: {report.n_samples}"]
    lines += [f"warning: {w}" for w in report.warnings]
    lines += ["", "# resolved config", resolved_config_json]
    table_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    json_path = reports_dir / "report.json"
    payload = {
        "config": config,
        "n_samples": report.n_samples,
        "baseline": report.baseline,
        "metrics": {n: _metric_dict(m) for n, m in report.metrics.items()},
        "improvements": {n: {"rmse_pct": i[0], "mae_pct": i[1]} for n, i in report.improvements.items()},
        "per_section": {
            s: {n: _metric_dict(m) for n, m in by.items()} for s, by in report.per_section.items()
        },
        "warnings": report.warnings,
    }
    # NaN is not JSON; undefined metrics are written as null
    json_path.write_text(
        json.dumps(_nan_to_none(payload), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    paths = [
        table_path,
        write_csv(metrics_frame(report), reports_dir / "metrics.csv"),
        write_csv(per_section_frame(report), reports_dir / "metrics_by_section.csv"),
        write_csv(beam_diagnostics_frame(report), reports_dir / "beam_diagnostics.csv"),
        json_path,
    ]
    logger.info("Report written to %s", reports_dir)
    return paths


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    return obj
