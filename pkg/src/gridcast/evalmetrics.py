"""Point metrics, peak-load error, drift segmentation and hierarchical coherency."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np
import pandas as pd

from .errors import EvaluationError

log = logging.getLogger(__name__)

MAPE_GUARD = 1e-6
FLOAT_FORMAT = "%.12g"
METRIC_COLUMNS = ["series_id", "paradigm", "model", "FB", "nMAE_pct", "MSE", "MAPE_pct"]
PEAK_COLUMNS = ["series_id", "period", "actual_peak", "predicted_at_peak", "error_pct"]


@dataclass(frozen=True)
class Metrics:
    fb: float
    nmae: float  # percent of max(y)
    mse: float
    mape: float  # percent, over |y| > MAPE_GUARD
    mae: float
    mape_unguarded: float
    mape_excluded: int
    n: int

    def as_tuple(self):
        return (self.fb, self.nmae, self.mse, self.mape)


def _pair(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise EvaluationError(f"actual and predicted lengths differ: {y.shape} vs {yhat.shape}")
    if len(y) == 0:
        raise EvaluationError("cannot score an empty sequence")
    return y, yhat


def compute_metrics(y, yhat) -> Metrics:
    """FB, nMAE %, MSE and MAPE % on the normalized scale.

    FB = (sum(yhat) - sum(y)) / (sum(yhat) + sum(y)), positive when over-forecasting.
    MAPE skips points with |y| <= 1e-6; ``mape_excluded`` counts them.
    """
    y, yhat = _pair(y, yhat)
    err = yhat - y
    peak = y.max()
    if not peak > 0:
        raise EvaluationError("nMAE undefined: max of the ground truth is not positive")
    mae = float(np.mean(np.abs(err)))
    keep = np.abs(y) > MAPE_GUARD
    mape = float(100.0 * np.mean(np.abs(err[keep]) / np.abs(y[keep]))) if keep.any() else float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        unguarded = float(100.0 * np.mean(np.abs(err) / np.abs(y)))
    denom = yhat.sum() + y.sum()
    fb = float((yhat.sum() - y.sum()) / denom) if denom != 0 else float("nan")
    return Metrics(
        fb=fb,
        nmae=100.0 * mae / peak,
        mse=float(np.mean(err**2)),
        mape=mape,
        mae=mae,
        mape_unguarded=unguarded,
        mape_excluded=int((~keep).sum()),
        n=len(y),
    )


@dataclass
class MetricReport:
    table: pd.DataFrame  # one row per series
    meta: Dict[str, object] = field(default_factory=dict)

    def aggregate(self) -> pd.DataFrame:
        cols = ["FB", "nMAE_pct", "MSE", "MAPE_pct"]
        return self.table[cols].agg(["min", "mean", "max"])

    def mean_nmae(self) -> float:
        return float(self.table["nMAE_pct"].mean())

    def nmae(self) -> Dict[str, float]:
        return dict(zip(self.table["series_id"], self.table["nMAE_pct"]))


def metric_report(actual: Mapping[str, np.ndarray], predicted: Mapping[str, np.ndarray], **meta) -> MetricReport:
    rows = []
    for sid in sorted(actual):
        if sid not in predicted:
            raise EvaluationError(f"no predictions for series {sid!r}")
        m = compute_metrics(actual[sid], predicted[sid])
        rows.append(
            {
                "series_id": sid,
                "paradigm": meta.get("paradigm", ""),
                "model": meta.get("model", ""),
                "FB": m.fb,
                "nMAE_pct": m.nmae,
                "MSE": m.mse,
                "MAPE_pct": m.mape,
                "MAPE_unguarded_pct": m.mape_unguarded,
                "MAPE_excluded": m.mape_excluded,
            }
        )
    return MetricReport(pd.DataFrame(rows), dict(meta))


def write_metrics_csv(reports, path) -> None:
    frame = pd.concat([r.table[METRIC_COLUMNS] for r in reports], ignore_index=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


# --------------------------------------------------------------- peaks


def _period_keys(index: pd.DatetimeIndex, period: str):
    if period == "monthly":
        return index.strftime("%Y-%m"), lambda key: pd.Period(key, "M").days_in_month * 24
    if period == "annual":
        return index.strftime("%Y"), lambda key: (366 if pd.Period(key, "Y").is_leap_year else 365) * 24
    if period == "all":
        return np.full(len(index), "all"), None
    raise EvaluationError(f"unknown peak period {period!r}")


def peak_error(actual, predicted, timestamps=None, period: str = "monthly", series_id: str = "") -> pd.DataFrame:
    """Error at each period's actual peak, as a percentage of that peak.

    The earliest hour wins on tied peaks. Periods not fully covered by finite
    predictions are skipped (``period="all"`` treats the window as one period).
    """
    y, yhat = _pair(actual, predicted)
    if timestamps is None:
        if period != "all":
            raise EvaluationError("timestamps are required for monthly/annual peaks")
        timestamps = pd.date_range("2000-01-01", periods=len(y), freq="h")
    index = pd.DatetimeIndex(timestamps)
    if len(index) != len(y):
        raise EvaluationError("timestamps do not align with the series")
    keys, expected_hours = _period_keys(index, period)
    keys = np.asarray(keys)
    rows = []
    for key in pd.unique(keys):
        sel = np.flatnonzero((keys == key) & np.isfinite(yhat))
        if expected_hours is not None and len(sel) != expected_hours(key):
            log.info("series %s: skipping incomplete %s period %s (%d hours)", series_id, period, key, len(sel))
            continue
        i = sel[int(np.argmax(y[sel]))]
        peak = y[i]
        if not peak > 0:
            raise EvaluationError(f"non-positive peak in period {key}")
        rows.append(
            {
                "series_id": series_id,
                "period": key,
                "peak_time": index[i],
                "actual_peak": peak,
                "predicted_at_peak": yhat[i],
                "error_pct": 100.0 * abs(yhat[i] - peak) / peak,
            }
        )
    return pd.DataFrame(rows, columns=["series_id", "period", "peak_time", "actual_peak", "predicted_at_peak", "error_pct"])


def write_peaks_csv(frames, path) -> None:
    frame = pd.concat(list(frames), ignore_index=True) if frames else pd.DataFrame(columns=PEAK_COLUMNS)
    frame[PEAK_COLUMNS].to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


# --------------------------------------------------------------- drift


def drift_segment_report(local: MetricReport, global_: MetricReport, labels: Mapping[str, str]) -> pd.DataFrame:
    """Mean nMAE per drift segment and ``change % = 100 (local - global) / local``."""
    if local.meta.get("eval_window") != global_.meta.get("eval_window"):
        raise EvaluationError("local and global reports cover different evaluation windows")
    a, b = local.nmae(), global_.nmae()
    if set(a) != set(b):
        raise EvaluationError("local and global reports cover different series")
    missing = sorted(set(a) - set(labels))
    if missing:
        raise EvaluationError(f"drift labels missing for series {missing}")
    rows = []
    for segment in ("stable", "drifting"):
        ids = [s for s in sorted(a) if labels[s] == segment]
        if not ids:
            continue
        lo = float(np.mean([a[s] for s in ids]))
        gl = float(np.mean([b[s] for s in ids]))
        rows.append(
            {
                "segment": segment,
                "model": local.meta.get("model", ""),
                "n_series": len(ids),
                "local_nMAE_pct": lo,
                "global_nMAE_pct": gl,
                "change_pct": 100.0 * (lo - gl) / lo,
            }
        )
    return pd.DataFrame(rows)


# ----------------------------------------------------------- coherency


@dataclass
class CoherencyResult:
    gap: np.ndarray
    mean_abs_gap: float
    summary: float  # mean |gap| / mean actual system load

    def frame(self, timestamps=None) -> pd.DataFrame:
        out = pd.DataFrame({"gap": self.gap})
        if timestamps is not None:
            out.insert(0, "timestamp", pd.DatetimeIndex(timestamps).strftime("%Y-%m-%dT%H:00:00Z"))
        return out


def coherency_gap(area_forecasts: Mapping[str, np.ndarray], system_forecast, system_actual=None) -> CoherencyResult:
    """``gap_t = sum_a yhat_{a,t} - yhat_{system,t}`` on the raw scale; reporting only."""
    system = np.asarray(system_forecast, dtype=float)
    if not area_forecasts:
        raise EvaluationError("no area forecasts given")
    total = np.zeros_like(system)
    for sid, f in sorted(area_forecasts.items()):
        f = np.asarray(f, dtype=float)
        if f.shape != system.shape:
            raise EvaluationError(f"forecast for {sid!r} is not aligned with the system forecast")
        total = total + f
    gap = total - system
    mean_abs = float(np.mean(np.abs(gap)))
    scale = float(np.mean(system_actual)) if system_actual is not None else float(np.mean(system))
    if system_actual is not None and np.shape(system_actual) != system.shape:
        raise EvaluationError("system actuals are not aligned with the system forecast")
    return CoherencyResult(gap, mean_abs, mean_abs / scale if scale else float("nan"))
