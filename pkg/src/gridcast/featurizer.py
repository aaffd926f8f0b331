"""Supervised sample construction for one-hour-ahead load forecasting.

Every row targets hour ``tau`` and uses load values strictly before ``tau``.
Exogenous channels declared with ``alignment="target"`` are read at ``tau``
(forecast-available inputs such as temperature); calendar columns derive from
the target timestamp.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import FrozenSet, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import DataError
from .series_store import SeriesCollection

CALENDAR_PERIODS = {"hour": 24, "dow": 7, "month": 12, "doy": 365.25}


@dataclass(frozen=True)
class ExogenousFeature:
    channel: str
    alignment: str = "target"  # "target" (value at tau) or "lagged" (value at tau - 1)
    powers: Tuple[int, ...] = (1,)

    def __post_init__(self):
        if self.alignment not in ("target", "lagged"):
            raise DataError(f"exogenous alignment must be 'target' or 'lagged', got {self.alignment!r}")
        object.__setattr__(self, "powers", tuple(int(p) for p in self.powers))


@dataclass(frozen=True)
class FeatureSpec:
    window: int = 168
    lags: Tuple[int, ...] = (1, 2, 3, 24, 48, 72, 96, 120, 144, 168)
    poly_lags: Tuple[int, ...] = (1, 24)
    poly_degrees: Tuple[int, ...] = (2, 3)
    ma_windows: Tuple[int, ...] = (3, 12, 24, 72, 168)
    ema_span: Optional[int] = 168
    calendar: Tuple[str, ...] = ("hour", "dow", "month")
    holiday_flag: bool = True
    holidays: Tuple[str, ...] = ()
    pandemic: Optional[Tuple[str, str]] = ("2020-05-01", "2022-12-31")
    exogenous: Tuple[ExogenousFeature, ...] = (ExogenousFeature("temperature", "target", (1, 2)),)
    interactions: Tuple[Tuple[str, str], ...] = (("lag_1", "mave_168"), ("temperature", "hour_sin"))
    utc_offset_hours: int = 0

    def __post_init__(self):
        for name in ("lags", "poly_lags", "poly_degrees", "ma_windows", "calendar", "holidays"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(
            self,
            "exogenous",
            tuple(e if isinstance(e, ExogenousFeature) else ExogenousFeature(**e) for e in self.exogenous),
        )
        object.__setattr__(self, "interactions", tuple(tuple(pair) for pair in self.interactions))
        if self.pandemic is not None:
            object.__setattr__(self, "pandemic", tuple(self.pandemic))
        longest = max(self.lags + self.ma_windows, default=0)
        if longest > self.window:
            raise DataError(f"lag/moving-average reach {longest} exceeds window {self.window}")
        if any(k < 1 for k in self.lags + self.ma_windows):
            raise DataError("lags and moving-average windows must be >= 1")
        if set(self.poly_lags) - set(self.lags):
            raise DataError("polynomial lags must be members of the lag set")
        unknown = set(self.calendar) - set(CALENDAR_PERIODS)
        if unknown:
            raise DataError(f"unknown calendar encodings {sorted(unknown)}")
        base = set(self.base_feature_names())
        for a, b in self.interactions:
            for operand in (a, b):
                if operand not in base:
                    raise DataError(f"interaction operand {operand!r} is not a declared feature")

    def base_feature_names(self) -> list:
        names = [f"lag_{k}" for k in self.lags]
        names += [f"lag_{k}_pow{d}" for k in self.poly_lags for d in self.poly_degrees]
        names += [f"mave_{w}" for w in self.ma_windows]
        if self.ema_span:
            names.append(f"ema_{self.ema_span}")
        for unit in self.calendar:
            names += [f"{unit}_sin", f"{unit}_cos"]
        if self.holiday_flag:
            names.append("holiday")
        if self.pandemic is not None:
            names.append("pandemic")
        for e in self.exogenous:
            names += [e.channel if p == 1 else f"{e.channel}_pow{p}" for p in e.powers]
        return names

    def feature_names(self) -> list:
        return self.base_feature_names() + [f"{a}_x_{b}" for a, b in self.interactions]

    def target_time_columns(self) -> FrozenSet[str]:
        """Columns allowed to read exogenous values at the target hour."""
        cols = set()
        for e in self.exogenous:
            if e.alignment == "target":
                cols |= {e.channel if p == 1 else f"{e.channel}_pow{p}" for p in e.powers}
        for a, b in self.interactions:
            if a in cols or b in cols:
                cols.add(f"{a}_x_{b}")
        return frozenset(cols)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(**d)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SampleSet:
    """Feature matrix ``X`` (m x p), targets ``y`` and per-row provenance."""

    X: np.ndarray
    y: np.ndarray
    feature_names: Tuple[str, ...]
    series_ids: np.ndarray
    target_time: np.ndarray  # datetime64[h], UTC
    target_time_columns: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        if self.X.shape != (len(self.y), len(self.feature_names)):
            raise DataError(f"sample shapes disagree: X{self.X.shape}, y({len(self.y)}), p={len(self.feature_names)}")

    def __len__(self):
        return len(self.y)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    def rows(self, idx) -> "SampleSet":
        return SampleSet(
            self.X[idx], self.y[idx], self.feature_names, self.series_ids[idx], self.target_time[idx], self.target_time_columns
        )

    def for_series(self, sid: str) -> "SampleSet":
        return self.rows(np.flatnonzero(self.series_ids == sid))

    @classmethod
    def concat(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        if not parts:
            raise DataError("cannot pool zero sample sets")
        names = parts[0].feature_names
        for part in parts[1:]:
            if part.feature_names != names:
                raise DataError("pooling schema mismatch: feature names differ between series")
        return cls(
            np.vstack([q.X for q in parts]),
            np.concatenate([q.y for q in parts]),
            names,
            np.concatenate([q.series_ids for q in parts]),
            np.concatenate([q.target_time for q in parts]),
            parts[0].target_time_columns,
        )


def _local_calendar(start: pd.Timestamp, first: int, n: int, offset: int) -> pd.DatetimeIndex:
    utc = pd.date_range(start + pd.Timedelta(hours=first), periods=n, freq="h")
    return utc.tz_convert(None) + pd.Timedelta(hours=offset)


def _calendar_columns(local: pd.DatetimeIndex, unit: str) -> Tuple[np.ndarray, np.ndarray]:
    value = {
        "hour": local.hour,
        "dow": local.dayofweek,
        "month": local.month - 1,
        "doy": local.dayofyear - 1,
    }[unit].to_numpy(dtype=float)
    angle = 2.0 * np.pi * value / CALENDAR_PERIODS[unit]
    return np.sin(angle), np.cos(angle)


def ema(values: np.ndarray, span: int) -> np.ndarray:
    """Span-parameterised EMA, alpha = 2/(span+1), seeded with the first value."""
    alpha = 2.0 / (span + 1.0)
    out, _ = lfilter([alpha], [1.0, alpha - 1.0], values, zi=[(1.0 - alpha) * values[0]])
    return out


def build_samples(c: SeriesCollection, series_id: str, spec: FeatureSpec = FeatureSpec()) -> SampleSet:
    """Featurize one (already normalized) series of ``c``.

    Produces ``m = l - spec.window`` rows, the first one targeting hour
    ``spec.window``.
    """
    if series_id not in c.series:
        raise DataError(f"unknown series id {series_id!r}")
    y = np.asarray(c.series[series_id], dtype=float)
    l, w = len(y), spec.window
    m = l - w
    if m < 1:
        raise DataError(f"series {series_id!r} too short: length {l} needs at least {w + 1} hours")
    tau = np.arange(w, l)
    cols = {}

    for k in spec.lags:
        cols[f"lag_{k}"] = y[w - k : l - k]
    for k in spec.poly_lags:
        for d in spec.poly_degrees:
            cols[f"lag_{k}_pow{d}"] = cols[f"lag_{k}"] ** d
    csum = np.concatenate([[0.0], np.cumsum(y)])
    for win in spec.ma_windows:
        cols[f"mave_{win}"] = (csum[tau] - csum[tau - win]) / win
    if spec.ema_span:
        cols[f"ema_{spec.ema_span}"] = ema(y[: l - 1], spec.ema_span)[tau - 1]

    local = _local_calendar(c.start, w, m, spec.utc_offset_hours)
    for unit in spec.calendar:
        cols[f"{unit}_sin"], cols[f"{unit}_cos"] = _calendar_columns(local, unit)
    days = local.normalize()
    if spec.holiday_flag:
        holidays = pd.DatetimeIndex(pd.to_datetime(list(spec.holidays))).normalize()
        cols["holiday"] = days.isin(holidays).astype(float)
    if spec.pandemic is not None:
        lo, hi = (pd.Timestamp(t) for t in spec.pandemic)
        cols["pandemic"] = ((days >= lo) & (days <= hi)).astype(float)

    for e in spec.exogenous:
        if e.channel not in c.exogenous:
            raise DataError(f"missing exogenous channel {e.channel!r} for series {series_id!r}")
        channel = np.asarray(c.exogenous[e.channel], dtype=float)
        if len(channel) < l:
            raise DataError(f"exogenous channel {e.channel!r} covers {len(channel)} of {l} hours")
        aligned = channel[tau] if e.alignment == "target" else channel[tau - 1]
        for p in e.powers:
            cols[e.channel if p == 1 else f"{e.channel}_pow{p}"] = aligned**p

    for a, b in spec.interactions:
        cols[f"{a}_x_{b}"] = cols[a] * cols[b]

    names = spec.feature_names()
    X = np.column_stack([cols[n] for n in names])
    target_time = (c.start.tz_convert(None) + pd.to_timedelta(tau, unit="h")).to_numpy().astype("datetime64[h]")
    return SampleSet(
        X=X,
        y=y[w:].copy(),
        feature_names=names,
        series_ids=np.full(m, series_id, dtype=object),
        target_time=target_time,
        target_time_columns=spec.target_time_columns(),
    )


def build_pool(c: SeriesCollection, spec: FeatureSpec = FeatureSpec(), ids=None) -> SampleSet:
    """Row-concatenated samples ordered by series id, then time."""
    ids = c.ids if ids is None else sorted(ids)
    return SampleSet.concat([build_samples(c, sid, spec) for sid in ids])


# ------------------------------------------------------------ heterogeneity


@dataclass(frozen=True)
class HeterogeneityProfile:
    seasonality_index: float
    total_variation: float
    night_to_day: float
    weekend_to_weekday: float

    def as_tuple(self):
        return (self.seasonality_index, self.total_variation, self.night_to_day, self.weekend_to_weekday)


def heterogeneity_profile(series, start, utc_offset_hours: int = 0) -> HeterogeneityProfile:
    """Seasonality index, total variation, night/day and weekend/weekday ratios.

    Night is 00:00-05:59 and day 12:00-17:59 local time; weekend is Sat+Sun.
    """
    y = np.asarray(series, dtype=float)
    if len(y) < 14 * 24:
        raise DataError(f"heterogeneity profile needs at least 14 days, got {len(y)} hours")
    mean = y.mean()
    if not mean > 0:
        raise DataError("heterogeneity profile needs a strictly positive mean")
    if np.ptp(y) == 0:
        return HeterogeneityProfile(0.0, 0.0, 1.0, 1.0)
    local = _local_calendar(pd.Timestamp(start), 0, len(y), utc_offset_hours)
    hour = local.hour.to_numpy()
    dow = local.dayofweek.to_numpy()
    hourly = np.array([y[hour == h].mean() for h in range(24)])
    return HeterogeneityProfile(
        seasonality_index=float(hourly.std() / mean),
        total_variation=float(np.abs(np.diff(y)).mean() / mean),
        night_to_day=float(y[hour < 6].mean() / y[(hour >= 12) & (hour < 18)].mean()),
        weekend_to_weekday=float(y[dow >= 5].mean() / y[dow < 5].mean()),
    )
