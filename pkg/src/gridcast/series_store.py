"""Hourly load collections: ingestion, time splits, min-max scaling, hierarchy sums."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import DataError

log = logging.getLogger(__name__)

HOUR = pd.Timedelta(hours=1)
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:00:00Z"


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"expected a 1-D sequence, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _utc(ts) -> pd.Timestamp:
    ts = pd.Timestamp(ts)
    if ts.tzinfo is None:
        return ts.tz_localize("UTC")
    return ts.tz_convert("UTC")


@dataclass(frozen=True)
class SeriesCollection:
    """Named hourly series sharing one clock.

    ``series`` and ``exogenous`` values are read-only float arrays. Series may
    be shorter than the clock (trailing truncation); exogenous channels are
    expected to cover every series.
    """

    series: Mapping[str, np.ndarray]
    start: pd.Timestamp
    exogenous: Mapping[str, np.ndarray] = field(default_factory=dict)
    hierarchy: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "start", _utc(self.start))
        if self.start != self.start.floor("h"):
            raise DataError(f"collection start {self.start} is not on an hour boundary")
        object.__setattr__(self, "series", {k: _frozen(v) for k, v in self.series.items()})
        object.__setattr__(self, "exogenous", {k: _frozen(v) for k, v in self.exogenous.items()})
        object.__setattr__(self, "hierarchy", dict(self.hierarchy))
        for kind, group in (("series", self.series), ("channel", self.exogenous)):
            for name, values in group.items():
                if not np.all(np.isfinite(values)):
                    raise DataError(f"{kind} {name!r} contains NaN or Inf values")

    @property
    def ids(self) -> list:
        return sorted(self.series)

    @property
    def n_hours(self) -> int:
        lengths = [len(v) for v in self.series.values()] + [len(v) for v in self.exogenous.values()]
        return max(lengths, default=0)

    def length(self, sid: str) -> int:
        return len(self.series[sid])

    def timestamps(self, n: Optional[int] = None) -> pd.DatetimeIndex:
        n = self.n_hours if n is None else n
        return pd.date_range(self.start, periods=n, freq="h")

    def hour_of(self, ts) -> int:
        delta = _utc(ts) - self.start
        if delta % HOUR != pd.Timedelta(0):
            raise DataError(f"timestamp {ts} is not on the hourly grid")
        return int(delta // HOUR)

    def window(self, lo: int, hi: int) -> "SeriesCollection":
        """Hours ``[lo, hi)`` of every series and channel, re-anchored at hour ``lo``."""
        lo = max(lo, 0)
        return SeriesCollection(
            series={k: v[lo:hi] for k, v in self.series.items()},
            start=self.start + lo * HOUR,
            exogenous={k: v[lo:hi] for k, v in self.exogenous.items()},
            hierarchy=self.hierarchy,
        )

    def subset(self, ids: Iterable[str]) -> "SeriesCollection":
        ids = list(ids)
        missing = [s for s in ids if s not in self.series]
        if missing:
            raise DataError(f"unknown series ids: {missing}")
        return SeriesCollection(
            series={k: self.series[k] for k in ids},
            start=self.start,
            exogenous=self.exogenous,
            hierarchy={k: v for k, v in self.hierarchy.items() if k in ids},
        )

    def with_series(self, series: Mapping[str, np.ndarray], hierarchy=None) -> "SeriesCollection":
        """Same start, channels and hierarchy with the series dict replaced wholesale."""
        return SeriesCollection(
            series=series,
            start=self.start,
            exogenous=self.exogenous,
            hierarchy=self.hierarchy if hierarchy is None else hierarchy,
        )


# ---------------------------------------------------------------- ingestion


@dataclass(frozen=True)
class IngestConfig:
    timestamp_column: str = "timestamp"
    gap_policy: str = "ffill"  # "ffill" | "reject"
    max_gap: int = 3
    exogenous_path: Optional[str] = None
    hierarchy_path: Optional[str] = None

    def __post_init__(self):
        if self.gap_policy not in ("ffill", "reject"):
            raise DataError(f"unknown gap policy {self.gap_policy!r}")
        if self.max_gap < 0:
            raise DataError("max_gap must be non-negative")


def _read_wide_frame(path, cfg: IngestConfig) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    if cfg.timestamp_column not in raw.columns:
        raise DataError(f"{path}: missing timestamp column {cfg.timestamp_column!r}")
    value_cols = [c for c in raw.columns if c != cfg.timestamp_column]
    if not value_cols:
        raise DataError(f"{path}: no series columns")
    try:
        stamps = pd.to_datetime(raw[cfg.timestamp_column], format="ISO8601", utc=True)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed timestamp ({exc})") from None

    values = {}
    for col in value_cols:
        cells = raw[col].str.strip()
        parsed = np.full(len(cells), np.nan)
        for row, cell in enumerate(cells):
            if cell == "":
                continue
            try:
                # python's float() rounds correctly, so %.17g output round-trips
                parsed[row] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} in column {col!r} at row {row + 2}") from None
            if not np.isfinite(parsed[row]):
                raise DataError(f"{path}: non-numeric cell {cell!r} in column {col!r} at row {row + 2}")
        values[col] = parsed
    frame = pd.DataFrame(values, index=pd.DatetimeIndex(stamps))

    if (frame.index != frame.index.floor("h")).any():
        bad = frame.index[frame.index != frame.index.floor("h")][0]
        raise DataError(f"{path}: non-hourly timestamp {bad.strftime(TIMESTAMP_FORMAT)}")
    steps = np.diff(frame.index.asi8)
    if (steps <= 0).any():
        i = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise DataError(f"{path}: timestamps not strictly increasing at {frame.index[i]}")

    full = pd.date_range(frame.index[0], frame.index[-1], freq="h")
    if len(full) != len(frame):
        missing = full.difference(frame.index)
        if cfg.gap_policy == "reject":
            raise DataError(f"{path}: missing hour {missing[0].strftime(TIMESTAMP_FORMAT)}")
        frame = frame.reindex(full)
    return frame


def _resolve_gaps(name: str, values: np.ndarray, index: pd.DatetimeIndex, cfg: IngestConfig) -> np.ndarray:
    present = np.flatnonzero(~np.isnan(values))
    if present.size == 0:
        raise DataError(f"series {name!r} has no values")
    if present[0] != 0:
        raise DataError(f"series {name!r} starts with a gap at {index[0].strftime(TIMESTAMP_FORMAT)}")
    values = values[: present[-1] + 1]  # trailing blanks are truncation, not gaps
    holes = np.isnan(values)
    if not holes.any():
        return values
    first = int(np.flatnonzero(holes)[0])
    if cfg.gap_policy == "reject":
        raise DataError(f"series {name!r}: gap at {index[first].strftime(TIMESTAMP_FORMAT)}")
    # run lengths of consecutive missing hours
    edges = np.diff(np.concatenate([[0], holes.astype(np.int8), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    too_long = (stops - starts) > cfg.max_gap
    if too_long.any():
        at = index[starts[too_long][0]].strftime(TIMESTAMP_FORMAT)
        raise DataError(f"series {name!r}: gap at {at} longer than {cfg.max_gap} hours")
    return pd.Series(values).ffill().to_numpy()


def read_hierarchy_csv(path) -> Dict[str, str]:
    frame = pd.read_csv(path, dtype=str)
    if list(frame.columns[:2]) != ["series_id", "region_id"]:
        raise DataError(f"{path}: hierarchy header must be 'series_id,region_id'")
    return dict(zip(frame["series_id"].str.strip(), frame["region_id"].str.strip()))


def ingest_wide_csv(path, schema: IngestConfig = IngestConfig()) -> SeriesCollection:
    """Read a wide hourly CSV (plus optional exogenous and hierarchy files)."""
    frame = _read_wide_frame(path, schema)
    series = {c: _resolve_gaps(c, frame[c].to_numpy(), frame.index, schema) for c in frame.columns}
    exogenous = {}
    if schema.exogenous_path:
        exo = _read_wide_frame(schema.exogenous_path, schema)
        if exo.index[0] != frame.index[0]:
            raise DataError("exogenous file must start at the same timestamp as the load file")
        exogenous = {c: _resolve_gaps(c, exo[c].to_numpy(), exo.index, schema) for c in exo.columns}
    hierarchy = read_hierarchy_csv(schema.hierarchy_path) if schema.hierarchy_path else {}
    return SeriesCollection(series=series, start=frame.index[0], exogenous=exogenous, hierarchy=hierarchy)


def collection_frame(c: SeriesCollection, channels: bool = False) -> pd.DataFrame:
    group = c.exogenous if channels else c.series
    n = max((len(v) for v in group.values()), default=0)
    data = {}
    for name in sorted(group):
        col = np.full(n, np.nan)
        col[: len(group[name])] = group[name]
        data[name] = col
    frame = pd.DataFrame(data)
    frame.insert(0, "timestamp", c.timestamps(n).strftime(TIMESTAMP_FORMAT))
    return frame


def write_wide_csv(c: SeriesCollection, path, channels: bool = False) -> None:
    """Write series (or exogenous channels) in the format ``ingest_wide_csv`` reads."""
    collection_frame(c, channels).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def write_hierarchy_csv(hierarchy: Mapping[str, str], path) -> None:
    frame = pd.DataFrame(sorted(hierarchy.items()), columns=["series_id", "region_id"])
    frame.to_csv(path, index=False, lineterminator="\n")


# ------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    train_end: pd.Timestamp
    val_end: pd.Timestamp
    test_end: pd.Timestamp

    def __post_init__(self):
        for name in ("train_end", "val_end", "test_end"):
            object.__setattr__(self, name, _utc(getattr(self, name)))
        if not (self.train_end < self.val_end < self.test_end):
            raise DataError("split requires train_end < val_end < test_end")

    def hours(self, c: SeriesCollection) -> Tuple[int, int, int]:
        bounds = tuple(c.hour_of(t) for t in (self.train_end, self.val_end, self.test_end))
        if bounds[0] < 0 or bounds[2] >= c.n_hours:
            raise DataError(
                f"split {self.train_end}..{self.test_end} outside collection range "
                f"{c.start}..{c.start + (c.n_hours - 1) * HOUR}"
            )
        return bounds


def split_by_time(c: SeriesCollection, s: SplitSpec):
    """Partition every series into train / validation / test views (inclusive ends)."""
    tr, va, te = s.hours(c)
    return c.window(0, tr + 1), c.window(tr + 1, va + 1), c.window(va + 1, te + 1)


def eval_window(c: SeriesCollection, s: SplitSpec, which: str = "test", context: int = 168) -> SeriesCollection:
    """Evaluation view with ``context`` hours of preceding history prepended."""
    tr, va, te = s.hours(c)
    lo, hi = {"val": (tr + 1, va + 1), "test": (va + 1, te + 1)}[which]
    if lo - context < 0:
        raise DataError(f"not enough history before the {which} window for {context} hours of context")
    return c.window(lo - context, hi)


def train_view(c: SeriesCollection, s: SplitSpec, include_val: bool = False) -> SeriesCollection:
    tr, va, _ = s.hours(c)
    return c.window(0, (va if include_val else tr) + 1)


# ------------------------------------------------------------ normalization


@dataclass(frozen=True)
class Normalizer:
    """Per-series and per-channel min/max learned from a training view."""

    series_min: Mapping[str, float] = field(default_factory=dict)
    series_max: Mapping[str, float] = field(default_factory=dict)
    channel_min: Mapping[str, float] = field(default_factory=dict)
    channel_max: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def fit(cls, train: SeriesCollection) -> "Normalizer":
        stats = {}
        for kind, group in (("series", train.series), ("channel", train.exogenous)):
            lo, hi = {}, {}
            for name, values in group.items():
                if len(values) == 0:
                    raise DataError(f"{kind} {name!r} is empty in the training view")
                lo[name], hi[name] = float(values.min()), float(values.max())
                if not hi[name] > lo[name]:
                    raise DataError(f"{kind} {name!r} is constant on the training view; cannot min-max normalize")
            stats[kind] = (lo, hi)
        return cls(*stats["series"], *stats["channel"])

    @property
    def fitted(self) -> bool:
        return bool(self.series_min)

    def _bounds(self, name: str, channel: bool) -> Tuple[float, float]:
        lo, hi = (self.channel_min, self.channel_max) if channel else (self.series_min, self.series_max)
        if name not in lo:
            raise DataError(f"normalizer has no statistics for {'channel' if channel else 'series'} {name!r}")
        return lo[name], hi[name]

    def apply(self, name: str, values, channel: bool = False) -> np.ndarray:
        lo, hi = self._bounds(name, channel)
        return (np.asarray(values, dtype=float) - lo) / (hi - lo)

    def invert(self, name: str, values, channel: bool = False) -> np.ndarray:
        lo, hi = self._bounds(name, channel)
        return np.asarray(values, dtype=float) * (hi - lo) + lo

    def restrict(self, ids: Iterable[str]) -> "Normalizer":
        ids = set(ids)
        return Normalizer(
            {k: v for k, v in self.series_min.items() if k in ids},
            {k: v for k, v in self.series_max.items() if k in ids},
            self.channel_min,
            self.channel_max,
        )


def fit_normalizer(train: SeriesCollection) -> Normalizer:
    return Normalizer.fit(train)


def minmax_normalize(c: SeriesCollection, n: Optional[Normalizer]) -> SeriesCollection:
    """Map every value to ``(v - min) / (max - min)``; out-of-range values are kept."""
    if n is None or not n.fitted:
        raise DataError("normalizer is not fitted")
    return SeriesCollection(
        series={k: n.apply(k, v) for k, v in c.series.items()},
        start=c.start,
        exogenous={k: n.apply(k, v, channel=True) for k, v in c.exogenous.items()},
        hierarchy=c.hierarchy,
    )


# -------------------------------------------------------------- aggregation


def aggregate_sum(c: SeriesCollection, level: str = "area->region") -> SeriesCollection:
    """Element-wise sums of member series on the raw scale.

    ``area->region`` groups by ``c.hierarchy``; ``region->system`` sums every
    series into a single ``"system"`` series. Members of unequal length are
    summed over their common prefix.
    """
    if level in ("area->region", "area-region"):
        missing = [s for s in c.ids if s not in c.hierarchy]
        if missing:
            raise DataError(f"missing hierarchy label for series {missing}")
        groups: Dict[str, list] = {}
        for sid in c.ids:
            groups.setdefault(c.hierarchy[sid], []).append(sid)
    elif level in ("region->system", "region-system", "area->system"):
        groups = {"system": c.ids}
    else:
        raise DataError(f"unknown aggregation level {level!r}")
    out = {}
    for name, members in sorted(groups.items()):
        n = min(c.length(s) for s in members)
        total = np.zeros(n)
        for sid in members:
            total = total + c.series[sid][:n]
        out[name] = total
    return SeriesCollection(series=out, start=c.start, exogenous=c.exogenous)
