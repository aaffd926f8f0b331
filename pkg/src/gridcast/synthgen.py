"""Synthetic hierarchical load collections with archetypes and injected drift."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import DataError
from .series_store import SeriesCollection, _utc, write_hierarchy_csv, write_wide_csv

DEFAULT_START = "2024-01-01T00:00:00Z"
BALANCE_TEMP = 15.0


@dataclass(frozen=True)
class ArchetypeConfig:
    name: str
    base: float = 100.0
    daily_amplitude: float = 0.2
    weekly_amplitude: float = 0.03
    annual_amplitude: float = 0.08
    temp_coeffs: Tuple[float, float] = (-0.002, 0.0002)  # fraction of base per degC, per degC^2
    noise_std: float = 0.02  # fraction of base
    night_to_day: Optional[float] = None
    weekend_to_weekday: Optional[float] = None
    ar: float = 0.7
    jitter: float = 0.05  # relative spread of per-series DGP coefficients
    base_spread: float = 0.3  # relative spread of per-series base level

    def __post_init__(self):
        object.__setattr__(self, "temp_coeffs", tuple(self.temp_coeffs))
        if not self.base > 0:
            raise DataError(f"archetype {self.name!r}: base must be positive")
        amps = (self.daily_amplitude, self.weekly_amplitude, self.annual_amplitude, self.noise_std, self.jitter, self.base_spread)
        if min(amps) < 0:
            raise DataError(f"archetype {self.name!r}: amplitudes, noise and jitter must be non-negative")
        if not -1 < self.ar < 1:
            raise DataError(f"archetype {self.name!r}: AR carryover must lie in (-1, 1)")
        for ratio in (self.night_to_day, self.weekend_to_weekday):
            if ratio is not None and not ratio > 0:
                raise DataError(f"archetype {self.name!r}: target ratios must be positive")


RESIDENTIAL = ArchetypeConfig(
    "residential", base=100.0, daily_amplitude=0.25, weekly_amplitude=0.03, annual_amplitude=0.10,
    temp_coeffs=(-0.002, 0.0002), noise_std=0.02, night_to_day=0.7, weekend_to_weekday=0.9, ar=0.7,
)
INDUSTRIAL = ArchetypeConfig(
    "industrial", base=300.0, daily_amplitude=0.02, weekly_amplitude=0.0, annual_amplitude=0.02,
    temp_coeffs=(0.0, 0.00003), noise_std=0.01, night_to_day=0.98, weekend_to_weekday=0.99, ar=0.7,
)


@dataclass
class GroundTruth:
    archetype: Dict[str, str]
    hierarchy: Dict[str, str]
    temperature: np.ndarray
    clamp_events: Dict[str, int] = field(default_factory=dict)
    parameters: Dict[str, dict] = field(default_factory=dict)


def _series_rng(seed: int, *keys) -> np.random.Generator:
    """Independent stream per (seed, key...) so one series' draws never shift another's."""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(words)


def synthetic_temperature(n: int, start, seed: int) -> np.ndarray:
    """Shared hourly temperature (degC): annual and diurnal cycles plus AR(1) weather noise."""
    stamps = pd.date_range(_utc(start), periods=n, freq="h")
    doy = stamps.dayofyear.to_numpy() - 1
    hour = stamps.hour.to_numpy()
    rng = _series_rng(seed, "temperature")
    weather = lfilter([1.0], [1.0, -0.98], rng.normal(0.0, 1.0, n))
    return (
        5.0
        - 15.0 * np.cos(2 * np.pi * doy / 365.25)
        + 4.0 * np.sin(2 * np.pi * (hour - 9) / 24)
        + 0.6 * weather
    )


def _calendar_shape(arch: ArchetypeConfig, stamps: pd.DatetimeIndex, daily: float, weekly: float, annual: float):
    hour = stamps.hour.to_numpy()
    dow = stamps.dayofweek.to_numpy()
    doy = stamps.dayofyear.to_numpy() - 1
    day = np.sin(2 * np.pi * (hour - 6) / 24)  # trough at midnight, peak at noon
    week = np.cos(2 * np.pi * dow / 7)
    shape = 1.0 + daily * day + weekly * week + annual * np.cos(2 * np.pi * doy / 365.25)

    if arch.night_to_day is not None:
        hours = np.arange(24)
        prof = 1.0 + daily * np.sin(2 * np.pi * (hours - 6) / 24)
        night_mult = arch.night_to_day * prof[12:18].mean() / prof[:6].mean()
        shape = np.where(hour < 6, shape * night_mult, shape)
    if arch.weekend_to_weekday is not None:
        days = np.arange(7)
        prof = 1.0 + weekly * np.cos(2 * np.pi * days / 7)
        weekend_mult = arch.weekend_to_weekday * prof[:5].mean() / prof[5:].mean()
        shape = np.where(dow >= 5, shape * weekend_mult, shape)
    return shape


def _generate_one(arch: ArchetypeConfig, sid: str, stamps, temperature, seed: int):
    rng = _series_rng(seed, arch.name, sid)
    jit = lambda v: v * (1.0 + arch.jitter * rng.standard_normal())  # noqa: E731
    base = arch.base * float(np.exp(arch.base_spread * rng.standard_normal()))
    daily, weekly, annual = jit(arch.daily_amplitude), jit(arch.weekly_amplitude), jit(arch.annual_amplitude)
    c1, c2 = (jit(c) for c in arch.temp_coeffs)
    n = len(stamps)
    noise = lfilter([1.0], [1.0, -arch.ar], rng.standard_normal(n) * arch.noise_std * base)
    dT = temperature - BALANCE_TEMP
    load = base * _calendar_shape(arch, stamps, daily, weekly, annual) + base * (c1 * dT + c2 * dT**2) + noise
    floor = 0.01 * base
    clamps = int(np.sum(load < floor))
    load = np.maximum(load, floor)
    params = {"base": base, "daily": daily, "weekly": weekly, "annual": annual, "temp": [c1, c2]}
    return load, clamps, params


def _region_names(regions: Union[int, Sequence[str]]) -> List[str]:
    if isinstance(regions, int):
        if regions < 1:
            raise DataError("need at least one region")
        return [f"region_{i}" for i in range(regions)]
    return list(regions)


def generate_collection(
    archetypes: Sequence[ArchetypeConfig],
    series_per_archetype: Union[int, Sequence[int]] = 10,
    regions: Union[int, Sequence[str]] = 1,
    length_hours: int = 24 * 7 * 8,
    seed: int = 0,
    start=DEFAULT_START,
) -> Tuple[SeriesCollection, GroundTruth]:
    """Labeled hourly collection plus a shared ``temperature`` channel.

    Series ids are ``<archetype>_<j>``; series are assigned to regions in
    contiguous blocks of the sorted id list.
    """
    if not archetypes:
        raise DataError("need at least one archetype")
    if length_hours < 4 * 7 * 24:
        raise DataError("synthetic series must span at least 4 weeks")
    if len({a.name for a in archetypes}) != len(archetypes):
        raise DataError("archetype names must be unique")
    counts = [series_per_archetype] * len(archetypes) if isinstance(series_per_archetype, int) else list(series_per_archetype)
    if len(counts) != len(archetypes) or min(counts) < 0:
        raise DataError("series_per_archetype must give a non-negative count per archetype")

    stamps = pd.date_range(_utc(start), periods=length_hours, freq="h")
    temperature = synthetic_temperature(length_hours, start, seed)
    series, archetype, clamps, params = {}, {}, {}, {}
    for arch, count in zip(archetypes, counts):
        for j in range(count):
            sid = f"{arch.name}_{j:02d}"
            series[sid], clamps[sid], params[sid] = _generate_one(arch, sid, stamps, temperature, seed)
            archetype[sid] = arch.name

    names = _region_names(regions)
    ids = sorted(series)
    hierarchy = {sid: names[i * len(names) // len(ids)] for i, sid in enumerate(ids)}
    c = SeriesCollection(series=series, start=stamps[0], exogenous={"temperature": temperature}, hierarchy=hierarchy)
    return c, GroundTruth(archetype, hierarchy, temperature, clamps, params)


def ar_collection(
    groups: Mapping[str, float], series_per_group: int = 10, length_hours: int = 24 * 7 * 8, level: float = 100.0,
    noise_std: float = 5.0, seed: int = 0, start=DEFAULT_START,
) -> Tuple[SeriesCollection, Dict[str, str]]:
    """Pure AR(1) series ``y_t = level + phi (y_{t-1} - level) + e_t``, one ``phi`` per group.

    Includes a flat ``temperature`` channel of independent noise so default
    feature specs apply.
    """
    series, labels = {}, {}
    for name, phi in groups.items():
        for j in range(series_per_group):
            sid = f"{name}_{j:02d}"
            rng = _series_rng(seed, name, sid)
            y = level + lfilter([1.0], [1.0, -phi], rng.normal(0.0, noise_std, length_hours))
            series[sid], labels[sid] = y, name
    temp = _series_rng(seed, "temperature").normal(0.0, 1.0, length_hours)
    return SeriesCollection(series=series, start=_utc(start), exogenous={"temperature": temp}), labels


# ----------------------------------------------------------------- drift


@dataclass(frozen=True)
class DriftEvent:
    kind: str  # "sudden" | "incremental" | "recurring"
    start: object  # timestamp or hour index
    magnitude: float  # factor, slope per hour, or daily-amplitude delta
    series: Tuple[str, ...] = ()
    cap: Optional[float] = None  # incremental: bound on |slope * elapsed|

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        if self.kind not in ("sudden", "incremental", "recurring"):
            raise DataError(f"unknown drift kind {self.kind!r}")
        if self.kind == "sudden" and not self.magnitude > 0:
            raise DataError("sudden drift factor must be positive")


def _start_hour(c: SeriesCollection, start) -> int:
    if isinstance(start, (int, np.integer)):
        return int(start)
    return c.hour_of(start)


def inject_drift(c: SeriesCollection, events: Sequence[DriftEvent]) -> Tuple[SeriesCollection, Dict[str, str]]:
    """Apply drift events; series touched by any event are labeled ``"drifting"``."""
    series = {k: np.array(v) for k, v in c.series.items()}
    touched = set()
    for ev in events:
        t0 = _start_hour(c, ev.start)
        for sid in ev.series:
            if sid not in series:
                raise DataError(f"drift event targets unknown series {sid!r}")
            y = series[sid]
            if not 0 <= t0 < len(y):
                raise DataError(f"drift start hour {t0} outside series {sid!r} (length {len(y)})")
            if ev.kind == "sudden":
                y[t0:] = y[t0:] * ev.magnitude
            elif ev.kind == "incremental":
                ramp = ev.magnitude * np.arange(len(y) - t0)
                if ev.cap is not None:
                    ramp = np.clip(ramp, -ev.cap, ev.cap)
                y[t0:] = y[t0:] * (1.0 + ramp)
            else:
                level = y[:t0].mean() if t0 > 0 else y.mean()
                hours = (c.timestamps(len(y)).hour.to_numpy())[t0:]
                y[t0:] = y[t0:] + ev.magnitude * level * np.sin(2 * np.pi * (hours - 6) / 24)
            touched.add(sid)
    labels = {sid: ("drifting" if sid in touched else "stable") for sid in c.ids}
    return c.with_series(series), labels


# ------------------------------------------------------------------ output


def write_synthetic(c: SeriesCollection, truth: GroundTruth, outdir, labels: Optional[Mapping[str, str]] = None, config=None) -> Dict[str, Path]:
    """Write load/exogenous/hierarchy CSVs, ``labels.csv`` and a JSON manifest."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "load": out / "load.csv",
        "exogenous": out / "exogenous.csv",
        "hierarchy": out / "hierarchy.csv",
        "labels": out / "labels.csv",
        "manifest": out / "synth_manifest.json",
    }
    write_wide_csv(c, paths["load"])
    write_wide_csv(c, paths["exogenous"], channels=True)
    write_hierarchy_csv(c.hierarchy, paths["hierarchy"])
    labels = labels or {}
    frame = pd.DataFrame(
        [
            {"series_id": s, "archetype": truth.archetype.get(s, ""), "region": c.hierarchy.get(s, ""),
             "drift_status": labels.get(s, "stable")}
            for s in c.ids
        ]
    )
    frame.to_csv(paths["labels"], index=False, lineterminator="\n")
    manifest = {"config": config, "clamp_events": truth.clamp_events, "parameters": truth.parameters}
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return paths


def read_labels_csv(path) -> Dict[str, str]:
    frame = pd.read_csv(path, dtype=str)
    if "drift_status" not in frame.columns:
        raise DataError(f"{path}: labels file needs a drift_status column")
    return dict(zip(frame["series_id"], frame["drift_status"]))


def archetype_from_dict(d: Mapping) -> ArchetypeConfig:
    return ArchetypeConfig(**d)


def with_overrides(arch: ArchetypeConfig, **changes) -> ArchetypeConfig:
    return replace(arch, **changes)


def archetype_to_dict(arch: ArchetypeConfig) -> dict:
    return asdict(arch)
