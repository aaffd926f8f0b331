"""Config-driven experiment runner.

A run is described by a flat INI file. Every output lands in
``<outdir>/<run-id>/`` where the run id hashes the resolved configuration, so
rerunning a config reuses (and reproduces) the same directory. Stages:

    data -> profile -> train -> evaluate -> peaks -> drift -> zeroshot -> report

Each subcommand runs the pipeline up to its stage, reusing outputs already on
disk. ``manifest.txt`` records the sha256 of every file a stage produced.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, EvaluationError, GridcastError
from .evalmetrics import (
    FLOAT_FORMAT,
    PEAK_COLUMNS,
    coherency_gap,
    compute_metrics,
    drift_segment_report,
    metric_report,
    peak_error,
    write_metrics_csv,
)
from .featurizer import ExogenousFeature, FeatureSpec, heterogeneity_profile
from .models import Hyperparams
from .paradigms import (
    ClusterwiseModel,
    forecast_all,
    load_bundle,
    save_bundle,
    train_paradigm,
    zero_shot_forecast,
)
from .series_store import (
    IngestConfig,
    SeriesCollection,
    SplitSpec,
    aggregate_sum,
    eval_window,
    ingest_wide_csv,
    train_view,
    write_wide_csv,
)
from .synthgen import (
    INDUSTRIAL,
    RESIDENTIAL,
    ArchetypeConfig,
    DriftEvent,
    generate_collection,
    inject_drift,
    read_labels_csv,
    with_overrides,
    write_synthetic,
)

log = logging.getLogger("gridcast")

STAGES = ("data", "profile", "train", "evaluate", "peaks", "drift", "zeroshot", "report")
BUILTIN_ARCHETYPES = {a.name: a for a in (RESIDENTIAL, INDUSTRIAL)}

# ------------------------------------------------------------------ parsing helpers


def _int(s):
    return int(s)


def _float(s):
    return float(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _words(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _opt_int(s):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _choice(*options):
    def parse(s):
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _text(s):
    return s.strip()


_DEFAULT_SPEC = FeatureSpec()

# section -> key -> (default text, parser)
SCHEMA: Dict[str, Dict[str, Tuple[str, object]]] = {
    "data": {
        "source": ("synth", _choice("synth", "csv")),
        "load_path": ("", _text),
        "exogenous_path": ("", _text),
        "hierarchy_path": ("", _text),
        "labels_path": ("", _text),
        "timestamp_column": ("timestamp", _text),
        "gap_policy": ("ffill", _choice("ffill", "reject")),
        "max_gap": ("3", _int),
    },
    "synth": {
        "archetypes": ("residential, industrial", _words),
        "series_per_archetype": ("10", _int),
        "regions": ("2", _int),
        "length_hours": (str(24 * 7 * 8), _int),
        "start": ("2024-01-01T00:00:00Z", _text),
        "drift": ("none", _choice("none", "sudden", "incremental", "recurring")),
        "drift_start": ("test", _text),
        "drift_magnitude": ("0.8", _float),
        "drift_fraction": ("0.5", _float),
    },
    "split": {
        "train_end": ("", _text),
        "val_end": ("", _text),
        "test_end": ("", _text),
        "test_hours": ("336", _int),
        "val_hours": ("168", _int),
        "include_val": ("true", _bool),
    },
    "features": {
        "window": (str(_DEFAULT_SPEC.window), _int),
        "lags": (_fmt(_DEFAULT_SPEC.lags), _ints),
        "poly_lags": (_fmt(_DEFAULT_SPEC.poly_lags), _ints),
        "poly_degrees": (_fmt(_DEFAULT_SPEC.poly_degrees), _ints),
        "ma_windows": (_fmt(_DEFAULT_SPEC.ma_windows), _ints),
        "ema_span": (_fmt(_DEFAULT_SPEC.ema_span), _opt_int),
        "calendar": (_fmt(_DEFAULT_SPEC.calendar), _words),
        "holiday_flag": ("true", _bool),
        "holidays_path": ("", _text),
        "pandemic": (_fmt(_DEFAULT_SPEC.pandemic), _text),
        "exogenous": ("temperature:target:1;2", _text),
        "interactions": ("lag_1*mave_168, temperature*hour_sin", _text),
        "utc_offset_hours": ("0", _int),
    },
    "model": {
        "kind": ("ridge", _choice("ridge", "gbdt")),
        "alpha": ("1.0", _float),
        "n_estimators": ("auto", _opt_int),
        "learning_rate": ("0.1", _float),
        "max_depth": ("4", _int),
        "max_leaves": ("32", _int),
        "min_samples_leaf": ("20", _int),
    },
    "paradigm": {
        "paradigms": ("local, global, clusterwise", _words),
        "variant": ("model-based", _choice("model-based", "instance", "weighted-instance")),
        "k": ("2", _opt_int),
        "seed": ("0", _int),
    },
    "evaluation": {
        "window": ("test", _choice("test", "val")),
        "peak_period": ("all", _choice("all", "monthly", "annual")),
        "drift_labels": ("auto", _text),
        "hierarchy": ("false", _bool),
    },
    "output": {
        "outdir": ("runs", _text),
    },
}
ARCHETYPE_KEYS = {
    "base": _float, "daily_amplitude": _float, "weekly_amplitude": _float, "annual_amplitude": _float,
    "temp_coeffs": lambda s: tuple(float(x) for x in s.split(",")), "noise_std": _float,
    "night_to_day": lambda s: None if s.strip().lower() == "none" else float(s),
    "weekend_to_weekday": lambda s: None if s.strip().lower() == "none" else float(s),
    "ar": _float, "jitter": _float, "base_spread": _float,
}


def _parse_exogenous(text: str) -> Tuple[ExogenousFeature, ...]:
    out = []
    for entry in _words(text):
        parts = entry.split(":")
        if len(parts) != 3:
            raise ValueError(f"exogenous entry {entry!r} must be channel:alignment:powers")
        out.append(ExogenousFeature(parts[0], parts[1], tuple(int(p) for p in parts[2].split(";"))))
    return tuple(out)


def _parse_interactions(text: str):
    pairs = []
    for entry in _words(text):
        a, sep, b = entry.partition("*")
        if not sep:
            raise ValueError(f"interaction {entry!r} must look like a*b")
        pairs.append((a.strip(), b.strip()))
    return tuple(pairs)


def _parse_pandemic(text: str):
    if text.strip().lower() in ("", "none"):
        return None
    parts = _words(text)
    if len(parts) != 2:
        raise ValueError("pandemic needs 'start, end' or 'none'")
    for p in parts:
        pd.Timestamp(p)
    return parts


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; ``values`` holds the canonical text of every key."""

    values: Dict[str, Dict[str, str]]
    archetype_overrides: Dict[str, Dict[str, str]] = field(default_factory=dict)
    source_text: str = ""
    base_dir: Path = Path(".")

    def get(self, section: str, key: str):
        return SCHEMA[section][key][1](self.values[section][key])

    # typed views -----------------------------------------------------------
    @property
    def seed(self) -> int:
        return self.get("paradigm", "seed")

    @property
    def outdir(self) -> Path:
        return self._path(self.values["output"]["outdir"])

    def _path(self, text: str) -> Path:
        p = Path(text)
        return p if p.is_absolute() else self.base_dir / p

    def path_or_none(self, section: str, key: str) -> Optional[Path]:
        text = self.values[section][key]
        return self._path(text) if text else None

    @property
    def hyperparams(self) -> Hyperparams:
        m = self.values["model"]
        return Hyperparams(
            alpha=float(m["alpha"]), n_estimators=_opt_int(m["n_estimators"]), learning_rate=float(m["learning_rate"]),
            max_depth=int(m["max_depth"]), max_leaves=int(m["max_leaves"]), min_samples_leaf=int(m["min_samples_leaf"]),
        )

    def feature_spec(self, holidays: Tuple[str, ...] = ()) -> FeatureSpec:
        g = lambda k: self.get("features", k)  # noqa: E731
        return FeatureSpec(
            window=g("window"), lags=g("lags"), poly_lags=g("poly_lags"), poly_degrees=g("poly_degrees"),
            ma_windows=g("ma_windows"), ema_span=g("ema_span"), calendar=g("calendar"), holiday_flag=g("holiday_flag"),
            holidays=holidays, pandemic=_parse_pandemic(g("pandemic")), exogenous=_parse_exogenous(g("exogenous")),
            interactions=_parse_interactions(g("interactions")), utc_offset_hours=g("utc_offset_hours"),
        )

    def archetypes(self) -> List[ArchetypeConfig]:
        out = []
        for name in self.get("synth", "archetypes"):
            arch = BUILTIN_ARCHETYPES.get(name, ArchetypeConfig(name))
            changes = {k: ARCHETYPE_KEYS[k](v) for k, v in self.archetype_overrides.get(name, {}).items()}
            out.append(with_overrides(arch, **changes) if changes else arch)
        return out

    # serialization ----------------------------------------------------------
    def to_ini(self, include_output: bool = True) -> str:
        lines = []
        for section in SCHEMA:
            if section == "output" and not include_output:
                continue
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in self.values[section].items()]
            lines.append("")
        for name in sorted(self.archetype_overrides):
            lines.append(f"[archetype.{name}]")
            lines += [f"{k} = {v}" for k, v in sorted(self.archetype_overrides[name].items())]
            lines.append("")
        return "\n".join(lines)

    def run_id(self) -> str:
        return hashlib.sha256(self.to_ini(include_output=False).encode()).hexdigest()[:12]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_ini() == other.to_ini()

    def __hash__(self):
        return hash(self.to_ini())


def _canonical(section: str, key: str, raw: str) -> str:
    default, parser = SCHEMA[section][key]
    try:
        value = parser(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
    if section == "features" and key in ("exogenous", "interactions", "pandemic"):
        return ", ".join(_words(raw)) if raw.strip().lower() != "none" else "none"
    return _fmt(value)


def parse_config(text: str, overrides: Optional[Dict[str, str]] = None, base_dir=".") -> RunConfig:
    """Parse and fully validate an INI run description.

    ``overrides`` maps ``"section.key"`` to replacement text.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None

    raw: Dict[str, Dict[str, str]] = {s: {k: d for k, (d, _) in keys.items()} for s, keys in SCHEMA.items()}
    arch_over: Dict[str, Dict[str, str]] = {}

    def put(section, key, value):
        if section.startswith("archetype."):
            if key not in ARCHETYPE_KEYS:
                raise ConfigError(f"unknown archetype key {key!r} in [{section}]")
            arch_over.setdefault(section.split(".", 1)[1], {})[key] = value.strip()
            return
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        raw[section][key] = value

    for section in parser.sections():
        for key, value in parser.items(section):
            put(section, key, value)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        if not section:
            raise ConfigError(f"override {dotted!r} must look like section.key=value")
        put(section, key, value)

    values = {s: {k: _canonical(s, k, v) for k, v in keys.items()} for s, keys in raw.items()}
    for name, keys in arch_over.items():
        for k, v in keys.items():
            try:
                ARCHETYPE_KEYS[k](v)
            except ValueError as exc:
                raise ConfigError(f"[archetype.{name}] {k}: {exc}") from None
    cfg = RunConfig(values, arch_over, text, Path(base_dir))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    try:
        cfg.feature_spec()
        cfg.hyperparams
        archs = cfg.archetypes()
    except (ValueError, TypeError, DataError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.get("data", "source") == "csv":
        path = cfg.path_or_none("data", "load_path")
        if path is None:
            raise ConfigError("[data] load_path is required when source = csv")
        for key in ("load_path", "exogenous_path", "hierarchy_path", "labels_path"):
            p = cfg.path_or_none("data", key)
            if p is not None and not p.exists():
                raise ConfigError(f"[data] {key}: file not found: {p}")
    else:
        unknown = [n for n in cfg.get("synth", "archetypes") if n not in BUILTIN_ARCHETYPES and n not in cfg.archetype_overrides]
        if unknown:
            raise ConfigError(f"unknown archetypes {unknown}; define them in [archetype.<name>] sections")
        if not archs:
            raise ConfigError("[synth] archetypes is empty")
        if not 0 <= cfg.get("synth", "drift_fraction") <= 1:
            raise ConfigError("[synth] drift_fraction must lie in [0, 1]")
    hpath = cfg.path_or_none("features", "holidays_path")
    if hpath is not None and not hpath.exists():
        raise ConfigError(f"[features] holidays_path: file not found: {hpath}")
    paradigms = cfg.get("paradigm", "paradigms")
    if not paradigms or set(paradigms) - {"local", "global", "clusterwise"}:
        raise ConfigError(f"[paradigm] paradigms must be drawn from local, global, clusterwise; got {paradigms}")
    k = cfg.get("paradigm", "k")
    if k is not None and k < 1:
        raise ConfigError("[paradigm] k must be >= 1 or auto")
    split = cfg.values["split"]
    explicit = [split[k] for k in ("train_end", "val_end", "test_end")]
    if any(explicit) and not all(explicit):
        raise ConfigError("[split] give all of train_end, val_end, test_end or none of them")
    if all(explicit):
        try:
            SplitSpec(*explicit)
        except (ValueError, DataError) as exc:
            raise ConfigError(f"[split] {exc}") from None
    elif cfg.get("split", "test_hours") < 1 or cfg.get("split", "val_hours") < 1:
        raise ConfigError("[split] test_hours and val_hours must be positive")
    if cfg.get("evaluation", "window") == "val" and cfg.get("split", "include_val"):
        raise ConfigError("[evaluation] window = val requires [split] include_val = false")
    if cfg.get("evaluation", "hierarchy") and "global" not in paradigms and "clusterwise" not in paradigms:
        raise ConfigError("[evaluation] hierarchy = true needs a global or cluster-wise paradigm")


def load_config(path, overrides=None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, overrides, base_dir=p.parent)


# ------------------------------------------------------------------ pipeline


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


class Pipeline:
    """Lazily executed stages over one run directory."""

    def __init__(self, cfg: RunConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.root = cfg.outdir / cfg.run_id()
        self.root.mkdir(parents=True, exist_ok=True)
        self._collection: Optional[SeriesCollection] = None
        self._labels: Optional[Dict[str, str]] = None
        self._models: Dict[str, object] = {}
        self._forecasts: Dict[str, dict] = {}
        self._done: Dict[str, List[Path]] = {}
        self._persist_config()

    # bookkeeping ---------------------------------------------------------------
    def _persist_config(self):
        (self.root / "config.ini").write_text(self.cfg.source_text)
        (self.root / "config.resolved.ini").write_text(self.cfg.to_ini())

    def _record(self, stage: str, paths: List[Path]) -> None:
        self._done[stage] = sorted(paths)
        self._write_manifest()

    def _write_manifest(self):
        lines = [f"run_id\t{self.cfg.run_id()}", f"config\t{hashlib.sha256(self.cfg.to_ini(include_output=False).encode()).hexdigest()}"]
        for stage in STAGES:
            for p in self._done.get(stage, []):
                lines.append(f"{stage}\t{p.relative_to(self.root).as_posix()}\t{_sha256(p)}")
        (self.root / "manifest.txt").write_text("\n".join(lines) + "\n")

    def _stage(self, name: str, fn):
        if name in self._done:
            return
        log.info("stage %s", name)
        try:
            paths = fn()
        except GridcastError as exc:
            exc.args = (f"stage {name} failed: {exc}",)
            raise
        self._record(name, paths)

    # data --------------------------------------------------------------------
    @property
    def collection(self) -> SeriesCollection:
        if self._collection is None:
            self.data()
        return self._collection

    def data(self):
        self._stage("data", self._data)

    def _data(self) -> List[Path]:
        cfg = self.cfg
        out = self.root / "data"
        out.mkdir(exist_ok=True)
        if cfg.get("data", "source") == "csv":
            ingest = IngestConfig(
                timestamp_column=cfg.get("data", "timestamp_column"), gap_policy=cfg.get("data", "gap_policy"),
                max_gap=cfg.get("data", "max_gap"), exogenous_path=cfg.path_or_none("data", "exogenous_path"),
                hierarchy_path=cfg.path_or_none("data", "hierarchy_path"),
            )
            c = ingest_wide_csv(cfg.path_or_none("data", "load_path"), ingest)
            labels_path = cfg.path_or_none("data", "labels_path")
            self._labels = read_labels_csv(labels_path) if labels_path else None
            write_wide_csv(c, out / "load.csv")
            paths = [out / "load.csv"]
            if c.exogenous:
                write_wide_csv(c, out / "exogenous.csv", channels=True)
                paths.append(out / "exogenous.csv")
        else:
            c, truth = generate_collection(
                cfg.archetypes(), cfg.get("synth", "series_per_archetype"), cfg.get("synth", "regions"),
                cfg.get("synth", "length_hours"), cfg.seed, cfg.get("synth", "start"),
            )
            labels = None
            kind = cfg.get("synth", "drift")
            if kind != "none":
                ids = c.ids
                n_drift = int(round(cfg.get("synth", "drift_fraction") * len(ids)))
                chosen = ids[::2][:n_drift] if n_drift <= len(ids[::2]) else ids[:n_drift]
                c, labels = inject_drift(c, [DriftEvent(kind, self._drift_start(c), cfg.get("synth", "drift_magnitude"), chosen)])
            self._labels = labels
            written = write_synthetic(c, truth, out, labels, cfg.values["synth"])
            paths = list(written.values())
        self._collection = c
        return paths

    def _drift_start(self, c: SeriesCollection):
        text = self.cfg.values["synth"]["drift_start"]
        if text == "test":
            _, va, _ = self.split(c).hours(c)
            return va + 1
        if text.lstrip("-").isdigit():
            return int(text)
        return pd.Timestamp(text)

    def split(self, c: Optional[SeriesCollection] = None) -> SplitSpec:
        c = c if c is not None else self.collection
        s = self.cfg.values["split"]
        if s["train_end"]:
            return SplitSpec(s["train_end"], s["val_end"], s["test_end"])
        stamps = c.timestamps()
        test_hours, val_hours = int(s["test_hours"]), int(s["val_hours"])
        last = c.n_hours - 1
        if last - test_hours - val_hours < self.spec.window + 1:
            raise DataError(f"{c.n_hours} hours cannot hold {val_hours} validation + {test_hours} test hours after the window")
        return SplitSpec(stamps[last - test_hours - val_hours], stamps[last - test_hours], stamps[last])

    @property
    def spec(self) -> FeatureSpec:
        hpath = self.cfg.path_or_none("features", "holidays_path")
        holidays: Tuple[str, ...] = ()
        if hpath is not None:
            frame = pd.read_csv(hpath, dtype=str)
            if "date" not in frame.columns:
                raise DataError(f"{hpath}: holiday calendar needs a 'date' column")
            holidays = tuple(sorted(frame["date"].str.strip()))
        return self.cfg.feature_spec(holidays)

    @property
    def labels(self) -> Optional[Dict[str, str]]:
        self.collection
        choice = self.cfg.values["evaluation"]["drift_labels"]
        if choice == "none":
            return None
        if choice == "auto":
            return self._labels
        p = self.cfg._path(choice)
        if not p.exists():
            raise DataError(f"drift labels file not found: {p}")
        return read_labels_csv(p)

    # profile -------------------------------------------------------------------
    def profile(self):
        self._stage("profile", self._profile)

    def _profile(self) -> List[Path]:
        c = self.collection
        tr = self._train_collection()
        rows = []
        for sid in c.ids:
            hp = heterogeneity_profile(tr.series[sid], tr.start, self.spec.utc_offset_hours)
            rows.append({"series_id": sid, "seasonality_index": hp.seasonality_index, "total_variation": hp.total_variation,
                         "night_to_day": hp.night_to_day, "weekend_to_weekday": hp.weekend_to_weekday})
        path = self.root / "profile.csv"
        _write_csv(pd.DataFrame(rows), path)
        return [path]

    # train ---------------------------------------------------------------------
    def train(self):
        self._stage("train", self._train)

    def model(self, paradigm: str):
        if paradigm not in self._models:
            self.train()
        return self._models[paradigm]

    def _train_collection(self) -> SeriesCollection:
        return train_view(self.collection, self.split(), self.cfg.get("split", "include_val"))

    def _train(self) -> List[Path]:
        cfg = self.cfg
        tr = self._train_collection()
        paths = []
        for paradigm in cfg.get("paradigm", "paradigms"):
            bundle = self.root / "models" / paradigm
            if (bundle / "manifest.json").exists():
                model = load_bundle(bundle)
                if model.spec != self.spec:
                    raise DataError(f"stored {paradigm} bundle was built with a different feature spec")
            else:
                model = train_paradigm(paradigm, tr, self.spec, cfg.get("model", "kind"), cfg.hyperparams,
                                       cfg.get("paradigm", "variant"), cfg.get("paradigm", "k"), cfg.seed, self.threads)
                save_bundle(model, bundle)
            self._models[paradigm] = model
            paths += [p for p in bundle.rglob("*") if p.is_file()]
        return paths

    # evaluate ------------------------------------------------------------------
    def _eval_collection(self) -> SeriesCollection:
        return eval_window(self.collection, self.split(), self.cfg.get("evaluation", "window"), self.spec.window)

    def forecasts(self, paradigm: str) -> dict:
        if paradigm not in self._forecasts:
            self._forecasts[paradigm] = forecast_all(self.model(paradigm), self._eval_collection(), threads=self.threads)
        return self._forecasts[paradigm]

    def reports(self):
        ev = self._eval_collection()
        window = f"{ev.timestamps()[self.spec.window]}..{ev.timestamps()[-1]}"
        out = {}
        for paradigm in self.cfg.get("paradigm", "paradigms"):
            fc = self.forecasts(paradigm)
            out[paradigm] = metric_report({s: f.actual for s, f in fc.items()}, {s: f.predicted for s, f in fc.items()},
                                          paradigm=paradigm, model=self.cfg.get("model", "kind"), eval_window=window)
        return out

    def evaluate(self):
        self._stage("evaluate", self._evaluate)

    def _evaluate(self) -> List[Path]:
        self.train()
        reports = self.reports()
        metrics = self.root / "metrics.csv"
        write_metrics_csv(list(reports.values()), metrics)
        frames = []
        for paradigm in self.cfg.get("paradigm", "paradigms"):
            for sid, f in self.forecasts(paradigm).items():
                frame = f.frame()
                frame.insert(0, "paradigm", paradigm)
                frames.append(frame)
        forecasts = self.root / "forecasts.csv"
        _write_csv(pd.concat(frames, ignore_index=True), forecasts)
        return [metrics, forecasts]

    # peaks ---------------------------------------------------------------------
    def peaks(self):
        self._stage("peaks", self._peaks)

    def _peaks(self) -> List[Path]:
        self.evaluate()
        period = self.cfg.get("evaluation", "peak_period")
        frames = []
        for paradigm in self.cfg.get("paradigm", "paradigms"):
            for sid, f in self.forecasts(paradigm).items():
                frame = peak_error(f.actual_raw, f.predicted_raw, pd.DatetimeIndex(f.target_time).tz_localize("UTC"),
                                   period, series_id=sid)
                frame.insert(1, "paradigm", paradigm)
                frames.append(frame)
        frame = pd.concat(frames, ignore_index=True)
        frame["peak_time"] = pd.DatetimeIndex(frame["peak_time"]).strftime("%Y-%m-%dT%H:00:00Z")
        path, detail = self.root / "peaks.csv", self.root / "peaks_detail.csv"
        _write_csv(frame[PEAK_COLUMNS], path)
        _write_csv(frame, detail)
        return [path, detail]

    # drift ---------------------------------------------------------------------
    def drift(self):
        self._stage("drift", self._drift)

    def _drift(self) -> List[Path]:
        labels = self.labels
        paradigms = self.cfg.get("paradigm", "paradigms")
        if labels is None or not {"local", "global"} <= set(paradigms):
            log.info("drift report skipped (needs drift labels and both local and global paradigms)")
            return []
        self.evaluate()
        reports = self.reports()
        frame = drift_segment_report(reports["local"], reports["global"], labels)
        path = self.root / "drift.csv"
        _write_csv(frame, path)
        return [path]

    # zero-shot -----------------------------------------------------------------
    def zeroshot(self):
        self._stage("zeroshot", self._zeroshot)

    def _zeroshot(self) -> List[Path]:
        if not self.cfg.get("evaluation", "hierarchy"):
            log.info("zero-shot hierarchy evaluation disabled")
            return []
        c = self.collection
        paradigms = self.cfg.get("paradigm", "paradigms")
        paradigm = "global" if "global" in paradigms else "clusterwise"
        model = self.model(paradigm)
        split = self.split()
        tr_end = split.hours(c)[1 if self.cfg.get("split", "include_val") else 0] + 1
        which = self.cfg.get("evaluation", "window")
        area_fc = self.forecasts(paradigm)
        rows, agg_fc = [], {}
        for level in ("area->region", "area->system"):
            agg = aggregate_sum(c, level)
            history = agg.window(0, tr_end)
            ev = eval_window(agg, split, which, self.spec.window)
            for sid in agg.ids:
                f = zero_shot_forecast(model, history, ev, sid)
                agg_fc[sid] = f
                m = compute_metrics(f.actual, f.predicted)
                rows.append({"level": level.split(">")[1], "series_id": sid, "paradigm": paradigm,
                             "FB": m.fb, "nMAE_pct": m.nmae, "MSE": m.mse, "MAPE_pct": m.mape})
        for sid, f in area_fc.items():
            m = compute_metrics(f.actual, f.predicted)
            rows.append({"level": "area", "series_id": sid, "paradigm": paradigm,
                         "FB": m.fb, "nMAE_pct": m.nmae, "MSE": m.mse, "MAPE_pct": m.mape})
        system = agg_fc["system"]
        gap = coherency_gap({s: f.predicted_raw for s, f in area_fc.items()}, system.predicted_raw, system.actual_raw)
        zpath, cpath = self.root / "zeroshot.csv", self.root / "coherency.csv"
        _write_csv(pd.DataFrame(rows), zpath)
        frame = gap.frame(pd.DatetimeIndex(system.target_time).tz_localize("UTC"))
        _write_csv(frame, cpath)
        (self.root / "coherency_summary.txt").write_text(
            f"mean_abs_gap\t{gap.mean_abs_gap:.12g}\nrelative_gap\t{gap.summary:.12g}\n")
        return [zpath, cpath, self.root / "coherency_summary.txt"]

    # report --------------------------------------------------------------------
    def report(self):
        self._stage("report", self._report)

    def _report(self) -> List[Path]:
        self.evaluate()
        self.drift()
        paths = []
        if "clusterwise" in self.cfg.get("paradigm", "paradigms"):
            path = self.root / "cluster_map.csv"
            _write_csv(cluster_map(self.model("clusterwise"), self._train_collection(), self.spec), path)
            paths.append(path)
        lines = [f"run_id\t{self.cfg.run_id()}"]
        for paradigm, rep in self.reports().items():
            agg = rep.aggregate()
            for col in agg.columns:
                lines.append(f"{paradigm}\tmean_{col}\t{agg.loc['mean', col]:.12g}")
        summary = self.root / "summary.tsv"
        summary.write_text("\n".join(lines) + "\n")
        return paths + [summary]

    def run_all(self):
        for stage in STAGES:
            getattr(self, stage)()


def cluster_map(model, train: SeriesCollection, spec: FeatureSpec) -> pd.DataFrame:
    """Series-to-cluster table; instance variants report row counts per (series, cluster).

    ``train`` is the raw training view the model was fitted on.
    """
    if not isinstance(model, ClusterwiseModel):
        raise EvaluationError("cluster map needs a cluster-wise model")
    if model.series_clusters is not None:
        sc = model.series_clusters
        return pd.DataFrame({"series_id": sc.ids, "cluster": [sc.assignment[s] for s in sc.ids],
                             "model_cluster": [model.redirect.get(sc.assignment[s], sc.assignment[s]) for s in sc.ids]})
    ic = model.instance_clusters
    ids = sorted(model.normalizer.series_min)
    sizes = [train.length(sid) - spec.window for sid in ids]
    if sum(sizes) != len(ic.labels):
        raise EvaluationError("instance cluster labels do not line up with the training pool")
    rows, start = [], 0
    for sid, n in zip(ids, sizes):
        labels = ic.labels[start:start + n]
        start += n
        rows += [{"series_id": sid, "cluster": k, "n_rows": int(np.sum(labels == k))} for k in range(ic.K)]
    return pd.DataFrame(rows)


# ------------------------------------------------------------------ command line


def _overrides(pairs) -> Dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _pipeline(config, sets, seed, outdir, paradigm, model, threads) -> Pipeline:
    over = _overrides(sets)
    if seed is not None:
        over["paradigm.seed"] = str(seed)
    if outdir is not None:
        over["output.outdir"] = str(Path(outdir).resolve())
    if paradigm is not None:
        over["paradigm.paradigms"] = paradigm
    if model is not None:
        over["model.kind"] = model
    cfg = load_config(config, over)
    return Pipeline(cfg, threads)


def _common(fn):
    for deco in reversed([
        click.argument("config", type=click.Path(dir_okay=False)),
        click.option("--set", "sets", multiple=True, metavar="SECTION.KEY=VALUE", help="Override one config key."),
        click.option("--seed", type=int, default=None, help="Override [paradigm] seed."),
        click.option("--outdir", type=click.Path(file_okay=False), default=None, help="Override [output] outdir."),
        click.option("--paradigm", default=None, help="Override [paradigm] paradigms (comma separated)."),
        click.option("--model", type=click.Choice(["ridge", "gbdt"]), default=None, help="Override [model] kind."),
        click.option("--threads", type=int, default=1, show_default=True, help="Worker threads per stage."),
    ]):
        fn = deco(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log stage progress to stderr.")
def main(verbose):
    """Local, global and cluster-wise global load forecasting experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


def _command(name: str, stage: str, help_text: str):
    @_common
    def cmd(config, sets, seed, outdir, paradigm, model, threads):
        try:
            pipe = _pipeline(config, sets, seed, outdir, paradigm, model, threads)
            if stage == "run":
                pipe.run_all()
            else:
                if stage in ("ingest", "synth"):
                    _check_source(pipe.cfg, stage)
                    pipe.data()
                else:
                    getattr(pipe, stage)()
        except GridcastError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        click.echo(str(pipe.root))

    cmd.__doc__ = help_text
    main.command(name)(cmd)


def _check_source(cfg: RunConfig, stage: str):
    expected = "csv" if stage == "ingest" else "synth"
    if cfg.get("data", "source") != expected:
        raise ConfigError(f"`{stage}` needs [data] source = {expected}")


for _name, _stage, _help in [
    ("ingest", "ingest", "Validate CSV inputs and write the canonical data copy."),
    ("synth", "synth", "Generate the synthetic collection and its labels."),
    ("profile", "profile", "Write per-series heterogeneity statistics."),
    ("train", "train", "Train the configured paradigms and save model bundles."),
    ("evaluate", "evaluate", "Forecast the evaluation window and write metrics.csv."),
    ("peaks", "peaks", "Write peak-load errors per period."),
    ("zeroshot", "zeroshot", "Zero-shot forecasts of region/system aggregates plus coherency gaps."),
    ("report", "report", "Drift segments, cluster map and run summary."),
    ("run", "run", "Execute every stage in order."),
]:
    _command(_name, _stage, _help)


if __name__ == "__main__":  # pragma: no cover
    main()
