"""Local, pooled-global and cluster-wise global forecasting.

All paradigms train on per-series min-max normalized samples so that series
of different magnitudes pool on a common scale; forecasts are returned on
both the normalized and the raw (MW) scale.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .clustering import InstanceClusters, SeriesClusters, model_based_tsc, weighted_instance_tsc, weighted_sq_dist
from .errors import DataError, TrainingError
from .featurizer import FeatureSpec, SampleSet, build_pool, build_samples
from .models import Hyperparams, fit_model, importance_vector, load_model, npz_bytes, save_model
from .series_store import Normalizer, SeriesCollection, minmax_normalize

log = logging.getLogger(__name__)

VARIANTS = ("model-based", "instance", "weighted-instance")


@contextmanager
def _executor(threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex
    else:
        yield None


def _map(executor, fn, items):
    return list(executor.map(fn, items)) if executor is not None else [fn(i) for i in items]


def _min_rows(kind: str, hp: Hyperparams) -> int:
    return 2 * hp.min_samples_leaf if kind == "gbdt" else 1


@dataclass
class LocalEnsemble:
    models: Dict[str, object]
    spec: FeatureSpec
    normalizer: Normalizer
    kind: str
    hp: Hyperparams = field(default_factory=Hyperparams)

    paradigm = "local"

    @property
    def n_models(self) -> int:
        return len(self.models)


@dataclass
class GlobalModel:
    model: object
    spec: FeatureSpec
    normalizer: Normalizer
    kind: str
    n_rows: int
    hp: Hyperparams = field(default_factory=Hyperparams)

    paradigm = "global"
    n_models = 1


@dataclass
class ClusterwiseModel:
    variant: str
    K: int
    models: Dict[int, object]  # cluster id -> fitted model
    spec: FeatureSpec
    normalizer: Normalizer
    kind: str
    seed: int
    series_clusters: Optional[SeriesClusters] = None
    instance_clusters: Optional[InstanceClusters] = None
    weight_model: Optional[object] = None  # pooled model whose importances weight the instance metric
    redirect: Dict[int, int] = field(default_factory=dict)  # merged (degenerate) cluster -> host
    hp: Hyperparams = field(default_factory=Hyperparams)

    paradigm = "clusterwise"

    @property
    def n_models(self) -> int:
        return len(self.models)

    def model_for(self, k: int):
        return self.models[self.redirect.get(k, k)]


Paradigm = Union[LocalEnsemble, GlobalModel, ClusterwiseModel]


def _prepare(train: SeriesCollection):
    normalizer = Normalizer.fit(train)
    return normalizer, minmax_normalize(train, normalizer)


# -------------------------------------------------------------- training


def train_local(train: SeriesCollection, spec: FeatureSpec, model_kind: str, hp: Hyperparams = Hyperparams(),
                seed: int = 0, threads: int = 1) -> LocalEnsemble:
    """One independent model per series; any failure aborts the whole ensemble."""
    normalizer, norm = _prepare(train)

    def one(sid):
        try:
            return sid, fit_model(build_samples(norm, sid, spec), model_kind, hp, seed, paradigm="local"), None
        except Exception as exc:  # collected so every failing id is reported
            return sid, None, exc

    with _executor(threads) as ex:
        results = _map(ex, one, norm.ids)
    failed = {sid: exc for sid, _, exc in results if exc is not None}
    if failed:
        detail = "; ".join(f"{sid}: {exc}" for sid, exc in failed.items())
        raise TrainingError(f"local training failed for {len(failed)} series ({detail})")
    return LocalEnsemble({sid: m for sid, m, _ in results}, spec, normalizer, model_kind, hp)


def train_global(train: SeriesCollection, spec: FeatureSpec, model_kind: str, hp: Hyperparams = Hyperparams(),
                 seed: int = 0, threads: int = 1) -> GlobalModel:
    """One model on the row-concatenated pool (series id order, then time)."""
    normalizer, norm = _prepare(train)
    pool = build_pool(norm, spec)
    return GlobalModel(fit_model(pool, model_kind, hp, seed, paradigm="global"), spec, normalizer, model_kind, len(pool), hp)


def _merge_degenerate(sizes: Dict[int, int], centroids: np.ndarray, w: np.ndarray, minimum: int) -> Dict[int, int]:
    """Redirect clusters with too few rows to the nearest viable centroid."""
    viable = [k for k, n in sizes.items() if n >= minimum]
    if not viable:
        raise TrainingError("no cluster has enough rows to fit a model")
    redirect = {}
    for k, n in sorted(sizes.items()):
        if n < minimum:
            d = weighted_sq_dist(centroids[[k]], centroids[viable], w)[0]
            redirect[k] = viable[int(np.argmin(d))]
            log.warning("cluster %d has %d rows (< %d); merged into cluster %d", k, n, minimum, redirect[k])
    return redirect


def train_clusterwise(train: SeriesCollection, spec: FeatureSpec, model_kind: str, hp: Hyperparams = Hyperparams(),
                      variant: str = "model-based", K: Optional[int] = 2, seed: int = 0, threads: int = 1) -> ClusterwiseModel:
    """Cluster series (model-based) or pooled rows (instance variants), then fit one pooled model per cluster."""
    if variant not in VARIANTS:
        raise TrainingError(f"unknown cluster-wise variant {variant!r}")
    normalizer, norm = _prepare(train)
    n = len(norm.ids)
    minimum = _min_rows(model_kind, hp)

    with _executor(threads) as ex:
        if variant == "model-based":
            clusters = model_based_tsc(norm, spec, model_kind, K, seed, hp, executor=ex)
            K = clusters.K
            parts = {sid: build_samples(norm, sid, spec) for sid in norm.ids}
            sizes = {k: sum(len(parts[s]) for s in clusters.members(k)) for k in range(K)}
            redirect = _merge_degenerate(sizes, clusters.centroids, np.ones(clusters.centroids.shape[1]), minimum)
            groups: Dict[int, List[str]] = {}
            for sid in norm.ids:
                k = clusters.assignment[sid]
                groups.setdefault(redirect.get(k, k), []).append(sid)
            keys = sorted(groups)
            fits = _map(ex, lambda k: fit_model(SampleSet.concat([parts[s] for s in groups[k]]), model_kind, hp, seed), keys)
            model = ClusterwiseModel(variant, K, dict(zip(keys, fits)), spec, normalizer, model_kind, seed,
                                     series_clusters=clusters, redirect=redirect, hp=hp)
        else:
            pool = build_pool(norm, spec)
            weight_model = fit_model(pool, model_kind, hp, seed)
            if K is None:
                K = 2
            clusters = weighted_instance_tsc(pool, weight_model, K, seed, uniform=(variant == "instance"))
            sizes = {k: int(np.sum(clusters.labels == k)) for k in range(K)}
            redirect = _merge_degenerate(sizes, clusters.centroids, clusters.weights, minimum)
            target = np.array([redirect.get(int(k), int(k)) for k in clusters.labels])
            keys = sorted(set(target.tolist()))
            fits = _map(ex, lambda k: fit_model(pool.rows(np.flatnonzero(target == k)), model_kind, hp, seed), keys)
            model = ClusterwiseModel(variant, K, dict(zip(keys, fits)), spec, normalizer, model_kind, seed,
                                     instance_clusters=clusters, weight_model=weight_model, redirect=redirect, hp=hp)
    if not 1 < K < n:
        log.info("cluster-wise run with K=%d for n=%d series is outside 1 < K < n", K, n)
    return model


def train_paradigm(paradigm: str, train: SeriesCollection, spec: FeatureSpec, model_kind: str,
                   hp: Hyperparams = Hyperparams(), variant: str = "model-based", K: Optional[int] = 2,
                   seed: int = 0, threads: int = 1) -> Paradigm:
    if paradigm == "local":
        return train_local(train, spec, model_kind, hp, seed, threads)
    if paradigm == "global":
        return train_global(train, spec, model_kind, hp, seed, threads)
    if paradigm == "clusterwise":
        return train_clusterwise(train, spec, model_kind, hp, variant, K, seed, threads)
    raise TrainingError(f"unknown paradigm {paradigm!r}")


# ------------------------------------------------------------ forecasting


@dataclass
class Forecast:
    series_id: str
    target_time: np.ndarray
    predicted: np.ndarray  # normalized
    actual: np.ndarray  # normalized
    predicted_raw: np.ndarray
    actual_raw: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "series_id": self.series_id,
                "timestamp": pd.DatetimeIndex(self.target_time).strftime("%Y-%m-%dT%H:00:00Z"),
                "actual": self.actual_raw,
                "predicted": self.predicted_raw,
                "actual_norm": self.actual,
                "predicted_norm": self.predicted,
            }
        )


def _predict_rows(model: Paradigm, sid: str, samples: SampleSet, cluster: Optional[int] = None) -> np.ndarray:
    if isinstance(model, LocalEnsemble):
        return model.models[sid].predict(samples.X)
    if isinstance(model, GlobalModel):
        return model.model.predict(samples.X)
    if model.variant == "model-based":
        return model.model_for(cluster).predict(samples.X)
    route = model.instance_clusters.route(samples.X)
    out = np.empty(len(samples))
    for k in np.unique(route):
        rows = route == k
        out[rows] = model.model_for(int(k)).predict(samples.X[rows])
    return out


def _forecast_with(model: Paradigm, sid: str, eval_collection: SeriesCollection, normalizer: Normalizer,
                   cluster: Optional[int] = None) -> Forecast:
    if sid not in eval_collection.series:
        raise DataError(f"series {sid!r} missing from the evaluation collection")
    view = minmax_normalize(eval_collection.subset([sid]), normalizer.restrict([sid]))
    samples = build_samples(view, sid, model.spec)
    pred = _predict_rows(model, sid, samples, cluster)
    return Forecast(
        sid,
        samples.target_time,
        pred,
        samples.y,
        normalizer.invert(sid, pred),
        np.asarray(eval_collection.series[sid][model.spec.window :], dtype=float),
    )


def forecast_series(model: Paradigm, series_id: str, eval_collection: SeriesCollection) -> Forecast:
    """One-hour-ahead forecasts for every target after the first ``spec.window`` hours of ``eval_collection``."""
    if series_id not in model.normalizer.series_min:
        raise DataError(f"series {series_id!r} was not part of training; use zero_shot_forecast")
    if isinstance(model, LocalEnsemble) and series_id not in model.models:
        raise DataError(f"no local model for series {series_id!r}")
    cluster = None
    if isinstance(model, ClusterwiseModel) and model.variant == "model-based":
        cluster = model.series_clusters.assignment[series_id]
    return _forecast_with(model, series_id, eval_collection, model.normalizer, cluster)


def forecast_all(model: Paradigm, eval_collection: SeriesCollection, ids=None, threads: int = 1) -> Dict[str, Forecast]:
    ids = eval_collection.ids if ids is None else list(ids)
    with _executor(threads) as ex:
        results = _map(ex, lambda s: forecast_series(model, s, eval_collection), ids)
    return dict(zip(ids, results))


def zero_shot_forecast(model: Paradigm, history: SeriesCollection, eval_collection: SeriesCollection,
                       series_id: str) -> Forecast:
    """Forecast a series never seen in training.

    ``history`` is the series' pre-evaluation data: it fits a fresh min-max
    normalizer and, for model-based clusters, a throwaway local model whose
    coefficients pick the nearest cluster centroid.
    """
    if isinstance(model, LocalEnsemble):
        raise TrainingError("local ensembles cannot forecast unseen series")
    if series_id not in history.series:
        raise DataError(f"series {series_id!r} missing from the history collection")
    if history.length(series_id) < model.spec.window + 1:
        raise DataError(
            f"zero-shot needs at least {model.spec.window + 1} hours of history for {series_id!r}, "
            f"got {history.length(series_id)}"
        )
    values = history.series[series_id]
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise DataError(f"series {series_id!r} is constant over its history; cannot normalize")
    normalizer = Normalizer({series_id: lo}, {series_id: hi}, model.normalizer.channel_min, model.normalizer.channel_max)
    cluster = None
    if isinstance(model, ClusterwiseModel) and model.variant == "model-based":
        norm_hist = minmax_normalize(history.subset([series_id]), normalizer)
        local = fit_model(build_samples(norm_hist, series_id, model.spec), model.kind, model.hp, model.seed, paradigm="local")
        cluster = model.series_clusters.assign(importance_vector(local)[0])
    return _forecast_with(model, series_id, eval_collection, normalizer, cluster)


def forecast_recursive(model: Paradigm, series_id: str, history: SeriesCollection, horizon: int) -> np.ndarray:
    """Multi-step forecast by feeding one-step predictions back as load history.

    Exogenous channels in ``history`` must extend ``horizon`` hours past the
    last load value. Experimental: not covered by the evaluation harness.
    """
    y = list(np.asarray(history.series[series_id], dtype=float))
    out = []
    for _ in range(horizon):
        probe = history.with_series({series_id: np.append(y, y[-1])}).subset([series_id])
        fc = forecast_series(model, series_id, probe.window(len(y) - model.spec.window, len(y) + 1))
        out.append(fc.predicted_raw[-1])
        y.append(fc.predicted_raw[-1])
    return np.asarray(out)


# ---------------------------------------------------------------- bundles


def _normalizer_to_dict(n: Normalizer) -> dict:
    return {k: {s: float(v).hex() for s, v in getattr(n, k).items()} for k in ("series_min", "series_max", "channel_min", "channel_max")}


def _normalizer_from_dict(d: dict) -> Normalizer:
    return Normalizer(**{k: {s: float.fromhex(v) for s, v in d[k].items()} for k in d})


def save_bundle(model: Paradigm, outdir) -> Path:
    """Manifest + serialized models + cluster maps + normalizers."""
    out = Path(outdir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    manifest = {
        "paradigm": model.paradigm,
        "kind": model.kind,
        "spec": model.spec.to_dict(),
        "spec_hash": model.spec.spec_hash(),
        "hyperparams": asdict(model.hp),
    }
    if isinstance(model, LocalEnsemble):
        for i, sid in enumerate(sorted(model.models)):
            save_model(model.models[sid], out / "models" / f"series_{i:04d}.npz")
        manifest["series"] = sorted(model.models)
    elif isinstance(model, GlobalModel):
        save_model(model.model, out / "models" / "global.npz")
        manifest["n_rows"] = model.n_rows
    else:
        manifest.update(variant=model.variant, K=model.K, seed=model.seed,
                        redirect={str(k): v for k, v in model.redirect.items()}, clusters=sorted(model.models))
        for k, m in model.models.items():
            save_model(m, out / "models" / f"cluster_{k}.npz")
        if model.series_clusters is not None:
            sc = model.series_clusters
            pd.DataFrame({"series_id": sc.ids, "cluster": [sc.assignment[s] for s in sc.ids]}).to_csv(
                out / "clusters.csv", index=False, lineterminator="\n")
            (out / "series_clusters.npz").write_bytes(npz_bytes(dict(
                coefficients=sc.coefficients, coef_mean=sc.coef_mean, coef_scale=sc.coef_scale, centroids=sc.centroids)))
            manifest["feature_names"] = list(sc.feature_names)
        else:
            ic = model.instance_clusters
            pd.DataFrame({"row_index": np.arange(len(ic.labels)), "cluster": ic.labels}).to_csv(
                out / "clusters.csv", index=False, lineterminator="\n")
            (out / "instance_clusters.npz").write_bytes(npz_bytes(dict(
                centroids=ic.centroids, weights=ic.weights, labels=ic.labels)))
            save_model(model.weight_model, out / "models" / "weight_model.npz")
            manifest["feature_names"] = list(ic.feature_names)
    (out / "normalizer.json").write_text(json.dumps(_normalizer_to_dict(model.normalizer), indent=1, sort_keys=True) + "\n")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=list) + "\n")
    return out


def load_bundle(path) -> Paradigm:
    src = Path(path)
    manifest = json.loads((src / "manifest.json").read_text())
    spec = FeatureSpec.from_dict(manifest["spec"])
    if spec.spec_hash() != manifest["spec_hash"]:
        raise DataError("bundle feature spec does not match its recorded hash")
    hp = Hyperparams(**manifest["hyperparams"])
    normalizer = _normalizer_from_dict(json.loads((src / "normalizer.json").read_text()))
    kind = manifest["kind"]
    if manifest["paradigm"] == "local":
        models = {sid: load_model(src / "models" / f"series_{i:04d}.npz") for i, sid in enumerate(manifest["series"])}
        return LocalEnsemble(models, spec, normalizer, kind, hp)
    if manifest["paradigm"] == "global":
        return GlobalModel(load_model(src / "models" / "global.npz"), spec, normalizer, kind, manifest["n_rows"], hp)
    models = {k: load_model(src / "models" / f"cluster_{k}.npz") for k in manifest["clusters"]}
    redirect = {int(k): v for k, v in manifest["redirect"].items()}
    names = tuple(manifest["feature_names"])
    common = dict(variant=manifest["variant"], K=manifest["K"], models=models, spec=spec, normalizer=normalizer,
                  kind=kind, seed=manifest["seed"], redirect=redirect, hp=hp)
    if manifest["variant"] == "model-based":
        frame = pd.read_csv(src / "clusters.csv", dtype={"series_id": str})
        with np.load(src / "series_clusters.npz") as z:
            sc = SeriesClusters(dict(zip(frame["series_id"], frame["cluster"].astype(int))), list(frame["series_id"]),
                                z["coefficients"], z["coef_mean"], z["coef_scale"], z["centroids"], manifest["K"], names)
        return ClusterwiseModel(series_clusters=sc, **common)
    with np.load(src / "instance_clusters.npz") as z:
        ic = InstanceClusters(z["labels"], z["centroids"], z["weights"], manifest["K"], names)
    return ClusterwiseModel(instance_clusters=ic, weight_model=load_model(src / "models" / "weight_model.npz"), **common)
