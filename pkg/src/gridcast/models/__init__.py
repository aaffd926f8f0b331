"""Ridge (feature-transforming) and GBDT (target-transforming) learners."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import TrainingError
from .gbdt import GbdtModel, Hyperparams, Tree, fit_gbdt, fit_gbdt_arrays, fit_tree
from .ridge import RidgeModel, fit_ridge, fit_ridge_arrays

FORMAT_VERSION = 1

__all__ = [
    "GbdtModel",
    "Hyperparams",
    "RidgeModel",
    "Tree",
    "fit_model",
    "fit_gbdt",
    "fit_gbdt_arrays",
    "fit_ridge",
    "fit_ridge_arrays",
    "fit_tree",
    "importance_vector",
    "load_model",
    "npz_bytes",
    "predict",
    "save_model",
]


def fit_model(data, kind: str, hp: Hyperparams = Hyperparams(), seed: int = 0, paradigm: str = "global"):
    if kind == "ridge":
        return fit_ridge(data, hp.alpha)
    if kind == "gbdt":
        return fit_gbdt(data, hp, seed, paradigm)
    raise TrainingError(f"unknown model kind {kind!r}")


def predict(model, X) -> np.ndarray:
    return model.predict(X)


def importance_vector(model):
    """Signed standardized coefficients (ridge) or normalized split gains (GBDT), with names."""
    if isinstance(model, RidgeModel):
        return np.array(model.coef, dtype=float), model.feature_names
    if isinstance(model, GbdtModel):
        return model.importances, model.feature_names
    raise TrainingError(f"not a fitted model: {type(model).__name__}")


def model_to_bytes(model) -> bytes:
    header = {"format": "gridcast-model", "version": FORMAT_VERSION, "kind": model.kind,
              "feature_names": list(model.feature_names)}
    arrays = {}
    if isinstance(model, RidgeModel):
        header.update(intercept=model.intercept.hex(), alpha=model.alpha.hex())
        arrays.update(coef=model.coef, mean=model.mean, scale=model.scale)
    elif isinstance(model, GbdtModel):
        hp = model.hyperparams
        header.update(base=model.base.hex(), learning_rate=float(model.learning_rate).hex(),
                      hyperparams=hp.__dict__, n_trees=len(model.trees), train_loss=[v.hex() for v in model.train_loss])
        arrays["gains"] = model.gains
        for i, t in enumerate(model.trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                arrays[f"t{i}_{name}"] = getattr(t, name)
    else:
        raise TrainingError(f"cannot serialize {type(model).__name__}")
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    return npz_bytes(arrays)


def npz_bytes(arrays) -> bytes:
    """``np.savez`` layout with a fixed member timestamp, so identical arrays give identical bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, member.getvalue())
    return buf.getvalue()


def model_from_bytes(blob: bytes):
    with np.load(io.BytesIO(blob), allow_pickle=False) as z:
        header = json.loads(z["header"].tobytes().decode())
        if header.get("format") != "gridcast-model" or header.get("version") != FORMAT_VERSION:
            raise TrainingError(f"unsupported model container {header.get('format')} v{header.get('version')}")
        names = tuple(header["feature_names"])
        if header["kind"] == "ridge":
            return RidgeModel(coef=z["coef"], intercept=float.fromhex(header["intercept"]), mean=z["mean"],
                              scale=z["scale"], alpha=float.fromhex(header["alpha"]), feature_names=names)
        trees = [Tree(*(z[f"t{i}_{n}"] for n in ("feature", "threshold", "left", "right", "value")))
                 for i in range(header["n_trees"])]
        return GbdtModel(base=float.fromhex(header["base"]), trees=trees,
                         learning_rate=float.fromhex(header["learning_rate"]),
                         hyperparams=Hyperparams(**header["hyperparams"]), gains=z["gains"],
                         feature_names=names, train_loss=[float.fromhex(v) for v in header["train_loss"]])


def save_model(model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
