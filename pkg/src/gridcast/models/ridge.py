"""Ridge regression on standardized features with an unpenalized intercept."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from ..errors import TrainingError


@dataclass(frozen=True)
class RidgeModel:
    coef: np.ndarray  # one weight per standardized column
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    alpha: float
    feature_names: Tuple[str, ...] = ()

    kind = "ridge"

    @property
    def p(self) -> int:
        return len(self.coef)

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} feature columns, got shape {X.shape}")
        return self.intercept + self.standardize(X) @ self.coef

    def objective(self, X, y, coef=None, intercept=None) -> float:
        """Penalized sum of squared residuals on the standardized design."""
        coef = self.coef if coef is None else coef
        intercept = self.intercept if intercept is None else intercept
        resid = np.asarray(y) - intercept - self.standardize(X) @ coef
        return float(resid @ resid + self.alpha * coef @ coef)


def fit_ridge_arrays(X, y, alpha: float = 1.0, feature_names: Optional[Tuple[str, ...]] = None) -> RidgeModel:
    """Minimise ``||y - b - Z theta||^2 + alpha ||theta||^2`` with ``Z`` standardized ``X``.

    Columns with zero variance keep a unit scale so they standardize to zero.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise TrainingError("ridge needs at least one sample")
    if len(y) != len(X):
        raise TrainingError(f"X has {len(X)} rows but y has {len(y)}")
    if alpha < 0:
        raise TrainingError("ridge alpha must be non-negative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise TrainingError("ridge inputs contain non-finite values")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    y_mean = y.mean()
    gram = Z.T @ Z
    rhs = Z.T @ (y - y_mean)
    p = X.shape[1]

    if alpha > 0:
        gram[np.diag_indices(p)] += alpha
        coef = linalg.cho_solve(linalg.cho_factor(gram, lower=True), rhs)
    else:
        eig = np.linalg.eigvalsh(gram)
        if eig[0] <= 1e-10 * max(eig[-1], 1.0):
            raise TrainingError("normal equations are numerically singular at alpha=0; use alpha > 0")
        coef = linalg.cho_solve(linalg.cho_factor(gram, lower=True), rhs)

    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(p))
    return RidgeModel(coef=coef, intercept=float(y_mean), mean=mean, scale=scale, alpha=float(alpha), feature_names=names)


def fit_ridge(data, alpha: float = 1.0) -> RidgeModel:
    return fit_ridge_arrays(data.X, data.y, alpha, data.feature_names)
