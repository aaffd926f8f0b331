"""Local, global and cluster-wise global short-term load forecasting."""

from .errors import ConfigError, DataError, EvaluationError, GridcastError, TrainingError
from .featurizer import FeatureSpec, build_pool, build_samples
from .models import Hyperparams, fit_model
from .paradigms import forecast_all, train_paradigm, zero_shot_forecast
from .series_store import SeriesCollection, SplitSpec, ingest_wide_csv

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EvaluationError",
    "FeatureSpec",
    "GridcastError",
    "Hyperparams",
    "SeriesCollection",
    "SplitSpec",
    "TrainingError",
    "build_pool",
    "build_samples",
    "fit_model",
    "forecast_all",
    "ingest_wide_csv",
    "train_paradigm",
    "zero_shot_forecast",
]
