"""Value-weighted logistic regression for bidding, with offline auction metrics."""

from .data import DatasetSchema, RawEvent, Record, RecordSet, SparseVector
from .errors import ConfigError, DataError, NumericalError, WnllError
from .linear import ModelParams, load_model, predict, predict_batch, save_model
from .trainer import TrainerConfig, train
from .weighting import WeightingScheme, dampen, lambda_heuristic, objective, rescale_lambda

__all__ = [
    "ConfigError",
    "DataError",
    "DatasetSchema",
    "ModelParams",
    "NumericalError",
    "RawEvent",
    "Record",
    "RecordSet",
    "SparseVector",
    "TrainerConfig",
    "WeightingScheme",
    "WnllError",
    "dampen",
    "lambda_heuristic",
    "load_model",
    "objective",
    "predict",
    "predict_batch",
    "rescale_lambda",
    "save_model",
    "train",
]
