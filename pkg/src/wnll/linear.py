"""Sparse logistic scorer and its on-disk format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import SparseVector
from .errors import DataError, IndexOutOfRange

PRED_EPS = 1e-9

MODEL_FORMAT = "wnll-model"
MODEL_VERSION = 1


@dataclass
class ModelParams:
    """Weights over the hashed space, intercept and the L2 strength used to fit them."""

    weights: np.ndarray
    intercept: float = 0.0
    lam: float = 0.0
    hash_bits: int = 16

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (1 << self.hash_bits,):
            raise ValueError(f"weights must have length 2**{self.hash_bits}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise ValueError("parameters must be finite")

    @classmethod
    def zeros(cls, hash_bits: int, lam: float = 0.0) -> "ModelParams":
        return cls(np.zeros(1 << hash_bits), 0.0, lam, hash_bits)


def score(params: ModelParams, features: SparseVector) -> float:
    idx, val = features
    if len(idx) and (idx.min() < 0 or idx.max() >= len(params.weights)):
        raise IndexOutOfRange(f"feature index outside [0, 2**{params.hash_bits})")
    return float(np.dot(params.weights[idx], val)) + params.intercept


def sigmoid_clamped(s):
    return np.clip(expit(s), PRED_EPS, 1.0 - PRED_EPS)


def predict(params: ModelParams, features: SparseVector) -> float:
    return float(sigmoid_clamped(score(params, features)))


def score_batch(params: ModelParams, X: sp.csr_matrix) -> np.ndarray:
    if X.shape[1] != len(params.weights):
        raise IndexOutOfRange(f"feature matrix width {X.shape[1]} != 2**{params.hash_bits}")
    return X @ params.weights + params.intercept


def predict_batch(params: ModelParams, X: sp.csr_matrix) -> np.ndarray:
    return sigmoid_clamped(score_batch(params, X))


def dumps_model(params: ModelParams) -> str:
    """Serialize to the versioned JSON layout.

    ``{"format": "wnll-model", "version": 1, "hash_bits", "lambda",
    "intercept", "indices": [...], "weights": [...]}`` with only non-zero
    weights listed in increasing index order.  Floats use shortest-repr
    encoding, which round-trips exactly.
    """
    nz = np.flatnonzero(params.weights)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "hash_bits": params.hash_bits,
        "lambda": float(params.lam),
        "intercept": float(params.intercept),
        "indices": nz.tolist(),
        "weights": params.weights[nz].tolist(),
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def loads_model(text: str) -> ModelParams:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise DataError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} document")
    d = doc["hash_bits"]
    w = np.zeros(1 << d)
    w[np.asarray(doc["indices"], dtype=np.int64)] = doc["weights"]
    return ModelParams(w, doc["intercept"], doc["lambda"], d)


def save_model(path: str | Path, params: ModelParams) -> None:
    Path(path).write_text(dumps_model(params))


def load_model(path: str | Path) -> ModelParams:
    return loads_model(Path(path).read_text())
