"""Two-stage (click x conversion-given-click) prediction and its training weights.

The click model is a frozen input.  ``postclick_weight`` gives the weight of
each *display* when fitting the conversion-given-click model so that its
log-loss gradient matches the display-level Utility gradient of the bid
``p_click * p * v``: converted displays count ``v``, the rest ``v * p_click``.
Restricted to clicked displays the same gradient is obtained, in expectation,
with weight ``v`` on every example because ``Pr(click | no conversion)`` is
approximately ``p_click`` when conversions are rare (see
:func:`clicked_sample_weight`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SparseVector
from .linear import ModelParams, predict, predict_batch


@dataclass(frozen=True)
class TwoStagePrediction:
    p_click: float
    p_conv_given_click: float

    @property
    def p_total(self) -> float:
        return self.p_click * self.p_conv_given_click


def postclick_weight(y, v, p_click):
    """``v`` for converted displays, ``v * p_click`` otherwise.  Broadcasts."""
    y, v, p_click = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (y, v, p_click)))
    if np.any((p_click <= 0) | (p_click >= 1)):
        raise ValueError("p_click must be in (0, 1)")
    if np.any(v <= 0):
        raise ValueError("v must be positive")
    out = np.where(y == 1, v, v * p_click)
    return float(out) if out.ndim == 0 else out


def clicked_sample_weight(y, v):
    """Weight for the same objective estimated on clicked displays only: ``v`` for both labels."""
    y, v = np.broadcast_arrays(np.asarray(y, dtype=np.float64), np.asarray(v, dtype=np.float64))
    return v.astype(np.float64).copy() if v.ndim else float(v)


def two_stage_predict(click_model: ModelParams, conv_model: ModelParams, features: SparseVector) -> TwoStagePrediction:
    return TwoStagePrediction(predict(click_model, features), predict(conv_model, features))


def two_stage_predict_batch(click_model: ModelParams, conv_model: ModelParams, X) -> tuple[np.ndarray, np.ndarray]:
    """``(p_click, p_conv_given_click)`` for each row; the bid probability is their product."""
    return predict_batch(click_model, X), predict_batch(conv_model, X)
