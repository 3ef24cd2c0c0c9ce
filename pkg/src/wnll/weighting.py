"""Value-weighted log loss, CPA dampening and the regularization heuristics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import RecordSet
from .errors import NonFiniteLoss
from .linear import ModelParams


@dataclass(frozen=True)
class WeightingScheme:
    cap: float | None = 20.0
    power: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.power <= 1.0:
            raise ValueError("power must be in (0, 1]")
        if self.cap is not None and self.cap <= 0:
            raise ValueError("cap must be positive")

    @classmethod
    def disabled(cls) -> "WeightingScheme":
        return cls(enabled=False)

    @classmethod
    def named(cls, name: str, cap: float | None = 20.0) -> "WeightingScheme":
        """``none``, ``cpa``, ``sqrt`` or ``quartic``."""
        powers = {"cpa": 1.0, "sqrt": 0.5, "quartic": 0.25}
        if name == "none":
            return cls(cap=cap, enabled=False)
        if name not in powers:
            raise ValueError(f"unknown weighting {name!r}")
        return cls(cap=cap, power=powers[name])


def dampen(v, scheme: WeightingScheme):
    """Cap the CPA, then raise it to the scheme's power.  Works on scalars and arrays."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0):
        raise ValueError("CPA values must be positive")
    if not scheme.enabled:
        out = np.ones_like(v)
    else:
        capped = v if scheme.cap is None else np.minimum(v, scheme.cap)
        out = capped**scheme.power
    return float(out) if out.ndim == 0 else out


class WeightedLogLoss:
    """Sum of weighted logistic losses plus ``lam/2 * ||w||^2`` (intercept unpenalized).

    Parameters are packed as ``theta = [w_0, ..., w_{k-1}, b]`` where ``k``
    is the number of columns of ``X``.
    """

    def __init__(self, X: sp.csr_matrix, y, weights, lam: float):
        self.X = sp.csr_matrix(X, dtype=np.float64)
        self.XT = self.X.T.tocsr()
        self.y = np.asarray(y, dtype=np.float64)
        self.sign = 2.0 * self.y - 1.0
        self.weights = np.asarray(weights, dtype=np.float64)
        self.lam = float(lam)
        self.n, self.k = self.X.shape

    def margins(self, theta: np.ndarray) -> np.ndarray:
        return self.X @ theta[:-1] + theta[-1]

    def value(self, theta: np.ndarray) -> float:
        return self(theta)[0]

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        w = theta[:-1]
        m = self.margins(theta)
        data_loss = float(np.dot(self.weights, np.logaddexp(0.0, -self.sign * m)))
        loss = data_loss + 0.5 * self.lam * float(np.dot(w, w))
        r = self.weights * (expit(m) - self.y)
        grad = np.empty_like(theta)
        grad[:-1] = self.XT @ r + self.lam * w
        grad[-1] = r.sum()
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NonFiniteLoss("objective overflowed; check lambda and learning rate")
        return loss, grad


def record_weights(records: RecordSet, scheme: WeightingScheme | None) -> np.ndarray:
    """Dampened CPA weights, or the record set's stored weights when ``scheme`` is None."""
    if scheme is None:
        return records.weight
    return np.asarray(dampen(records.value, scheme), dtype=np.float64).reshape(len(records))


def objective(params: ModelParams, records: RecordSet, scheme: WeightingScheme | None = None):
    """WNLL value and gradient at ``params``.

    The gradient has length ``2**d + 1``; the last entry is the intercept's.
    With every weight equal to 1 this is the plain regularized log loss.
    """
    f = WeightedLogLoss(records.X, records.y, record_weights(records, scheme), params.lam)
    theta = np.append(params.weights, params.intercept)
    return f(theta)


def lambda_heuristic(records: RecordSet) -> float:
    """Mean squared L2 norm of the feature vectors (intercept excluded)."""
    if len(records) == 0:
        raise ValueError("need at least one record")
    sq = records.X.multiply(records.X).sum(axis=1)
    return float(np.mean(sq))


def rescale_lambda(lam_nll: float, weights) -> float:
    """Scale an unweighted lambda by the mean importance weight."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise ValueError("need at least one weight")
    return float(lam_nll * weights.mean())
