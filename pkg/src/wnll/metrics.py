"""Business-aware offline metrics: weighted MSE, auction payoff, expected Utility."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .data import RecordSet
from .errors import DomainError, SpecialFunctionDomain
from .special import gammainc_lower


@dataclass(frozen=True)
class CostModel:
    """Distribution of the counterfactual second price given the observed cost.

    ``dirac``: the observed cost itself.  ``gamma``: Gamma with shape
    ``beta*c + 1`` and rate ``beta`` (mode at ``c``).  ``lognormal``: mean
    ``c``, log-scale ``sigma``.  ``uniform``: ``U[lo, hi]`` regardless of ``c``.
    """

    kind: str = "gamma"
    beta: float | None = None
    sigma: float | None = None
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind == "gamma" and not (self.beta and self.beta > 0):
            raise ValueError("gamma cost model needs beta > 0")
        if self.kind == "lognormal" and not (self.sigma and self.sigma > 0):
            raise ValueError("lognormal cost model needs sigma > 0")
        if self.kind == "uniform" and not (self.lo is not None and self.hi is not None and self.lo < self.hi):
            raise ValueError("uniform cost model needs lo < hi")
        if self.kind not in ("dirac", "gamma", "lognormal", "uniform"):
            raise ValueError(f"unknown cost model {self.kind!r}")

    @classmethod
    def dirac(cls):
        return cls("dirac")

    @classmethod
    def gamma(cls, beta: float):
        return cls("gamma", beta=beta)

    @classmethod
    def lognormal(cls, sigma: float):
        return cls("lognormal", sigma=sigma)

    @classmethod
    def uniform(cls, lo: float, hi: float):
        return cls("uniform", lo=lo, hi=hi)


@dataclass(frozen=True)
class MetricReport:
    point: float
    ci_low: float
    ci_high: float
    level: float
    replicates: int

    def to_dict(self, metric: str, **extra) -> dict:
        return {"metric": metric, **asdict(self), **extra}


def _arrays(predictions, records: RecordSet):
    p = np.asarray(predictions, dtype=np.float64)
    if p.shape != (len(records),):
        raise ValueError("predictions must align with records")
    return p, records.y.astype(np.float64), records.value, records.cost


def mse_weighted(predictions, records: RecordSet) -> float:
    """Mean of ``((y - p) * v)**2`` with the raw (undampened) CPA ``v``."""
    p, y, v, _ = _arrays(predictions, records)
    return float(np.mean(((y - p) * v) ** 2))


def empirical_utility_terms(p, y, v, c) -> np.ndarray:
    """Per-auction payoff ``y*v - c`` when the bid ``p*v`` strictly beats ``c``, else 0."""
    p, y, v, c = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (p, y, v, c)))
    return np.where(p * v > c, y * v - c, 0.0)


def empirical_utility(predictions, records: RecordSet) -> float:
    return float(empirical_utility_terms(*_arrays(predictions, records)).sum())


def gamma_utility_term(p, v, y, c, beta):
    """Expected payoff against a Gamma(beta*c + 1, rate beta) second price.

    Closed form of the integral of ``(y*v - t) * pdf(t)`` over ``t`` in
    ``[0, p*v]``: ``y*v*P(a, beta*p*v) - (a/beta)*P(a + 1, beta*p*v)`` with
    ``a = beta*c + 1`` and ``P`` the regularized lower incomplete gamma.
    Broadcasts over array arguments.
    """
    p, v, y, c, beta = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (p, v, y, c, beta)))
    a = beta * c + 1.0
    x = beta * p * v
    if np.any(~(a > 0)):
        raise SpecialFunctionDomain("Gamma shape beta*c + 1 must be positive")
    if np.any(~(x >= 0)):
        raise SpecialFunctionDomain("bid p*v must be non-negative")
    out = y * v * gammainc_lower(a, x) - (a / beta) * gammainc_lower(a + 1.0, x)
    out = np.where(x == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def uniform_utility_term(p, v, y, lo: float, hi: float):
    """Expected payoff when the second price is ``U[lo, hi]``."""
    p, v, y = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (p, v, y)))
    bid = p * v
    u = np.clip(bid, lo, hi)
    out = (y * v * (u - lo) - 0.5 * (u * u - lo * lo)) / (hi - lo)
    return float(out) if out.ndim == 0 else out


def lognormal_utility_term(p, v, y, c, sigma: float):
    """Expected payoff against a log-normal second price with mean ``c``."""
    p, v, y, c = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (p, v, y, c)))
    if np.any(c <= 0):
        raise DomainError("log-normal cost model needs c > 0")
    bid = p * v
    with np.errstate(divide="ignore"):
        z = (np.log(bid / c) + 0.5 * sigma * sigma) / sigma
    out = y * v * ndtr(z) - c * ndtr(z - sigma)
    out = np.where(bid > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def utility_terms(predictions, records: RecordSet, cost_model: CostModel) -> np.ndarray:
    p, y, v, c = _arrays(predictions, records)
    if cost_model.kind == "dirac":
        return empirical_utility_terms(p, y, v, c)
    if cost_model.kind == "gamma":
        return np.asarray(gamma_utility_term(p, v, y, c, cost_model.beta)).reshape(len(p))
    if cost_model.kind == "lognormal":
        return np.asarray(lognormal_utility_term(p, v, y, c, cost_model.sigma)).reshape(len(p))
    return np.asarray(uniform_utility_term(p, v, y, cost_model.lo, cost_model.hi)).reshape(len(p))


def utility(predictions, records: RecordSet, cost_model: CostModel) -> float:
    return float(utility_terms(predictions, records, cost_model).sum())


def log_loss(predictions, records: RecordSet) -> float:
    p, y, _, _ = _arrays(predictions, records)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


# ---------------------------------------------------------------- bootstrap


def _take(records, idx):
    if hasattr(records, "take"):
        return records.take(idx)
    return [records[i] for i in idx]


def resample_indices(n: int, rng: np.random.Generator, groups=None) -> np.ndarray:
    """One N-out-of-N resample; with ``groups`` whole groups are drawn."""
    if groups is None:
        return rng.integers(0, n, size=n)
    groups = np.asarray(groups)
    uniq, inverse = np.unique(groups, return_inverse=True)
    members = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[members], np.arange(len(uniq) + 1))
    picked = rng.integers(0, len(uniq), size=len(uniq))
    return np.concatenate([members[bounds[g] : bounds[g + 1]] for g in picked])


def bootstrap(
    metric: Callable,
    records,
    replicates: int = 200,
    level: float = 0.95,
    seed: int = 0,
    *,
    groups=None,
) -> MetricReport:
    """Percentile bootstrap around the full-sample value of ``metric(records)``.

    ``records`` is anything with ``take`` or integer indexing.  The interval
    is widened to include the point estimate when the percentile interval
    misses it.
    """
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    n = len(records)
    point = float(metric(records))
    rng = np.random.default_rng(seed)
    stats = np.array([float(metric(_take(records, resample_indices(n, rng, groups)))) for _ in range(replicates)])
    alpha = 1.0 - level
    lo, hi = np.quantile(stats, [alpha / 2, 1.0 - alpha / 2])
    return MetricReport(point, float(min(lo, point)), float(max(hi, point)), level, replicates)
