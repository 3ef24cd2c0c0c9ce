"""SGD warm start followed by L-BFGS on the weighted log loss."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .data import RecordSet
from .errors import DivergedLoss, LineSearchFailed
from .linear import ModelParams
from .weighting import WeightedLogLoss, lambda_heuristic

log = logging.getLogger(__name__)

F_NOISE = 1e-12
ARMIJO_C = 1e-4
MAX_HALVINGS = 60


@dataclass(frozen=True)
class TrainerConfig:
    sgd_epochs: int = 1
    sgd_learning_rate: float = 0.05
    lbfgs_memory: int = 10
    gradient_tolerance: float = 1e-6
    max_iterations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.sgd_learning_rate <= 0:
            raise ValueError("sgd_learning_rate must be positive")
        if self.sgd_epochs < 0 or self.max_iterations < 0:
            raise ValueError("epoch and iteration counts must be non-negative")


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    losses: list[float] = field(default_factory=list)


# ---------------------------------------------------------------- L-BFGS


def _two_loop(g: np.ndarray, pairs: deque) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append(a)
    s, y, _ = pairs[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def _armijo(f0: float, gd: float, alpha: float, fa: float) -> bool:
    return math.isfinite(fa) and fa <= f0 + ARMIJO_C * alpha * gd


def _flat_progress(f0: float, gd: float, fa: float, ga: np.ndarray, d: np.ndarray) -> bool:
    # near the optimum the Armijo decrease drops below the rounding noise of f;
    # accept a step that keeps f within that noise and halves the directional
    # derivative (an approximate-Wolfe test)
    return math.isfinite(fa) and fa <= f0 + F_NOISE * abs(f0) and abs(float(np.dot(ga, d))) <= 0.5 * abs(gd)


def _line_search(fun, x, f0, g0, d, alpha):
    """Backtracking Armijo search with one secant refinement.

    The secant step, from the directional derivatives at 0 and at the
    trial point, is the exact minimizer along ``d`` for quadratic
    objectives; halving from the trial step takes over when both fail.
    """
    gd = float(np.dot(g0, d))
    fa, ga = fun(x + alpha * d)
    ok = lambda a, fv, gv: _armijo(f0, gd, a, fv) or _flat_progress(f0, gd, fv, gv, d)
    best = (alpha, fa, ga) if ok(alpha, fa, ga) else None

    if math.isfinite(fa) and np.all(np.isfinite(ga)):
        curv = float(np.dot(ga, d)) - gd
        if curv > 0:
            aq = -gd * alpha / curv
            if abs(aq - alpha) > 1e-6 * alpha:
                fq, gq = fun(x + aq * d)
                if ok(aq, fq, gq) and (best is None or fq <= best[1]):
                    best = (aq, fq, gq)
                elif best is None and aq < alpha:
                    alpha = 2.0 * aq  # halving below resumes from the secant point
    if best is not None:
        return best
    for _ in range(MAX_HALVINGS):
        alpha *= 0.5
        fa, ga = fun(x + alpha * d)
        if _armijo(f0, gd, alpha, fa):
            return alpha, fa, ga
    return None


def lbfgs_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    config: TrainerConfig = TrainerConfig(),
    *,
    grad_scale: float = 1.0,
) -> LbfgsResult:
    """Minimize a smooth function given as ``fun(x) -> (f, grad)``.

    Stops once ``max|grad| <= config.gradient_tolerance * grad_scale`` or
    after ``config.max_iterations`` iterations.  A failed line search clears
    the curvature memory and retries along the steepest-descent direction
    once before raising :class:`LineSearchFailed`.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    pairs: deque = deque(maxlen=config.lbfgs_memory)
    losses = [f]
    tol = config.gradient_tolerance * grad_scale
    it = 0
    while it < config.max_iterations:
        if np.max(np.abs(g), initial=0.0) <= tol:
            return LbfgsResult(x, f, g, it, True, losses)
        step = None
        for attempt in range(2):
            d = _two_loop(g, pairs) if pairs and attempt == 0 else None
            if d is None or np.dot(g, d) >= 0:
                pairs.clear()
                d = -g
                alpha = 1.0 / max(float(np.linalg.norm(g)), 1e-300)
            else:
                alpha = 1.0
            step = _line_search(fun, x, f, g, d, alpha)
            if step is not None or not pairs:
                break
        if step is None:
            raise LineSearchFailed(f"no Armijo step found at iteration {it} (f={f:.6g})")
        alpha, f_new, g_new = step
        s = alpha * d
        yv = g_new - g
        sy = float(np.dot(s, yv))
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            pairs.append((s, yv, 1.0 / sy))
        x = x + s
        f, g = f_new, g_new
        losses.append(f)
        it += 1
    converged = bool(np.max(np.abs(g), initial=0.0) <= tol)
    return LbfgsResult(x, f, g, it, converged, losses)


# ---------------------------------------------------------------- SGD


def sgd_epochs(
    problem: WeightedLogLoss,
    theta: np.ndarray,
    config: TrainerConfig,
) -> np.ndarray:
    """Plain SGD with per-example gradients multiplied by the example weight.

    Each update touches only the example's active coordinates; the L2 term
    is spread as ``lam/N * w`` over those coordinates.  Zero-weight examples
    are skipped.  Raises :class:`DivergedLoss` when an epoch's mean loss
    exceeds ten times the initial mean loss.
    """
    n = problem.n
    if n == 0 or config.sgd_epochs == 0:
        return theta.copy()
    X = problem.X
    indptr = X.indptr.tolist()
    indices = X.indices.tolist()
    data = X.data.tolist()
    ys = problem.y.tolist()
    sw = problem.weights.tolist()
    eta = config.sgd_learning_rate
    shrink = problem.lam / n
    w = theta[:-1].tolist()
    b = float(theta[-1])
    total_w = sum(sw) or 1.0
    initial = (problem.value(theta) - 0.5 * problem.lam * float(np.dot(theta[:-1], theta[:-1]))) / total_w
    rng = np.random.default_rng(config.seed)
    exp, log1p = math.exp, math.log1p

    for epoch in range(config.sgd_epochs):
        epoch_loss = 0.0
        for i in rng.permutation(n).tolist():
            wi = sw[i]
            if wi == 0.0:
                continue
            lo, hi = indptr[i], indptr[i + 1]
            m = b
            for k in range(lo, hi):
                m += w[indices[k]] * data[k]
            if m >= 0:
                e = exp(-m)
                p = 1.0 / (1.0 + e)
                nll_pos, nll_neg = log1p(e), m + log1p(e)
            else:
                e = exp(m)
                p = e / (1.0 + e)
                nll_pos, nll_neg = -m + log1p(e), log1p(e)
            yi = ys[i]
            epoch_loss += wi * (nll_pos if yi else nll_neg)
            gi = wi * (p - yi)
            for k in range(lo, hi):
                j = indices[k]
                w[j] -= eta * (gi * data[k] + shrink * w[j])
            b -= eta * gi
        mean_loss = epoch_loss / total_w
        log.debug("sgd epoch %d mean loss %.6g", epoch, mean_loss)
        if not math.isfinite(mean_loss) or mean_loss > 10.0 * initial:
            raise DivergedLoss(f"SGD epoch {epoch} mean loss {mean_loss:.4g} vs initial {initial:.4g}")
    return np.array(w + [b])


# ---------------------------------------------------------------- high level


@dataclass
class CompactProblem:
    """A record set restricted to the hashed columns it actually uses."""

    columns: np.ndarray
    loss: WeightedLogLoss
    hash_bits: int

    @classmethod
    def build(cls, records: RecordSet, weights, lam: float) -> "CompactProblem":
        X = records.X
        cols = np.unique(X.indices)
        remap = np.searchsorted(cols, X.indices)
        Xc = sp.csr_matrix((X.data, remap, X.indptr), shape=(X.shape[0], len(cols)))
        return cls(cols, WeightedLogLoss(Xc, records.y, weights, lam), records.hash_bits)

    def pack(self, params: ModelParams | None) -> np.ndarray:
        if params is None:
            return np.zeros(len(self.columns) + 1)
        return np.append(params.weights[self.columns], params.intercept)

    def unpack(self, theta: np.ndarray, base: ModelParams | None = None) -> ModelParams:
        """Scatter ``theta`` back; columns absent from the data keep ``base``'s weights."""
        w = np.zeros(1 << self.hash_bits) if base is None else base.weights.copy()
        w[self.columns] = theta[:-1]
        return ModelParams(w, float(theta[-1]), self.loss.lam, self.hash_bits)


def sgd_warmstart(
    records: RecordSet,
    config: TrainerConfig = TrainerConfig(),
    *,
    weights=None,
    lam: float = 0.0,
    init: ModelParams | None = None,
) -> ModelParams:
    weights = records.weight if weights is None else weights
    prob = CompactProblem.build(records, weights, lam)
    return prob.unpack(sgd_epochs(prob.loss, prob.pack(init), config), init)


def train(
    records: RecordSet,
    config: TrainerConfig = TrainerConfig(),
    *,
    weights=None,
    lam: float | None = None,
) -> ModelParams:
    """Fit a model: SGD warm start, then L-BFGS to ``max|grad|/N <= tol``.

    ``weights`` defaults to the record set's stored weights and ``lam`` to
    the mean squared feature norm.
    """
    weights = records.weight if weights is None else np.asarray(weights, dtype=np.float64)
    if lam is None:
        lam = lambda_heuristic(records)
    prob = CompactProblem.build(records, weights, lam)
    theta = sgd_epochs(prob.loss, prob.pack(None), config)
    res = lbfgs_minimize(prob.loss, theta, config, grad_scale=max(prob.loss.n, 1))
    log.info(
        "trained n=%d k=%d lam=%.4g: %d iterations, loss %.6g, converged=%s",
        prob.loss.n, len(prob.columns), lam, res.n_iter, res.fun, res.converged,
    )
    return prob.unpack(res.x)
