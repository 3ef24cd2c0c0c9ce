"""Utility loss under log-normal second prices and the two-advertiser toy sweep."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from numpy.polynomial.legendre import leggauss

from .errors import DomainError, GridTooCoarse, QuadratureNotConverged
from .metrics import gamma_utility_term

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_SIGMA = 1.0
MAX_GRID_STEP = 1e-4
ARGMIN_ATOL = 1e-12


def lognormal_pdf(t, c: float, sigma: float):
    """Density of the log-normal second price with mean ``c``."""
    t = np.asarray(t, dtype=np.float64)
    if c <= 0 or sigma <= 0 or np.any(t <= 0):
        raise DomainError("log-normal density needs positive price, cost and sigma")
    z = (np.log(t / c) + 0.5 * sigma * sigma) / sigma
    out = np.exp(-0.5 * z * z) / (SQRT_2PI * t * sigma)
    return float(out) if out.ndim == 0 else out


def lognormal_sample(c: float, sigma: float, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.lognormal(mean=math.log(c) - 0.5 * sigma * sigma, sigma=sigma, size=size)


def utility_loss_lognormal(p: float, y: int, v: float, c: float, sigma: float = DEFAULT_SIGMA, *, tol: float = 1e-9) -> float:
    """Negative expected payoff ``int_0^{p v} (t - y v) pdf(t) dt`` by adaptive quadrature."""
    if not (0 < p < 1) or v <= 0 or c <= 0 or sigma <= 0:
        raise DomainError("need 0 < p < 1 and positive v, c, sigma")
    bid = p * v

    def integrand(t):
        return 0.0 if t <= 0 else (t - y * v) * lognormal_pdf(t, c, sigma)

    # the density is negligible below exp(log c - 40 sigma)
    lo = min(bid, c * math.exp(-0.5 * sigma * sigma - 40.0 * sigma))
    points = [c] if lo < c < bid else None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(integrand, lo, bid, epsabs=tol, epsrel=0.0, limit=500, points=points)
        except integrate.IntegrationWarning as exc:
            raise QuadratureNotConverged(str(exc)) from None
    if err > tol:
        raise QuadratureNotConverged(f"error estimate {err:.3g} above {tol:.3g}")
    return val


def utility_loss_derivative(p, y, v, c: float, sigma: float = DEFAULT_SIGMA):
    """d/dp of the log-normal Utility loss: ``v**2 (p - y) pdf(p v)``."""
    p = np.asarray(p, dtype=np.float64)
    out = v * v * (p - y) * lognormal_pdf(p * v, c, sigma)
    return float(out) if np.ndim(out) == 0 else out


def logloss_derivative(p, y):
    """d/dp of ``-y log p - (1-y) log(1-p)``."""
    p = np.asarray(p, dtype=np.float64)
    out = np.where(y == 1, -1.0 / p, 1.0 / (1.0 - p))
    return float(out) if out.ndim == 0 else out


@dataclass
class GradientTable:
    p_grid: np.ndarray
    logloss: dict[int, np.ndarray]
    utility: dict[int, np.ndarray]
    ratio: dict[int, np.ndarray]  # utility / (v * logloss)
    constant: float
    max_rel_dev: float

    @property
    def ok(self) -> bool:
        return self.max_rel_dev <= 0.05


def gradient_table_check(v: float, sigma: float = DEFAULT_SIGMA, p_grid=(1e-4, 1e-3, 1e-2)) -> GradientTable:
    """Compare Utility-loss and log-loss derivatives at ``c = p v``.

    The ratio ``utility' / (v * logloss')`` is tabulated for both labels;
    ``constant`` is its mean and ``max_rel_dev`` the largest relative
    deviation from that mean.
    """
    p_grid = np.asarray(p_grid, dtype=np.float64)
    ll, ul, ratio = {}, {}, {}
    for y in (0, 1):
        ll[y] = logloss_derivative(p_grid, y)
        ul[y] = np.array([utility_loss_derivative(p, y, v, p * v, sigma) for p in p_grid])
        ratio[y] = ul[y] / (v * ll[y])
    allr = np.concatenate([ratio[0], ratio[1]])
    k = float(allr.mean())
    return GradientTable(p_grid, ll, ul, ratio, k, float(np.max(np.abs(allr / k - 1.0))))


# ---------------------------------------------------------------- toy sweep


@dataclass(frozen=True)
class Advertiser:
    conversion_rate: float
    value: float
    mix: float


@dataclass(frozen=True)
class ToyScenario:
    advertisers: tuple[Advertiser, ...]
    lo: float
    hi: float

    def __post_init__(self):
        if not math.isclose(sum(a.mix for a in self.advertisers), 1.0, abs_tol=1e-12):
            raise ValueError("mix fractions must sum to 1")
        if not self.lo < self.hi:
            raise ValueError("uniform cost range needs lo < hi")

    @classmethod
    def default(cls) -> "ToyScenario":
        """Two advertisers: CR 0.1% at CPA 50 and CR 1% at CPA 5, costs U[0.04, 0.06]."""
        return cls((Advertiser(0.001, 50.0, 0.5), Advertiser(0.01, 5.0, 0.5)), 0.04, 0.06)


CURVES = ("nll", "wnll", "empirical_loss", "utility_loss_beta")


@dataclass
class SweepResult:
    grid: np.ndarray
    curves: dict[str, np.ndarray]
    beta: float
    argmins: dict[str, float] = field(default_factory=dict)
    optima: dict[str, list[float]] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("q",) + CURVES)
        for i, q in enumerate(self.grid):
            w.writerow([repr(float(q))] + [repr(float(self.curves[k][i])) for k in CURVES])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"beta": self.beta, "argmins": self.argmins, "optima": self.optima, "grid_size": len(self.grid)}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def default_grid() -> np.ndarray:
    return np.arange(1, 501) * 1e-4


def grid_optima(grid: np.ndarray, values: np.ndarray, atol: float = ARGMIN_ATOL) -> list[float]:
    """All grid points within ``atol`` of the minimum, smallest first."""
    best = values.min()
    return [float(q) for q in grid[values <= best + atol]]


def toy_nll(scenario: ToyScenario, q, weighted: bool = False) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros_like(q)
    for a in scenario.advertisers:
        scale = a.mix * (a.value if weighted else 1.0)
        out += scale * (-a.conversion_rate * np.log(q) - (1 - a.conversion_rate) * np.log1p(-q))
    return out


def toy_empirical_loss(scenario: ToyScenario, q) -> np.ndarray:
    """Negative expected payoff with bid ``q v`` against ``U[lo, hi]`` second prices."""
    q = np.asarray(q, dtype=np.float64)
    lo, hi = scenario.lo, scenario.hi
    out = np.zeros_like(q)
    for a in scenario.advertisers:
        m = a.conversion_rate * a.value
        u = np.clip(q * a.value, lo, hi)
        out -= a.mix * (m * (u - lo) - 0.5 * (u * u - lo * lo)) / (hi - lo)
    return out


def toy_utility_loss(scenario: ToyScenario, q, beta: float, nodes: int = 64) -> np.ndarray:
    """Negative Gamma-cost Utility averaged over labels and ``U[lo, hi]`` observed costs.

    The label enters linearly, so the Bernoulli average is the term at
    ``y = CR``; the cost average uses Gauss-Legendre quadrature.
    """
    q = np.asarray(q, dtype=np.float64)
    x, wts = leggauss(nodes)
    lo, hi = scenario.lo, scenario.hi
    costs = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    wts = 0.5 * wts  # averages over the cost interval
    out = np.zeros_like(q)
    for a in scenario.advertisers:
        terms = gamma_utility_term(q[:, None], a.value, a.conversion_rate, costs[None, :], beta)
        out -= a.mix * (terms @ wts)
    return out


def toy_expected_msew(scenario: ToyScenario, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros_like(q)
    for a in scenario.advertisers:
        r = a.conversion_rate
        out += a.mix * a.value**2 * ((r - q) ** 2 + r * (1 - r))
    return out


def _check_grid(grid: np.ndarray) -> None:
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise GridTooCoarse("grid must be a strictly increasing 1-d array")
    if np.max(np.diff(grid)) > MAX_GRID_STEP * (1 + 1e-9):
        raise GridTooCoarse(f"grid step {np.max(np.diff(grid)):.3g} exceeds {MAX_GRID_STEP}")


def toy_sweep(scenario: ToyScenario | None = None, beta: float = 30.0, grid=None) -> SweepResult:
    """Evaluate the four intercept-only loss curves on a grid of constant predictions."""
    scenario = scenario or ToyScenario.default()
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    _check_grid(grid)
    curves = {
        "nll": toy_nll(scenario, grid),
        "wnll": toy_nll(scenario, grid, weighted=True),
        "empirical_loss": toy_empirical_loss(scenario, grid),
        "utility_loss_beta": toy_utility_loss(scenario, grid, beta),
    }
    res = SweepResult(grid, curves, beta)
    for name, vals in curves.items():
        res.optima[name] = grid_optima(grid, vals)
        res.argmins[name] = res.optima[name][0]
    return res


def toy_sweep_monte_carlo(
    scenario: ToyScenario, beta: float, grid, n_displays: int, seed: int = 0
) -> dict[str, np.ndarray]:
    """Sampled-display estimates of the sweep curves, for cross-checking the exact ones."""
    grid = np.asarray(grid, dtype=np.float64)
    rng = np.random.default_rng(seed)
    mix = np.array([a.mix for a in scenario.advertisers])
    which = rng.choice(len(mix), size=n_displays, p=mix)
    cr = np.array([a.conversion_rate for a in scenario.advertisers])[which]
    v = np.array([a.value for a in scenario.advertisers])[which]
    y = (rng.random(n_displays) < cr).astype(np.float64)
    c = rng.uniform(scenario.lo, scenario.hi, size=n_displays)
    out = {k: np.empty(len(grid)) for k in CURVES}
    for i, q in enumerate(grid):
        ll = -(y * math.log(q) + (1 - y) * math.log1p(-q))
        out["nll"][i] = ll.mean()
        out["wnll"][i] = (v * ll).mean()
        out["empirical_loss"][i] = -np.where(q * v > c, y * v - c, 0.0).mean()
        out["utility_loss_beta"][i] = -np.mean(gamma_utility_term(q, v, y, c, beta))
    return out
