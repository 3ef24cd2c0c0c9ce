"""Regularized lower incomplete gamma function P(a, x).

Power series for ``x < a + 1`` and a modified-Lentz continued fraction for
the upper function otherwise, both evaluated element-wise on numpy arrays
until the relative increment drops below ``EPS``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericalError, SpecialFunctionDomain

EPS = 1e-15
FPMIN = 1e-300

_lgamma = np.frompyfunc(math.lgamma, 1, 1)


def _log_prefactor(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log(x**a * exp(-x) / Gamma(a)).

    For ``a >= 10`` the Stirling form ``a*(log1p(t) - t) + log(a/2pi)/2 -
    corr(a)`` with ``t = x/a - 1`` avoids cancelling two terms of size ``a log a``.
    """
    out = np.empty_like(x)
    small = a < 10.0
    if small.any():
        a_s, x_s = a[small], x[small]
        out[small] = a_s * np.log(x_s) - x_s - _lgamma(a_s).astype(np.float64)
    big = ~small
    if big.any():
        a_b = a[big]
        t = (x[big] - a_b) / a_b
        inv = 1.0 / a_b
        inv2 = inv * inv
        corr = inv * (1 / 12 - inv2 * (1 / 360 - inv2 * (1 / 1260 - inv2 / 1680)))
        with np.errstate(divide="ignore"):  # x underflowing to 0 gives log1p(-1)
            out[big] = a_b * (np.log1p(t) - t) + 0.5 * np.log(a_b / (2 * math.pi)) - corr
    return out


def _max_iter(a: np.ndarray) -> int:
    return int(200 + 40 * math.sqrt(float(np.max(a, initial=1.0))))


def _series(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    ap = a.copy()
    term = 1.0 / a
    total = term.copy()
    live = np.arange(len(a))
    for _ in range(_max_iter(a)):
        ap[live] += 1.0
        term[live] *= x[live] / ap[live]
        total[live] += term[live]
        done = np.abs(term[live]) < np.abs(total[live]) * EPS
        live = live[~done]
        if live.size == 0:
            break
    else:
        raise NumericalError("incomplete gamma series did not converge")
    out[:] = total * np.exp(_log_prefactor(a, x))
    return out


def _continued_fraction(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Upper regularized function Q(a, x)."""
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / FPMIN)
    d = 1.0 / b
    h = d.copy()
    live = np.arange(len(a))
    for i in range(1, _max_iter(a)):
        an = -i * (i - a[live])
        b[live] += 2.0
        dl = an * d[live] + b[live]
        dl = np.where(np.abs(dl) < FPMIN, FPMIN, dl)
        cl = b[live] + an / c[live]
        cl = np.where(np.abs(cl) < FPMIN, FPMIN, cl)
        dl = 1.0 / dl
        delta = dl * cl
        d[live], c[live] = dl, cl
        h[live] *= delta
        done = np.abs(delta - 1.0) < EPS
        live = live[~done]
        if live.size == 0:
            break
    else:
        raise NumericalError("incomplete gamma continued fraction did not converge")
    return np.exp(_log_prefactor(a, x)) * h


def gammainc_lower(a, x):
    """P(a, x) = gamma(a, x) / Gamma(a) for ``a > 0``, ``x >= 0``; broadcasts."""
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    shape = a.shape
    a, x = a.ravel().copy(), x.ravel().copy()
    if np.any(~(a > 0)) or np.any(~np.isfinite(a)):
        raise SpecialFunctionDomain("shape parameter must be positive and finite")
    if np.any(~(x >= 0)):
        raise SpecialFunctionDomain("upper limit must be non-negative")
    out = np.zeros_like(x)
    out[np.isposinf(x)] = 1.0
    ser = (x > 0) & (x < a + 1.0)
    cf = (x >= a + 1.0) & np.isfinite(x)
    if ser.any():
        out[ser] = _series(a[ser], x[ser])
    if cf.any():
        out[cf] = 1.0 - _continued_fraction(a[cf], x[cf])
    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if shape == () else out.reshape(shape)
