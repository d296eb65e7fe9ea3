"""Chi-square distribution functions built on the regularized incomplete gamma.

The lower regularized gamma ``P(s, x)`` is evaluated by its power series when
``x < s + 1`` and by a Lentz continued fraction for the upper tail otherwise,
which keeps both branches well inside their regions of fast convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DomainError

_EPS = 1e-16
_CF_TOL = 1e-15
_TINY = 1e-300
_MAX_TERMS = 10_000


def _series(s: float, x: np.ndarray) -> np.ndarray:
    """Sum of ``x^k / ((s+1)...(s+k))`` over k >= 0, times ``1/s``."""
    term = np.full_like(x, 1.0 / s)
    total = term.copy()
    for k in range(1, _MAX_TERMS):
        term *= x / (s + k)
        total += term
        if k % 8 == 0 and np.all(term <= _EPS * total):
            break
    return total


def _continued_fraction(s: float, x: np.ndarray) -> np.ndarray:
    """Modified Lentz evaluation of the upper-tail continued fraction."""
    b = x + 1.0 - s
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _MAX_TERMS):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d[np.abs(d) < _TINY] = _TINY
        c = b + an / c
        c[np.abs(c) < _TINY] = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if np.all(np.abs(delta - 1.0) <= _CF_TOL):
            break
    return h


def _log_regularized_gamma(s: float, x: np.ndarray, upper: bool) -> np.ndarray:
    """``log P(s, x)`` or ``log Q(s, x)`` for finite positive ``x``."""
    log_prefactor = s * np.log(x) - x - math.lgamma(s)
    out = np.empty(x.shape)
    low = x < s + 1.0
    if low.any():
        log_lower = log_prefactor[low] + np.log(_series(s, x[low]))
        out[low] = np.log1p(-np.exp(log_lower)) if upper else log_lower
    if (~low).any():
        log_tail = log_prefactor[~low] + np.log(_continued_fraction(s, x[~low]))
        out[~low] = log_tail if upper else np.log1p(-np.exp(log_tail))
    return out


def _regularized_gamma(s: float, x, upper: bool) -> np.ndarray:
    if not s > 0:
        raise DomainError(f"shape must be positive, got {s}")
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, 1.0 if upper else 0.0)
    out[np.isposinf(x)] = 0.0 if upper else 1.0
    inner = (x > 0) & np.isfinite(x)
    if inner.any():
        with np.errstate(divide="ignore"):
            out[inner] = np.clip(np.exp(_log_regularized_gamma(s, x[inner], upper)), 0.0, 1.0)
    return out


def regularized_gamma_lower(s: float, x) -> np.ndarray:
    """``P(s, x) = gamma(s, x) / Gamma(s)`` for scalar ``s > 0`` and array ``x``."""
    return _regularized_gamma(s, x, upper=False)


def regularized_gamma_upper(s: float, x) -> np.ndarray:
    """``Q(s, x) = 1 - P(s, x)``, computed without cancellation in the upper tail."""
    return _regularized_gamma(s, x, upper=True)


def chi2_cdf(x, df: int):
    """Chi-square CDF with ``df`` degrees of freedom; negative ``x`` maps to 0."""
    _check_df(df)
    x = np.asarray(x, dtype=float)
    value = regularized_gamma_lower(df / 2.0, np.maximum(x, 0.0) / 2.0)
    return float(value) if value.ndim == 0 else value


def chi2_sf(x, df: int):
    """Chi-square survival function ``1 - cdf``."""
    _check_df(df)
    x = np.asarray(x, dtype=float)
    value = regularized_gamma_upper(df / 2.0, np.maximum(x, 0.0) / 2.0)
    return float(value) if value.ndim == 0 else value


def chi2_quantile(p, df: int, rtol: float = 1e-14):
    """Inverse of :func:`chi2_cdf` for ``p`` in the open unit interval.

    Newton's method on ``log x`` applied to ``log P`` (or ``log Q`` when
    ``p > 1/2``, matched against ``1 - p`` which is exact in floating point),
    safeguarded by bisection inside a shrinking bracket.  Working on the log
    scale keeps both tails at full relative accuracy.
    """
    _check_df(df)
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0) | ~(p < 1)):
        raise DomainError("chi-square quantile needs p strictly between 0 and 1")
    flat = p.ravel()
    out = np.empty(flat.shape)
    upper = flat > 0.5
    for branch in (False, True):
        sel = upper == branch
        if sel.any():
            out[sel] = _invert(flat[sel], df, branch, rtol)
    out = out.reshape(p.shape)
    return float(out) if out.ndim == 0 else out


def _invert(p: np.ndarray, df: int, upper: bool, rtol: float) -> np.ndarray:
    s = df / 2.0
    target = np.log1p(-p) if upper else np.log(p)
    h = 2.0 / (9.0 * df)
    wilson_hilferty = df * (1.0 - h + ndtri(p) * math.sqrt(h)) ** 3
    small_p = 2.0 * np.exp((np.log(p) + math.lgamma(s + 1.0)) / s)
    start = np.where(wilson_hilferty > 0, wilson_hilferty, small_p)
    # Newton runs on u = log(x / 2), the log of the gamma variate
    u = np.log(np.maximum(start, 1e-300) / 2.0)
    lo = np.full(p.shape, -np.inf)
    hi = np.full(p.shape, np.inf)
    active = np.arange(p.size)
    for _ in range(200):
        if active.size == 0:
            break
        ua = u[active]
        xa = np.exp(ua)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            log_value = _log_regularized_gamma(s, xa, upper)
            # increasing in x for the lower branch, decreasing for the upper one
            diff = log_value - target[active]
            if upper:
                diff = -diff
            # d log P / du = x * density / P, with density x^(s-1) e^-x / Gamma(s)
            log_slope = s * ua - xa - math.lgamma(s) - log_value
            step = ua - diff / np.exp(log_slope)
        below = diff < 0
        lo_a = np.where(below, ua, lo[active])
        hi_a = np.where(below, hi[active], ua)
        bounded = np.isfinite(lo_a) & np.isfinite(hi_a)
        fallback = np.where(bounded, (lo_a + hi_a) / 2.0, np.where(below, ua + 1.0, ua - 1.0))
        inside = np.isfinite(step) & (step > lo_a) & (step < hi_a)
        new = np.where(inside, step, fallback)
        new = np.where(diff == 0, ua, new)
        lo[active], hi[active], u[active] = lo_a, hi_a, new
        done = (np.abs(new - ua) <= rtol) | (diff == 0) | (bounded & (hi_a - lo_a <= rtol))
        active = active[~done]
    return 2.0 * np.exp(u)


def _check_df(df) -> None:
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df}")


@dataclass(frozen=True)
class ChiSquare:
    """Handle exposing ``cdf`` and ``quantile`` for a fixed number of degrees of freedom."""

    df: int

    def __post_init__(self):
        _check_df(self.df)

    def cdf(self, x):
        return chi2_cdf(x, self.df)

    def quantile(self, p):
        return chi2_quantile(p, self.df)


def chi_square(df: int) -> ChiSquare:
    return ChiSquare(int(df))
