"""The constrained-Gaussian mixture law of the rerandomized estimator.

Under two-stage rerandomization ``sqrt(n) (tau_hat - tau)`` is approximately

    sqrt(V) * ( sqrt(1 - R_S^2 - R_T^2) eps + R_S L_{J,a_S} + R_T L_{K,a_T} )

with independent ``eps ~ N(0, 1)`` and constrained Gaussians ``L_{k,a}``: the
first coordinate of a standard k-variate Gaussian conditioned on its squared
norm being at most ``a``.  ``R_S`` and ``R_T`` denote the square roots of the
R^2 shares.  The law has no closed form, so quantiles come from seeded Monte
Carlo draws that are cached per ``(k, a, draws, seed)`` and recombined for
any R^2 pair.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .balance import BalanceCriteria
from .chisquare import chi2_cdf, chi2_quantile
from .design import as_generator
from .errors import DegenerateEstimateError, DomainError, PrecisionWarning

DEFAULT_MC_DRAWS = 10**6
DEFAULT_MC_SEED = 20240917
MIN_MC_DRAWS = 10**4
CDF_DRAWS = 20_000


def truncated_variance_factor(k: int, a: float) -> float:
    """``v_{k,a} = P(chi2_{k+2} <= a) / P(chi2_k <= a)``, the variance of ``L_{k,a}``."""
    if k < 1:
        raise DomainError("dimension must be at least 1")
    if not a > 0:
        raise DomainError(f"threshold must be positive, got {a}")
    if math.isinf(a):
        return 1.0
    return chi2_cdf(a, k + 2) / chi2_cdf(a, k)


def draw_constrained_gaussian(k: int, a: float, rng, size=None):
    """Exact draws of ``L_{k,a}``.

    The squared radius is drawn by inverting the chi-square CDF on
    ``[0, P(chi2_k <= a)]`` and multiplied by the first coordinate of a
    uniform direction, which is ``+-sqrt(Beta(1/2, (k-1)/2))``.
    """
    if k < 1:
        raise DomainError("dimension must be at least 1")
    if not a > 0:
        raise DomainError(f"threshold must be positive, got {a}")
    gen = as_generator(rng)
    if math.isinf(a):
        return gen.standard_normal(size)
    u = gen.random(size)
    level = np.maximum(u * chi2_cdf(a, k), np.finfo(float).tiny)
    radius = np.sqrt(np.minimum(chi2_quantile(level, k), a))
    sign = np.where(gen.random(size) < 0.5, -1.0, 1.0)
    coordinate = sign if k == 1 else sign * np.sqrt(gen.beta(0.5, (k - 1) / 2.0, size))
    draw = radius * coordinate
    return float(draw) if np.ndim(draw) == 0 else draw


@lru_cache(maxsize=32)
def _component_draws(k: int, a: float, draws: int, seed: int, stream: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))
    if k == 0 or math.isinf(a):
        values = gen.standard_normal(draws)
    else:
        values = draw_constrained_gaussian(k, a, gen, draws)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class AsymptoticLaw:
    """Parameters ``(V, R_S^2, R_T^2, J, a_S, K, a_T)`` of the limiting law.

    An infinite threshold turns its constrained component into a standard
    Gaussian, so its R^2 share simply merges with the Gaussian share.
    """

    variance: float
    r2_sampling: float
    r2_assignment: float
    dim_sampling: int
    threshold_sampling: float
    dim_assignment: int
    threshold_assignment: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError("law variance must be positive")
        for name in ("r2_sampling", "r2_assignment"):
            if not -1e-12 <= getattr(self, name) <= 1 + 1e-12:
                raise DomainError(f"{name} must lie in [0, 1]")
        if self.r2_sampling + self.r2_assignment > 1 + 1e-10:
            raise DomainError("R^2 shares must sum to at most 1")
        for name in ("threshold_sampling", "threshold_assignment"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")

    @classmethod
    def from_criteria(cls, variance: float, r2_sampling: float, r2_assignment: float, criteria: BalanceCriteria):
        return cls(
            variance,
            r2_sampling,
            r2_assignment,
            criteria.dim_sampling,
            criteria.threshold_sampling,
            criteria.dim_assignment,
            criteria.threshold_assignment,
        )

    def _constrained(self, dim: int, threshold: float) -> bool:
        return dim > 0 and math.isfinite(threshold)

    @property
    def shares(self) -> tuple[float, float, float]:
        """Weights on ``eps``, ``L_{J,a_S}`` and ``L_{K,a_T}`` after merging unconstrained parts."""
        s = max(self.r2_sampling, 0.0) if self._constrained(self.dim_sampling, self.threshold_sampling) else 0.0
        t = max(self.r2_assignment, 0.0) if self._constrained(self.dim_assignment, self.threshold_assignment) else 0.0
        return max(1.0 - s - t, 0.0), s, t

    def variance_factor(self) -> float:
        """``1 - (1 - v_J) R_S^2 - (1 - v_K) R_T^2``."""
        _, s, t = self.shares
        v_j = truncated_variance_factor(self.dim_sampling, self.threshold_sampling) if s else 1.0
        v_k = truncated_variance_factor(self.dim_assignment, self.threshold_assignment) if t else 1.0
        return 1.0 - (1.0 - v_j) * s - (1.0 - v_k) * t

    def law_variance(self) -> float:
        return self.variance * self.variance_factor()

    def sample(self, size: int, rng) -> np.ndarray:
        """Fresh draws of the law, scaled by ``sqrt(V)``."""
        gen = as_generator(rng)
        g, s, t = self.shares
        out = math.sqrt(g) * gen.standard_normal(size)
        if s:
            out += math.sqrt(s) * draw_constrained_gaussian(self.dim_sampling, self.threshold_sampling, gen, size)
        if t:
            out += math.sqrt(t) * draw_constrained_gaussian(self.dim_assignment, self.threshold_assignment, gen, size)
        return math.sqrt(self.variance) * out

    def _standard_draws(self, draws: int, seed: int) -> np.ndarray:
        g, s, t = self.shares
        out = math.sqrt(g) * _component_draws(0, math.inf, draws, seed, 0)
        if s:
            out = out + math.sqrt(s) * _component_draws(self.dim_sampling, self.threshold_sampling, draws, seed, 1)
        if t:
            out = out + math.sqrt(t) * _component_draws(
                self.dim_assignment, self.threshold_assignment, draws, seed, 2
            )
        return out

    def quantile(self, xi: float, mc_draws: int = DEFAULT_MC_DRAWS, seed: int = DEFAULT_MC_SEED, strict: bool = False):
        return math.sqrt(self.variance) * nu_quantile(xi, self, mc_draws, seed, strict)

    def cdf(self, x, mc_draws: int = CDF_DRAWS, seed: int = DEFAULT_MC_SEED):
        """CDF of the law at ``x``, smoothed by integrating the Gaussian part exactly."""
        z = np.asarray(x, dtype=float) / math.sqrt(self.variance)
        g, s, t = self.shares
        values = standardized_cdf(
            z.ravel(),
            np.full(z.size, s),
            np.full(z.size, t),
            self.dim_sampling,
            self.threshold_sampling,
            self.dim_assignment,
            self.threshold_assignment,
            mc_draws,
            seed,
        ).reshape(z.shape)
        return float(values) if values.ndim == 0 else values


def _check_draws(mc_draws: int, strict: bool) -> None:
    if mc_draws < MIN_MC_DRAWS:
        message = f"{mc_draws} Monte Carlo draws is below the {MIN_MC_DRAWS} needed for +-0.01 quantile accuracy"
        if strict:
            raise DomainError(message)
        warnings.warn(message, PrecisionWarning, stacklevel=3)


def nu_quantile(
    xi: float,
    law: AsymptoticLaw,
    mc_draws: int = DEFAULT_MC_DRAWS,
    seed: int = DEFAULT_MC_SEED,
    strict: bool = False,
) -> float:
    """Quantile ``nu_xi(R_S^2, R_T^2)`` of the standardized law (``V`` is ignored).

    Deterministic given ``(mc_draws, seed)``.  With both constrained shares
    zero this is exactly the standard normal quantile.  Otherwise the law is
    at least as peaked as N(0, 1) (each constrained part is symmetric,
    unimodal and more peaked than a Gaussian, and peakedness survives
    convolution), so the Monte Carlo value is capped at the normal quantile
    and noise never widens an interval past the Gaussian one.
    """
    if not 0 < xi < 1:
        raise DomainError("quantile level must lie in (0, 1)")
    _check_draws(mc_draws, strict)
    gaussian = float(ndtri(xi))
    if law.shares[0] == 1.0:
        return gaussian
    value = float(np.quantile(law._standard_draws(mc_draws, seed), xi))
    return min(value, gaussian) if xi >= 0.5 else max(value, gaussian)


def standardized_cdf(
    z,
    r2_sampling,
    r2_assignment,
    dim_sampling: int,
    threshold_sampling: float,
    dim_assignment: int,
    threshold_assignment: float,
    mc_draws: int = CDF_DRAWS,
    seed: int = DEFAULT_MC_SEED,
) -> np.ndarray:
    """CDF of the standardized law for vectors of points and R^2 pairs.

    Conditional on the constrained components the law is Gaussian, so the CDF
    is the average of ``Phi((z - R_S L_J - R_T L_K) / sqrt(1 - R_S^2 - R_T^2))``
    over cached draws of ``(L_J, L_K)`` and their negations.  Rows with no Gaussian share fall
    back to the empirical CDF of the constrained part.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    s = np.broadcast_to(np.asarray(r2_sampling, dtype=float), z.shape).copy()
    t = np.broadcast_to(np.asarray(r2_assignment, dtype=float), z.shape).copy()
    if dim_sampling == 0 or math.isinf(threshold_sampling):
        s[:] = 0.0
    if dim_assignment == 0 or math.isinf(threshold_assignment):
        t[:] = 0.0
    g = np.maximum(1.0 - s - t, 0.0)
    if not (s.any() or t.any()):
        return ndtr(z)
    shift = np.zeros((z.size, mc_draws))
    if s.any():
        shift += np.sqrt(s)[:, None] * _component_draws(dim_sampling, threshold_sampling, mc_draws, seed, 1)
    if t.any():
        shift += np.sqrt(t)[:, None] * _component_draws(dim_assignment, threshold_assignment, mc_draws, seed, 2)
    # The law is symmetric: antithetic pairs make the estimate exactly so.
    shift = np.concatenate([shift, -shift], axis=1)
    out = np.empty(z.size)
    smooth = g > 1e-12
    if smooth.any():
        scaled = (z[smooth, None] - shift[smooth]) / np.sqrt(g[smooth])[:, None]
        out[smooth] = ndtr(scaled).mean(axis=1)
    if (~smooth).any():
        out[~smooth] = (shift[~smooth] <= z[~smooth, None]).mean(axis=1)
    return out


def priav(r2_sampling: float, r2_assignment: float, v_sampling: float, v_assignment: float) -> float:
    """Percentage reduction in asymptotic variance relative to the CRSE."""
    for value in (r2_sampling, r2_assignment, v_sampling, v_assignment):
        if not 0 <= value <= 1:
            raise DomainError("PRIAV inputs must lie in [0, 1]")
    return (1 - v_sampling) * r2_sampling + (1 - v_assignment) * r2_assignment


class QuantileCache:
    """Memoizes ``nu`` on a grid of R^2 buckets.

    Each R^2 is rounded down to a multiple of ``width`` before the quantile is
    computed.  The quantile is non-increasing in both shares, so rounding
    down never shortens an interval.
    """

    def __init__(self, width: float = 0.002, mc_draws: int = DEFAULT_MC_DRAWS, seed: int = DEFAULT_MC_SEED):
        if not width > 0:
            raise DomainError("bucket width must be positive")
        self.width = width
        self.mc_draws = mc_draws
        self.seed = seed
        self._values: dict = {}

    def __len__(self) -> int:
        return len(self._values)

    def nu(self, xi: float, r2_sampling: float, r2_assignment: float, criteria: BalanceCriteria) -> float:
        law = AsymptoticLaw.from_criteria(1.0, r2_sampling, r2_assignment, criteria)
        _, s, t = law.shares
        bucket_s = math.floor(s / self.width + 1e-9)
        bucket_t = math.floor(t / self.width + 1e-9)
        key = (xi, bucket_s, bucket_t, criteria)
        if key not in self._values:
            rounded = AsymptoticLaw.from_criteria(1.0, bucket_s * self.width, bucket_t * self.width, criteria)
            self._values[key] = nu_quantile(xi, rounded, self.mc_draws, self.seed)
        return self._values[key]


def confidence_interval(
    estimate: float,
    components,
    criteria: BalanceCriteria,
    alpha: float,
    n: int,
    mc_draws: int = DEFAULT_MC_DRAWS,
    seed: int = DEFAULT_MC_SEED,
    cache: QuantileCache | None = None,
    strict: bool = False,
) -> tuple[float, float]:
    """``estimate -+ sqrt(V_hat / n) * nu_{1 - alpha/2}(R_S^2_hat, R_T^2_hat)``.

    ``components`` is a :class:`~resem.estimation.ComponentEstimates`.  The
    cache is ignored in strict mode.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not components.variance > 0:
        raise DegenerateEstimateError("estimated variance is not positive")
    xi = 1 - alpha / 2
    if cache is not None and not strict:
        nu = cache.nu(xi, components.r2_sampling, components.r2_assignment, criteria)
    else:
        law = AsymptoticLaw.from_criteria(1.0, components.r2_sampling, components.r2_assignment, criteria)
        nu = nu_quantile(xi, law, mc_draws, seed, strict)
    half = math.sqrt(components.variance / n) * nu
    return estimate - half, estimate + half
