"""Mahalanobis balance statistics and threshold selection.

``M_S`` compares the sampled mean of the sampling covariates with their
population mean; ``M_T`` compares treated and control means of the assignment
covariates within the sample.  Both are scaled by their exact covariance under
complete randomization, so each is approximately chi-square with degrees of
freedom equal to the covariate dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import CONDITION_CAP, spd_inverse
from .chisquare import chi2_cdf, chi2_quantile
from .errors import DomainError


def threshold_from_acceptance(dim: int, p: float) -> float:
    """Threshold ``a`` with asymptotic acceptance probability ``P(chi2_dim <= a) = p``."""
    if not 0 < p <= 1:
        raise DomainError(f"acceptance probability must lie in (0, 1], got {p}")
    if p == 1 or dim == 0:
        return math.inf
    return chi2_quantile(p, dim)


def acceptance_from_threshold(dim: int, a: float) -> float:
    if not a > 0:
        raise DomainError(f"threshold must be positive, got {a}")
    if math.isinf(a) or dim == 0:
        return 1.0
    return chi2_cdf(a, dim)


@dataclass(frozen=True)
class BalanceCriteria:
    """Thresholds for both stages.

    ``dim_sampling`` and ``dim_assignment`` are the covariate dimensions
    (J and K).  Build it with :meth:`from_acceptance` to set thresholds from
    asymptotic acceptance probabilities, or :meth:`from_thresholds` for raw
    thresholds.  An infinite threshold disables a stage.
    """

    dim_sampling: int
    dim_assignment: int
    threshold_sampling: float = math.inf
    threshold_assignment: float = math.inf

    def __post_init__(self):
        for name in ("threshold_sampling", "threshold_assignment"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")

    @classmethod
    def from_acceptance(cls, dim_sampling: int, dim_assignment: int, p_sampling: float = 1.0, p_assignment: float = 1.0):
        return cls(
            dim_sampling,
            dim_assignment,
            threshold_from_acceptance(dim_sampling, p_sampling),
            threshold_from_acceptance(dim_assignment, p_assignment),
        )

    @classmethod
    def from_thresholds(cls, dim_sampling: int, dim_assignment: int, a_sampling: float, a_assignment: float):
        return cls(dim_sampling, dim_assignment, float(a_sampling), float(a_assignment))

    @property
    def p_sampling(self) -> float:
        return acceptance_from_threshold(self.dim_sampling, self.threshold_sampling)

    @property
    def p_assignment(self) -> float:
        return acceptance_from_threshold(self.dim_assignment, self.threshold_assignment)


def mahalanobis_sampling(
    covariates,
    sampled,
    covariance=None,
    cond_cap: float = CONDITION_CAP,
) -> float:
    """``M_S`` for a sampling indicator over the whole population.

    ``covariance`` defaults to the finite-population covariance of
    ``covariates``; pass it when evaluating many samples of one population.
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    sampled = np.asarray(sampled, dtype=bool)
    N, n = sampled.size, int(sampled.sum())
    if covariates.shape[0] != N:
        raise DomainError("sampling indicator length does not match the covariates")
    if not 0 < n < N:
        raise DomainError("M_S is undefined unless 0 < n < N; use assignment-only rerandomization when n = N")
    if covariates.shape[1] == 0:
        return 0.0
    if covariance is None:
        covariance = np.cov(covariates, rowvar=False, ddof=1).reshape(covariates.shape[1], -1)
    gap = covariates[sampled].mean(axis=0) - covariates.mean(axis=0)
    scale = 1.0 / n - 1.0 / N
    inverse = spd_inverse(covariance, "sampling_covariates", cond_cap)
    return max(float(gap @ inverse @ gap) / scale, 0.0)


def mahalanobis_assignment(
    covariates,
    treated,
    covariance=None,
    cond_cap: float = CONDITION_CAP,
) -> float:
    """``M_T`` for an assignment of the sampled units.

    ``covariates`` are rows for the sampled units only.  By default the metric
    uses their sample covariance; pass ``covariance`` to use another matrix,
    such as the population covariance.
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    treated = np.asarray(treated, dtype=bool)
    n, n1 = treated.size, int(treated.sum())
    n0 = n - n1
    if covariates.shape[0] != n:
        raise DomainError("assignment length does not match the sampled covariates")
    if n1 == 0 or n0 == 0:
        raise DomainError("both arms need at least one unit")
    if covariates.shape[1] == 0:
        return 0.0
    if covariance is None:
        covariance = np.cov(covariates, rowvar=False, ddof=1).reshape(covariates.shape[1], -1)
    gap = covariates[treated].mean(axis=0) - covariates[~treated].mean(axis=0)
    inverse = spd_inverse(covariance, "assignment_covariates", cond_cap)
    return max(float(gap @ inverse @ gap) * n1 * n0 / n, 0.0)
