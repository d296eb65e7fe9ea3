"""Point estimates and sample-analog variance components.

An :class:`Experiment` is what an analyst sees after the design ran: observed
outcomes and covariates of the sampled units, their assignment, the
population size, and the population mean of the covariates known for every
unit.  Everything here is a function of an experiment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._linalg import CONDITION_CAP, spd_inverse, spd_inverse_sqrt
from .design import Realization
from .errors import (
    DegenerateEstimateError,
    DomainError,
    FallbackWarning,
    SingularDesignError,
    SingularFitError,
)
from .population import FinitePopulation


def _rows(values, n: int, name: str) -> np.ndarray:
    if values is None:
        return np.empty((n, 0))
    block = np.array(values, dtype=float)
    if block.ndim == 1:
        block = block[:, None]
    if block.shape[0] != n:
        raise DomainError(f"{name} must have one row per sampled unit")
    if not np.all(np.isfinite(block)):
        raise DomainError(f"{name} contains NaN or infinite entries")
    return block


@dataclass(frozen=True, eq=False)
class Experiment:
    """Observed data of one survey experiment.

    Row ``i`` of every block refers to the ``i``-th sampled unit.
    ``population_covariate_mean`` is the mean of the population covariates
    over all ``population_size`` units; sampling and assignment covariates
    are only needed to estimate the design-based R^2 terms.
    """

    outcomes: np.ndarray
    treated: np.ndarray
    population_size: int
    sample_covariates: np.ndarray | None = None
    population_covariates: np.ndarray | None = None
    population_covariate_mean: np.ndarray | None = None
    sampling_covariates: np.ndarray | None = None
    assignment_covariates: np.ndarray | None = None

    def __post_init__(self):
        y = np.array(self.outcomes, dtype=float).ravel()
        t = np.asarray(self.treated).ravel()
        if t.dtype != bool:
            if not np.all(np.isin(t, (0, 1))):
                raise DomainError("treatment indicators must be 0 or 1")
            t = t.astype(bool)
        if y.size != t.size:
            raise DomainError("outcomes and treatment indicators differ in length")
        if not np.all(np.isfinite(y)):
            raise DomainError("observed outcomes contain NaN or infinite entries")
        n = y.size
        if not 0 < n <= self.population_size:
            raise DomainError("sample size must lie in (0, population_size]")
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treated", t.copy())
        for name in ("sample_covariates", "population_covariates", "sampling_covariates", "assignment_covariates"):
            object.__setattr__(self, name, _rows(getattr(self, name), n, name))
        dim_e = self.population_covariates.shape[1]
        mean = self.population_covariate_mean
        if mean is None:
            if dim_e:
                raise DomainError("population_covariate_mean is required with population covariates")
            mean = np.zeros(0)
        mean = np.array(mean, dtype=float).ravel()
        if mean.size != dim_e:
            raise DomainError("population_covariate_mean does not match population_covariates")
        object.__setattr__(self, "population_covariate_mean", mean)

    @property
    def n(self) -> int:
        return self.outcomes.size

    @property
    def n1(self) -> int:
        return int(self.treated.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def f(self) -> float:
        return self.n / self.population_size

    @property
    def r1(self) -> float:
        return self.n1 / self.n

    @property
    def r0(self) -> float:
        return self.n0 / self.n

    def with_outcomes(self, outcomes, treated=None) -> "Experiment":
        """Same covariates with new outcomes and, optionally, a new assignment."""
        return Experiment(
            outcomes,
            self.treated if treated is None else treated,
            self.population_size,
            self.sample_covariates,
            self.population_covariates,
            self.population_covariate_mean,
            self.sampling_covariates,
            self.assignment_covariates,
        )


def observe(pop: FinitePopulation, realization: Realization) -> Experiment:
    """What the analyst sees when ``realization`` is run on ``pop``."""
    if realization.N != pop.size:
        raise DomainError("realization and population differ in size")
    z = realization.sampled
    t = realization.treated
    y = np.where(t, pop.y1[z], pop.y0[z])
    E = pop.population_covariates
    return Experiment(
        outcomes=y,
        treated=t,
        population_size=pop.size,
        sample_covariates=pop.sample_covariates[z],
        population_covariates=E[z],
        population_covariate_mean=E.mean(axis=0),
        sampling_covariates=pop.sampling_covariates[z],
        assignment_covariates=pop.assignment_covariates[z],
    )


# ---------------------------------------------------------------------------
# point estimates


def _check_arms(treated: np.ndarray) -> None:
    if treated.all() or not treated.any():
        raise DomainError("both treatment arms need at least one unit")


def difference_in_means(treated, outcomes) -> float:
    """Mean observed outcome among treated minus mean among control units."""
    treated = np.asarray(treated, dtype=bool)
    outcomes = np.asarray(outcomes, dtype=float)
    if treated.shape != outcomes.shape:
        raise DomainError("outcomes and treatment indicators differ in length")
    _check_arms(treated)
    return float(outcomes[treated].mean() - outcomes[~treated].mean())


@dataclass(frozen=True)
class AdjustmentCoefficients:
    """Coefficients on the sample covariates (``beta``) and population covariates (``gamma``).

    ``provenance`` is ``"fixed"``, ``"estimated"``, or ``"fallback"`` when an
    estimate was replaced by zeros.
    """

    beta: np.ndarray
    gamma: np.ndarray
    provenance: str = "fixed"

    @classmethod
    def zeros(cls, exp: Experiment, provenance: str = "fixed") -> "AdjustmentCoefficients":
        return cls(np.zeros(exp.sample_covariates.shape[1]), np.zeros(exp.population_covariates.shape[1]), provenance)


def _coefficients(exp: Experiment, beta, gamma) -> tuple[np.ndarray, np.ndarray]:
    k_c = exp.sample_covariates.shape[1]
    j_e = exp.population_covariates.shape[1]
    beta = np.zeros(k_c) if beta is None else np.asarray(beta, dtype=float).ravel()
    gamma = np.zeros(j_e) if gamma is None else np.asarray(gamma, dtype=float).ravel()
    if beta.size != k_c:
        raise DomainError(f"beta has length {beta.size}, sample covariates have {k_c} columns")
    if gamma.size != j_e:
        raise DomainError(f"gamma has length {gamma.size}, population covariates have {j_e} columns")
    return beta, gamma


def adjusted_estimator(exp: Experiment, beta=None, gamma=None) -> float:
    """``tau_hat - beta' tau_hat_C - gamma' delta_hat_E``.

    ``tau_hat_C`` is the treated-minus-control mean of the sample covariates
    and ``delta_hat_E`` the sampled-minus-population mean of the population
    covariates.
    """
    beta, gamma = _coefficients(exp, beta, gamma)
    t = exp.treated
    _check_arms(t)
    estimate = difference_in_means(t, exp.outcomes)
    if beta.size:
        C = exp.sample_covariates
        estimate -= float(beta @ (C[t].mean(axis=0) - C[~t].mean(axis=0)))
    if gamma.size:
        gap = exp.population_covariates.mean(axis=0) - exp.population_covariate_mean
        estimate -= float(gamma @ gap)
    return estimate


def adjusted_outcomes(exp: Experiment, beta=None, gamma=None) -> np.ndarray:
    """Observed outcomes minus the adjustment each unit carries in its arm.

    Treated units subtract ``beta'C + r1 gamma'(E - E_bar)``; control units
    subtract ``beta'C - r0 gamma'(E - E_bar)``.  Their difference-in-means is
    :func:`adjusted_estimator`.
    """
    beta, gamma = _coefficients(exp, beta, gamma)
    y = exp.outcomes - exp.sample_covariates @ beta
    if gamma.size:
        shift = (exp.population_covariates - exp.population_covariate_mean) @ gamma
        y = y - np.where(exp.treated, exp.r1, -exp.r0) * shift
    return y


def _arm_slopes(y: np.ndarray, block: np.ndarray, arm: int, name: str) -> np.ndarray:
    centered = block - block.mean(axis=0)
    cov = centered.T @ centered / (block.shape[0] - 1)
    cross = centered.T @ (y - y.mean()) / (block.shape[0] - 1)
    try:
        return spd_inverse(cov, name, CONDITION_CAP) @ cross
    except SingularDesignError as exc:
        raise SingularFitError(name, arm, "per-arm covariance is singular") from exc


def fit_adjustment_coefficients(exp: Experiment) -> AdjustmentCoefficients:
    """Least-squares coefficients fitted separately in each arm.

    ``beta_hat = r0 * beta_1 + r1 * beta_0`` from regressions of the observed
    outcome on the sample covariates, and ``gamma_hat = gamma_1 - gamma_0``
    from regressions on the population covariates.  If an arm has fewer than
    ``dim + 2`` units the fit is skipped and zeros are returned with a
    :class:`FallbackWarning`.
    """
    t = exp.treated
    _check_arms(t)
    C, E, y = exp.sample_covariates, exp.population_covariates, exp.outcomes
    needed = max(C.shape[1], E.shape[1]) + 2
    if min(exp.n1, exp.n0) < needed:
        warnings.warn(
            f"arm sizes ({exp.n1}, {exp.n0}) are below covariate dimension + 2 = {needed}; "
            "using zero adjustment coefficients",
            FallbackWarning,
            stacklevel=2,
        )
        return AdjustmentCoefficients.zeros(exp, "fallback")
    beta = np.zeros(C.shape[1])
    gamma = np.zeros(E.shape[1])
    if C.shape[1]:
        b1 = _arm_slopes(y[t], C[t], 1, "sample_covariates")
        b0 = _arm_slopes(y[~t], C[~t], 0, "sample_covariates")
        beta = exp.r0 * b1 + exp.r1 * b0
    if E.shape[1]:
        g1 = _arm_slopes(y[t], E[t], 1, "population_covariates")
        g0 = _arm_slopes(y[~t], E[~t], 0, "population_covariates")
        gamma = g1 - g0
    return AdjustmentCoefficients(beta, gamma, "estimated")


# ---------------------------------------------------------------------------
# variance and R^2 components


@dataclass(frozen=True)
class KnowledgeFlags:
    """Which design information the analyst may use.

    Unknown stages get an R^2 estimate of zero, which is conservative.
    """

    sampling: bool = True
    assignment: bool = True


@dataclass(frozen=True)
class ArmProjection:
    """``s^2_{1|B}``, ``s^2_{0|B}`` and ``s^2_{tau|B}`` for one covariate block B."""

    treated: float
    control: float
    effect: float


def _arm_moments(y: np.ndarray, block: np.ndarray, arm: int, name: str) -> tuple[float, np.ndarray]:
    """Projection variance and whitened covariance ``s_{t,B} s_B(t)^{-1}`` within one arm."""
    size = y.size
    if size < block.shape[1] + 1:
        raise SingularDesignError(name, f"arm {arm} has {size} units for {block.shape[1]} covariates")
    centered = block - block.mean(axis=0)
    cov = centered.T @ centered / (size - 1)
    cross = centered.T @ (y - y.mean()) / (size - 1)
    whitened = cross @ spd_inverse_sqrt(cov, name, CONDITION_CAP)
    return float(whitened @ whitened), whitened


def arm_projection(y: np.ndarray, treated: np.ndarray, block: np.ndarray, name: str) -> ArmProjection:
    if block.shape[1] == 0:
        return ArmProjection(0.0, 0.0, 0.0)
    s1, u1 = _arm_moments(y[treated], block[treated], 1, name)
    s0, u0 = _arm_moments(y[~treated], block[~treated], 0, name)
    gap = u1 - u0
    return ArmProjection(s1, s0, float(gap @ gap))


@dataclass(frozen=True)
class ComponentEstimates:
    """Sample analogs of the variance and R^2 terms of the asymptotic law.

    ``variance`` estimates ``V(beta, gamma)``, the variance of
    ``sqrt(n) (estimate - tau)`` under the completely randomized design.
    ``r2_sampling_raw`` and ``r2_assignment_raw`` keep the unclamped values.
    """

    variance: float
    r2_sampling: float
    r2_assignment: float
    arm_variance_treated: float
    arm_variance_control: float
    sample_block: ArmProjection
    sampling_block: ArmProjection
    assignment_block: ArmProjection
    knowledge: KnowledgeFlags
    r2_sampling_raw: float
    r2_assignment_raw: float


def clamp_r2(r2_sampling: float, r2_assignment: float) -> tuple[float, float]:
    """Clip each share to [0, 1] and rescale both so their sum is at most 1."""
    a = min(max(r2_sampling, 0.0), 1.0)
    b = min(max(r2_assignment, 0.0), 1.0)
    total = a + b
    if total > 1.0:
        a, b = a / total, b / total
    return a, b


def clamp_r2_batch(r2_sampling: np.ndarray, r2_assignment: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise ``clamp_r2`` over arrays."""
    a = np.clip(r2_sampling, 0.0, 1.0)
    b = np.clip(r2_assignment, 0.0, 1.0)
    total = np.maximum(a + b, 1.0)
    return a / total, b / total


def estimate_components(
    exp: Experiment,
    beta=None,
    gamma=None,
    knowledge: KnowledgeFlags = KnowledgeFlags(),
) -> ComponentEstimates:
    """Estimate ``V``, ``R_S^2`` and ``R_T^2`` for the adjusted estimator with ``(beta, gamma)``.

    Per-arm covariance square roots are symmetric; an unknown stage
    contributes an R^2 of zero.
    """
    t = exp.treated
    if min(exp.n1, exp.n0) < 2:
        raise DomainError("each arm needs at least two units to estimate variances")
    y = adjusted_outcomes(exp, beta, gamma)
    s1 = float(np.var(y[t], ddof=1))
    s0 = float(np.var(y[~t], ddof=1))
    sample_block = arm_projection(y, t, exp.sample_covariates, "sample_covariates")
    variance = s1 / exp.r1 + s0 / exp.r0 - exp.f * sample_block.effect
    if not variance > 0:
        raise DegenerateEstimateError(f"estimated variance is not positive ({variance:.3g})")
    none = ArmProjection(0.0, 0.0, 0.0)
    sampling_block = assignment_block = none
    r2_s = r2_t = 0.0
    if knowledge.sampling:
        sampling_block = arm_projection(y, t, exp.sampling_covariates, "sampling_covariates")
        r2_s = (1 - exp.f) * sampling_block.effect / variance
    if knowledge.assignment:
        assignment_block = arm_projection(y, t, exp.assignment_covariates, "assignment_covariates")
        r2_t = (
            assignment_block.treated / exp.r1 + assignment_block.control / exp.r0 - assignment_block.effect
        ) / variance
    clamped_s, clamped_t = clamp_r2(r2_s, r2_t)
    return ComponentEstimates(
        variance=float(variance),
        r2_sampling=clamped_s,
        r2_assignment=clamped_t,
        arm_variance_treated=s1,
        arm_variance_control=s0,
        sample_block=sample_block,
        sampling_block=sampling_block,
        assignment_block=assignment_block,
        knowledge=knowledge,
        r2_sampling_raw=float(r2_s),
        r2_assignment_raw=float(r2_t),
    )
