"""Finite populations and their fixed moments.

All randomness in a survey experiment comes from who is sampled and who is
treated, so everything here is a deterministic summary of a fixed table of
potential outcomes and covariates.  Covariate blocks follow the usual roles:

* ``sampling_covariates`` (W) are balanced between the sample and the population,
* ``assignment_covariates`` (X) are balanced between treatment arms,
* ``population_covariates`` (E) are known for every unit and used in analysis,
* ``sample_covariates`` (C) are known for sampled units and used in analysis.

Variances and covariances use divisor ``N - 1`` throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._linalg import CONDITION_CAP, clamp_projection, spd_inverse
from .errors import DegeneratePopulationError, DomainError

BLOCKS = ("sampling_covariates", "assignment_covariates", "population_covariates", "sample_covariates")


def _as_block(values, n_rows: int, name: str) -> np.ndarray:
    if values is None:
        return np.empty((n_rows, 0))
    block = np.array(values, dtype=float)
    if block.ndim == 1:
        block = block[:, None]
    if block.ndim != 2 or block.shape[0] != n_rows:
        raise DomainError(f"{name} must have {n_rows} rows, got shape {block.shape}")
    return block


@dataclass(frozen=True, eq=False)
class FinitePopulation:
    """Potential outcomes and covariate blocks for ``N`` units.

    ``e_columns_in_c`` optionally declares that the population covariates are
    the listed columns of the sample covariates; the declaration is checked.
    """

    y1: np.ndarray
    y0: np.ndarray
    sampling_covariates: np.ndarray | None = None
    assignment_covariates: np.ndarray | None = None
    population_covariates: np.ndarray | None = None
    sample_covariates: np.ndarray | None = None
    strata: np.ndarray | None = None
    clusters: np.ndarray | None = None
    e_columns_in_c: tuple[int, ...] | None = None

    def __post_init__(self):
        y1 = np.array(self.y1, dtype=float).ravel()
        y0 = np.array(self.y0, dtype=float).ravel()
        if y1.shape != y0.shape:
            raise DomainError("y1 and y0 must have the same length")
        n_units = y1.size
        if n_units < 2:
            raise DegeneratePopulationError(f"a population needs at least 2 units, got {n_units}")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        for name in BLOCKS:
            object.__setattr__(self, name, _as_block(getattr(self, name), n_units, name))
        for name in ("strata", "clusters"):
            labels = getattr(self, name)
            if labels is not None:
                labels = np.asarray(labels).ravel()
                if labels.size != n_units:
                    raise DomainError(f"{name} must have one label per unit")
                object.__setattr__(self, name, labels)
        for name in ("y1", "y0", *BLOCKS):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"{name} contains NaN or infinite entries")
        if self.e_columns_in_c is not None:
            columns = tuple(int(j) for j in self.e_columns_in_c)
            object.__setattr__(self, "e_columns_in_c", columns)
            if len(columns) != self.population_covariates.shape[1] or not np.array_equal(
                self.sample_covariates[:, list(columns)], self.population_covariates
            ):
                raise DomainError("declared columns of sample_covariates do not equal population_covariates")
        for name in ("y1", "y0", *BLOCKS):
            getattr(self, name).setflags(write=False)

    @property
    def size(self) -> int:
        return self.y1.size

    @property
    def effects(self) -> np.ndarray:
        """Individual treatment effects ``y1 - y0``."""
        return self.y1 - self.y0

    @property
    def average_effect(self) -> float:
        return float(np.mean(self.effects))

    @cached_property
    def sampling_covariance(self) -> np.ndarray:
        """Finite-population covariance of the sampling covariates (fixed, so cached)."""
        return _covariance(self.sampling_covariates)

    def replace(self, **changes) -> "FinitePopulation":
        fields = {
            name: getattr(self, name)
            for name in ("y1", "y0", *BLOCKS, "strata", "clusters", "e_columns_in_c")
        }
        fields.update(changes)
        return FinitePopulation(**fields)


@dataclass(frozen=True)
class DesignFractions:
    """Sample and arm sizes; exposes ``f = n/N``, ``r1 = n1/n`` and ``r0 = n0/n``."""

    N: int
    n: int
    n1: int

    def __post_init__(self):
        if not 0 < self.n <= self.N:
            raise DomainError(f"need 0 < n <= N, got n={self.n}, N={self.N}")
        if not 0 < self.n1 < self.n:
            raise DomainError(f"need 0 < n1 < n, got n1={self.n1}, n={self.n}")

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def f(self) -> float:
        return self.n / self.N

    @property
    def r1(self) -> float:
        return self.n1 / self.n

    @property
    def r0(self) -> float:
        return self.n0 / self.n


def _covariance(block: np.ndarray) -> np.ndarray:
    if block.shape[1] == 0:
        return np.zeros((0, 0))
    centered = block - block.mean(axis=0)
    return centered.T @ centered / (block.shape[0] - 1)


def _cross_covariance(outcome: np.ndarray, block: np.ndarray) -> np.ndarray:
    centered = block - block.mean(axis=0)
    return centered.T @ (outcome - outcome.mean()) / (block.shape[0] - 1)


def projection_variance(
    outcome, covariates, block: str = "covariates", cond_cap: float = CONDITION_CAP
) -> float:
    """Variance of the linear projection of ``outcome`` on ``covariates``.

    Returns ``S_{y,X} (S_X^2)^{-1} S_{X,y}``.  An empty covariate block gives 0.
    """
    outcome = np.asarray(outcome, dtype=float).ravel()
    covariates = _as_block(covariates, outcome.size, block)
    if outcome.size < 2:
        raise DegeneratePopulationError("projection needs at least 2 units")
    if covariates.shape[1] == 0:
        return 0.0
    cross = _cross_covariance(outcome, covariates)
    value = cross @ spd_inverse(_covariance(covariates), block, cond_cap) @ cross
    return clamp_projection(value, scale=float(np.var(outcome, ddof=1)))


@dataclass(frozen=True)
class BlockMoments:
    """Moments of one covariate block and its relation to the outcomes.

    ``projection_*`` are projection variances such as ``S^2_{1|X}``;
    ``coefficients_*`` are the population least-squares slopes.
    """

    mean: np.ndarray
    covariance: np.ndarray
    cross_y1: np.ndarray
    cross_y0: np.ndarray
    cross_tau: np.ndarray
    coefficients_y1: np.ndarray
    coefficients_y0: np.ndarray
    projection_y1: float
    projection_y0: float
    projection_tau: float

    @property
    def dim(self) -> int:
        return self.mean.size


def _block_moments(block: np.ndarray, y1, y0, name: str, cond_cap: float) -> BlockMoments:
    dim = block.shape[1]
    if dim == 0:
        empty = np.zeros(0)
        return BlockMoments(empty, np.zeros((0, 0)), empty, empty, empty, empty, empty, 0.0, 0.0, 0.0)
    covariance = _covariance(block)
    inverse = spd_inverse(covariance, name, cond_cap)
    cross_y1 = _cross_covariance(y1, block)
    cross_y0 = _cross_covariance(y0, block)
    cross_tau = cross_y1 - cross_y0
    coef_y1 = inverse @ cross_y1
    coef_y0 = inverse @ cross_y0
    coef_tau = coef_y1 - coef_y0
    return BlockMoments(
        mean=block.mean(axis=0),
        covariance=covariance,
        cross_y1=cross_y1,
        cross_y0=cross_y0,
        cross_tau=cross_tau,
        coefficients_y1=coef_y1,
        coefficients_y0=coef_y0,
        projection_y1=clamp_projection(cross_y1 @ coef_y1, float(np.var(y1, ddof=1))),
        projection_y0=clamp_projection(cross_y0 @ coef_y0, float(np.var(y0, ddof=1))),
        projection_tau=clamp_projection(cross_tau @ coef_tau, float(np.var(y1 - y0, ddof=1))),
    )


@dataclass(frozen=True)
class PopulationMoments:
    N: int
    mean_y1: float
    mean_y0: float
    mean_tau: float
    var_y1: float
    var_y0: float
    var_tau: float
    sampling: BlockMoments
    assignment: BlockMoments
    population: BlockMoments
    sample: BlockMoments

    @property
    def residual_tau_given_sample(self) -> float:
        """``S^2_{tau \\ C}``: variance of the effect not explained by C."""
        return max(self.var_tau - self.sample.projection_tau, 0.0)

    @property
    def residual_y1_given_sample(self) -> float:
        return max(self.var_y1 - self.sample.projection_y1, 0.0)

    @property
    def residual_y0_given_sample(self) -> float:
        return max(self.var_y0 - self.sample.projection_y0, 0.0)


def fp_moments(pop: FinitePopulation, cond_cap: float = CONDITION_CAP) -> PopulationMoments:
    """Every fixed finite-population moment used downstream."""
    if pop.size < 2:
        raise DegeneratePopulationError("a population needs at least 2 units")
    y1, y0 = pop.y1, pop.y0
    tau = y1 - y0
    blocks = {
        key: _block_moments(getattr(pop, name), y1, y0, name, cond_cap)
        for key, name in zip(("sampling", "assignment", "population", "sample"), BLOCKS)
    }
    return PopulationMoments(
        N=pop.size,
        mean_y1=float(y1.mean()),
        mean_y0=float(y0.mean()),
        mean_tau=float(tau.mean()),
        var_y1=float(np.var(y1, ddof=1)),
        var_y0=float(np.var(y0, ddof=1)),
        var_tau=float(np.var(tau, ddof=1)),
        **blocks,
    )


@dataclass(frozen=True)
class TheoreticalComponents:
    """Variance of ``sqrt(n)(tau_hat - tau)`` under the CRSE and its R^2 shares.

    ``r2_sampling``/``r2_assignment`` measure how much of that variance the
    sampling and assignment covariates explain; ``r2_population`` and
    ``r2_sample`` are the analogous shares for the analysis covariates.
    """

    variance: float
    r2_sampling: float
    r2_assignment: float
    r2_population: float
    r2_sample: float


def theoretical_components(moments: PopulationMoments, fractions: DesignFractions) -> TheoreticalComponents:
    f, r1, r0 = fractions.f, fractions.r1, fractions.r0
    variance = moments.var_y1 / r1 + moments.var_y0 / r0 - f * moments.var_tau
    scale = moments.var_y1 / r1 + moments.var_y0 / r0
    if not variance > 1e-14 * max(scale, 1e-300):
        raise DegeneratePopulationError(f"difference-in-means variance is not positive ({variance:.3g})")

    def stage_one(block: BlockMoments) -> float:
        return (1 - f) * block.projection_tau / variance

    def stage_two(block: BlockMoments) -> float:
        value = block.projection_y1 / r1 + block.projection_y0 / r0 - block.projection_tau
        return value / variance

    return TheoreticalComponents(
        variance=float(variance),
        r2_sampling=stage_one(moments.sampling),
        r2_assignment=stage_two(moments.assignment),
        r2_population=stage_one(moments.population),
        r2_sample=stage_two(moments.sample),
    )


def projection_coefficients(moments: PopulationMoments, fractions: DesignFractions) -> tuple[np.ndarray, np.ndarray]:
    """Population-optimal adjustment coefficients ``(beta_tilde, gamma_tilde)``.

    ``beta_tilde = r0 * beta_1 + r1 * beta_0`` combines the per-arm slopes on the
    sample covariates and ``gamma_tilde = gamma_1 - gamma_0`` the slopes on the
    population covariates.
    """
    beta = fractions.r0 * moments.sample.coefficients_y1 + fractions.r1 * moments.sample.coefficients_y0
    gamma = moments.population.coefficients_y1 - moments.population.coefficients_y0
    return beta, gamma


def adjusted_population(pop: FinitePopulation, beta, gamma, fractions: DesignFractions) -> FinitePopulation:
    """Population whose potential outcomes are the regression-adjusted ones.

    The difference-in-means of the adjusted outcomes equals the adjusted
    estimator with coefficients ``(beta, gamma)``, so theoretical components
    of the returned population describe that estimator.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    gamma = np.asarray(gamma, dtype=float).ravel()
    C, E = pop.sample_covariates, pop.population_covariates
    if beta.size != C.shape[1] or gamma.size != E.shape[1]:
        raise DomainError("coefficient dimensions do not match the analysis covariates")
    shift_c = (C - C.mean(axis=0)) @ beta
    shift_e = (E - E.mean(axis=0)) @ gamma
    return pop.replace(
        y1=pop.y1 - shift_c - fractions.r1 * shift_e,
        y0=pop.y0 - shift_c + fractions.r0 * shift_e,
    )
