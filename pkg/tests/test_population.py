import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resem import DegeneratePopulationError, DesignFractions, DomainError, FinitePopulation, SingularDesignError
from resem.population import (
    adjusted_population,
    fp_moments,
    projection_coefficients,
    projection_variance,
    theoretical_components,
)


def _random_population(seed, N=40, J=2, K=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(N, K))
    W = X[:, :J]
    y0 = X @ rng.normal(size=K) + rng.normal(size=N)
    y1 = y0 + X @ rng.normal(size=K) + rng.normal(size=N)
    return FinitePopulation(y1, y0, W, X, W, X)


class TestFinitePopulation:
    def test_rejects_nan(self):
        with pytest.raises(DomainError, match="NaN"):
            FinitePopulation([1.0, np.nan], [0.0, 0.0])

    def test_rejects_single_unit(self):
        with pytest.raises(DegeneratePopulationError):
            FinitePopulation([1.0], [0.0])

    def test_rejects_row_mismatch(self):
        with pytest.raises(DomainError):
            FinitePopulation([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], sampling_covariates=[[1.0], [2.0]])

    def test_checks_declared_e_columns(self):
        C = np.arange(12.0).reshape(4, 3)
        FinitePopulation(np.ones(4), np.zeros(4), population_covariates=C[:, [0, 2]], sample_covariates=C,
                         e_columns_in_c=(0, 2))
        with pytest.raises(DomainError, match="declared columns"):
            FinitePopulation(np.ones(4), np.zeros(4), population_covariates=C[:, [0, 1]], sample_covariates=C,
                             e_columns_in_c=(0, 2))

    def test_arrays_are_read_only(self):
        pop = FinitePopulation([1.0, 2.0], [0.0, 1.0])
        with pytest.raises(ValueError):
            pop.y1[0] = 5.0


class TestMoments:
    def test_constant_outcomes_have_zero_variances(self):
        m = fp_moments(FinitePopulation(np.full(5, 3.0), np.full(5, 3.0)))
        assert m.var_y1 == m.var_y0 == m.var_tau == 0.0

    def test_hand_computed_covariate_moments(self):
        w = np.array([1.0, 2.0, 3.0, 4.0])
        m = fp_moments(FinitePopulation(w, w, sampling_covariates=w))
        assert m.sampling.mean[0] == pytest.approx(2.5)
        assert m.sampling.covariance[0, 0] == pytest.approx(5 / 3, rel=1e-14)

    def test_additive_effect(self):
        y0 = np.array([0.3, -1.0, 2.0, 5.0])
        m = fp_moments(FinitePopulation(y0 + 1, y0))
        assert m.var_tau == pytest.approx(0.0, abs=1e-15)
        assert m.mean_tau == pytest.approx(1.0)

    def test_permutation_invariance(self):
        pop = _random_population(3)
        order = np.random.default_rng(0).permutation(pop.size)
        shuffled = FinitePopulation(
            pop.y1[order], pop.y0[order], pop.sampling_covariates[order], pop.assignment_covariates[order]
        )
        a, b = fp_moments(pop), fp_moments(shuffled)
        assert a.var_tau == pytest.approx(b.var_tau, rel=1e-12)
        assert a.assignment.projection_y1 == pytest.approx(b.assignment.projection_y1, rel=1e-10)


class TestProjectionVariance:
    def test_uncorrelated_outcome(self):
        x = np.array([1.0, -1.0, 1.0, -1.0])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        assert projection_variance(y, x[:, None]) == pytest.approx(0.0, abs=1e-15)

    def test_perfect_fit(self):
        X = np.random.default_rng(1).normal(size=(30, 3))
        y = X @ [1.0, -2.0, 0.5] + 4.0
        assert projection_variance(y, X) == pytest.approx(np.var(y, ddof=1), rel=1e-10)

    def test_hand_value(self):
        v = np.array([1.0, 2.0, 3.0, 4.0])
        assert projection_variance(v, v[:, None]) == pytest.approx(5 / 3, rel=1e-14)

    def test_singular_block_is_named(self):
        x = np.random.default_rng(0).normal(size=10)
        with pytest.raises(SingularDesignError) as info:
            projection_variance(x, np.c_[x, 2 * x], block="assignment_covariates")
        assert info.value.block == "assignment_covariates"

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), shift=st.floats(-50, 50))
    def test_affine_invariance(self, seed, shift):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(25, 3))
        y = X @ rng.normal(size=3) + rng.normal(size=25)
        A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        base = projection_variance(y, X)
        moved = projection_variance(y, X @ A.T + shift)
        assert moved == pytest.approx(base, rel=1e-8, abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(y=arrays(float, 12, elements=st.floats(-100, 100)), seed=st.integers(0, 1000))
    def test_bounded_by_total_variance(self, y, seed):
        X = np.random.default_rng(seed).normal(size=(12, 2))
        value = projection_variance(y, X)
        assert -1e-10 <= value <= np.var(y, ddof=1) * (1 + 1e-10) + 1e-10


class TestTheoreticalComponents:
    def test_constant_effects(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 2))
        y0 = X @ [1.0, 1.0] + rng.normal(size=50)
        pop = FinitePopulation(y0 + 2.0, y0, X[:, :1], X)
        parts = theoretical_components(fp_moments(pop), DesignFractions(50, 20, 10))
        m = fp_moments(pop)
        assert parts.r2_sampling == pytest.approx(0.0, abs=1e-12)
        assert parts.r2_assignment == pytest.approx(m.assignment.projection_y0 / m.var_y0, rel=1e-10)

    def test_full_population_has_no_sampling_share(self):
        pop = _random_population(5)
        parts = theoretical_components(fp_moments(pop), DesignFractions(pop.size, pop.size, 20))
        assert parts.r2_sampling == pytest.approx(0.0, abs=1e-15)

    def test_neyman_variance_when_everyone_is_sampled(self):
        pop = _random_population(6)
        m = fp_moments(pop)
        parts = theoretical_components(m, DesignFractions(pop.size, pop.size, 15))
        r1 = 15 / pop.size
        assert parts.variance == pytest.approx(m.var_y1 / r1 + m.var_y0 / (1 - r1) - m.var_tau, rel=1e-12)

    def test_orthogonal_outcomes(self):
        x = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
        y = np.array([1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
        pop = FinitePopulation(2 * y, y, x, x)
        parts = theoretical_components(fp_moments(pop), DesignFractions(8, 4, 2))
        assert parts.r2_sampling == pytest.approx(0.0, abs=1e-14)
        assert parts.r2_assignment == pytest.approx(0.0, abs=1e-14)

    def test_zero_variance_is_degenerate(self):
        pop = FinitePopulation(np.ones(6), np.ones(6))
        with pytest.raises(DegeneratePopulationError):
            theoretical_components(fp_moments(pop), DesignFractions(6, 4, 2))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(4, 40), share=st.floats(0.2, 0.8))
    def test_shares_are_a_partition(self, seed, n, share):
        pop = _random_population(seed)
        n1 = min(max(int(round(share * n)), 1), n - 1)
        parts = theoretical_components(fp_moments(pop), DesignFractions(pop.size, n, n1))
        assert parts.r2_sampling >= -1e-12 and parts.r2_assignment >= -1e-12
        assert parts.r2_sampling + parts.r2_assignment <= 1 + 1e-10

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_variance_decomposition_around_projection_coefficients(self, seed):
        rng = np.random.default_rng(seed)
        N = 60
        C = rng.normal(size=(N, 3))
        E = C[:, :2]
        y0 = C @ rng.normal(size=3) + rng.normal(size=N)
        y1 = y0 + C @ rng.normal(size=3) + rng.normal(size=N)
        pop = FinitePopulation(y1, y0, E, C, E, C, e_columns_in_c=(0, 1))
        fractions = DesignFractions(N, 20, 8)
        m = fp_moments(pop)
        base = theoretical_components(m, fractions)
        beta_t, gamma_t = projection_coefficients(m, fractions)
        beta = beta_t + rng.normal(size=3)
        gamma = gamma_t + rng.normal(size=2)
        adjusted = theoretical_components(fp_moments(adjusted_population(pop, beta, gamma, fractions)), fractions)
        d_beta, d_gamma = beta - beta_t, gamma - gamma_t
        expected = (
            base.variance * (1 - base.r2_population - base.r2_sample)
            + d_beta @ m.sample.covariance @ d_beta / (fractions.r1 * fractions.r0)
            + (1 - fractions.f) * d_gamma @ m.population.covariance @ d_gamma
        )
        assert adjusted.variance == pytest.approx(expected, rel=1e-9)
