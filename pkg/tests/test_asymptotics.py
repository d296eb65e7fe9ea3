import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from resem import (
    AsymptoticLaw,
    BalanceCriteria,
    DesignFractions,
    DomainError,
    PrecisionWarning,
    QuantileCache,
    confidence_interval,
    fp_moments,
    nu_quantile,
    priav,
    theoretical_components,
    truncated_variance_factor,
)
from resem.asymptotics import draw_constrained_gaussian, standardized_cdf
from resem.estimation import ComponentEstimates

A_S = -2 * math.log(0.99)  # chi-square(2) quantile at 0.01


def oracle_factor(k, a):
    return special.gammainc((k + 2) / 2, a / 2) / special.gammainc(k / 2, a / 2)


def law(r2_s, r2_t, p_s=0.01, p_t=0.01, variance=1.0):
    return AsymptoticLaw.from_criteria(variance, r2_s, r2_t, BalanceCriteria.from_acceptance(2, 4, p_s, p_t))


class TestVarianceFactor:
    def test_unconstrained(self):
        assert truncated_variance_factor(3, math.inf) == 1.0

    @pytest.mark.parametrize("k,a", [(1, 0.5), (2, A_S), (4, 1.0), (4, 5.0), (10, 3.0)])
    def test_matches_oracle(self, k, a):
        assert truncated_variance_factor(k, a) == pytest.approx(oracle_factor(k, a), rel=1e-11)

    def test_small_threshold_limit(self):
        assert truncated_variance_factor(2, A_S) == pytest.approx(A_S / 4, rel=0.01)

    def test_monotone(self):
        values = [truncated_variance_factor(4, a) for a in (1.0, 5.0, 20.0)]
        assert values[0] < values[1] < values[2] <= 1

    def test_bad_threshold(self):
        with pytest.raises(DomainError):
            truncated_variance_factor(2, 0.0)


class TestConstrainedGaussian:
    def test_unconstrained_is_standard_normal(self):
        draws = draw_constrained_gaussian(3, math.inf, np.random.default_rng(0), 100_000)
        assert stats.kstest(draws, "norm").pvalue > 0.01

    def test_one_dimension_is_truncated_normal(self):
        a = 1.7
        draws = draw_constrained_gaussian(1, a, np.random.default_rng(1), 100_000)
        r = math.sqrt(a)
        assert stats.kstest(draws, stats.truncnorm(-r, r).cdf).pvalue > 0.01

    def test_matches_naive_rejection(self):
        rng = np.random.default_rng(2)
        k, a = 4, 2.0
        raw = rng.standard_normal((400_000, k))
        naive = raw[np.sum(raw**2, axis=1) <= a, 0]
        draws = draw_constrained_gaussian(k, a, rng, naive.size)
        assert stats.ks_2samp(draws, naive).pvalue > 0.01

    @pytest.mark.parametrize("k,a", [(2, 0.0201), (4, 1.0)])
    def test_moments(self, k, a):
        draws = draw_constrained_gaussian(k, a, np.random.default_rng(3), 1_000_000)
        assert abs(draws.mean()) < 3 * draws.std() / 1000
        assert draws.var() == pytest.approx(oracle_factor(k, a), abs=0.01)


class TestQuantiles:
    def test_gaussian_case(self):
        assert nu_quantile(0.975, law(0, 0)) == pytest.approx(1.959964, abs=0.01)

    def test_median_is_zero(self):
        assert nu_quantile(0.5, law(0.3, 0.4)) == pytest.approx(0.0, abs=0.01)

    def test_balance_shortens_quantile(self):
        assert nu_quantile(0.975, law(0.3, 0.3)) < nu_quantile(0.975, law(0, 0))

    def test_precision_warning_and_strict_mode(self):
        with pytest.warns(PrecisionWarning):
            nu_quantile(0.9, law(0.1, 0.1), mc_draws=1000)
        with pytest.raises(DomainError):
            nu_quantile(0.9, law(0.1, 0.1), mc_draws=1000, strict=True)

    def test_seeded_determinism(self):
        assert nu_quantile(0.95, law(0.2, 0.2), seed=5) == nu_quantile(0.95, law(0.2, 0.2), seed=5)

    @pytest.mark.parametrize("xi", [0.5, 0.9, 0.975])
    def test_consistent_with_fresh_draws(self, xi):
        target = law(0.25, 0.35)
        draws = target.sample(1_000_000, np.random.default_rng(7))
        assert np.mean(draws <= nu_quantile(xi, target)) == pytest.approx(xi, abs=0.005)


class TestLaw:
    @pytest.mark.parametrize("shares", [(0.2, 0.3), (0.0, 0.6), (0.5, 0.0)])
    def test_variance_identity(self, shares):
        target = law(*shares, variance=2.5)
        draws = target.sample(1_000_000, np.random.default_rng(8))
        v_j, v_k = oracle_factor(2, A_S), oracle_factor(4, target.threshold_assignment)
        expected = 2.5 * (1 - (1 - v_j) * shares[0] - (1 - v_k) * shares[1])
        assert draws.var() == pytest.approx(expected, rel=0.01)
        assert target.law_variance() == pytest.approx(expected, rel=1e-10)
        assert abs(draws.mean()) < 3 * draws.std() / 1000

    def test_infinite_thresholds_merge_into_gaussian(self):
        target = law(0.3, 0.3, p_s=1.0, p_t=1.0)
        assert target.shares == (1.0, 0.0, 0.0)
        assert target.variance_factor() == 1.0

    def test_rejects_invalid_shares(self):
        with pytest.raises(DomainError):
            law(0.7, 0.6)

    def test_cdf_matches_draws(self):
        target = law(0.3, 0.3, variance=2.0)
        draws = target.sample(400_000, np.random.default_rng(9))
        x = np.array([-2.0, -0.5, 0.0, 0.7, 1.9])
        assert np.allclose(target.cdf(x), [np.mean(draws <= v) for v in x], atol=0.005)

    def test_standardized_cdf_is_symmetric(self):
        z = np.array([0.3, 1.0, 2.2])
        upper = standardized_cdf(z, 0.3, 0.2, 2, A_S, 4, 1.0)
        lower = standardized_cdf(-z, 0.3, 0.2, 2, A_S, 4, 1.0)
        assert np.allclose(upper + lower, 1.0, atol=1e-12)

    def test_limit_shape_at_moderate_sample_size(self, model_population, resem_draws_800):
        pop = model_population
        spec = resem_draws_800["spec"]
        parts = theoretical_components(fp_moments(pop), DesignFractions(pop.size, 800, 400))
        fitted = AsymptoticLaw.from_criteria(parts.variance, parts.r2_sampling, parts.r2_assignment, spec.criteria)
        scaled = math.sqrt(800) * (resem_draws_800["estimates"] - pop.average_effect)
        reference = fitted.sample(1_000_000, np.random.default_rng(10))
        assert stats.ks_2samp(scaled, reference).pvalue > 0.01


class TestPriav:
    def test_examples(self):
        assert priav(0, 0, 0.1, 0.1) == 0
        assert priav(0.3, 0.3, 1.0, 1.0) == 0
        assert priav(0.2, 0.4, 0.005, 0.01) == pytest.approx(0.199 + 0.396)

    @settings(max_examples=100, deadline=None)
    @given(s=st.floats(0, 1), t=st.floats(0, 1), vj=st.floats(0, 1), vk=st.floats(0, 1))
    def test_non_negative(self, s, t, vj, vk):
        assert priav(s, t, vj, vk) >= 0


def components(variance, r2_s, r2_t):
    zero = None
    return ComponentEstimates(variance, r2_s, r2_t, 0.0, 0.0, zero, zero, zero, None, r2_s, r2_t)


class TestConfidenceInterval:
    def test_gaussian_half_width(self):
        crit = BalanceCriteria.from_acceptance(2, 4, 0.01, 0.01)
        lo, hi = confidence_interval(1.0, components(4.0, 0.0, 0.0), crit, 0.05, 100)
        assert (hi - lo) / 2 == pytest.approx(1.959964 * 0.2, abs=0.01 * 0.2)

    def test_known_design_narrows(self):
        crit = BalanceCriteria.from_acceptance(2, 4, 0.01, 0.01)
        on = confidence_interval(0.0, components(1.0, 0.3, 0.2), crit, 0.05, 100)
        off = confidence_interval(0.0, components(1.0, 0.0, 0.0), crit, 0.05, 100)
        assert on[1] - on[0] <= off[1] - off[0]

    def test_cache_is_conservative(self):
        crit = BalanceCriteria.from_acceptance(2, 4, 0.01, 0.01)
        cache = QuantileCache(width=0.05)
        for r2 in [(0.123, 0.271), (0.31, 0.049), (0.0, 0.0)]:
            cached = cache.nu(0.975, *r2, crit)
            exact = nu_quantile(0.975, AsymptoticLaw.from_criteria(1.0, *r2, crit))
            assert cached >= exact - 1e-12
        assert len(cache) == 3
        cache.nu(0.975, 0.124, 0.272, crit)
        assert len(cache) == 3

    def test_degenerate_variance(self):
        from resem import DegenerateEstimateError

        crit = BalanceCriteria.from_acceptance(2, 4)
        with pytest.raises(DegenerateEstimateError):
            confidence_interval(0.0, components(0.0, 0.0, 0.0), crit, 0.05, 10)
