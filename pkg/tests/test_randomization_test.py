import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resem import (
    AsymptoticLaw,
    BalanceCriteria,
    DesignSpec,
    DomainError,
    Experiment,
    KnowledgeFlags,
    RngStream,
    estimate_components,
    mahalanobis_assignment,
    observe,
    run_resem,
)
from resem.design import draw_acceptable_assignments
from resem.randomization_test import (
    GridSpec,
    SharpNull,
    StatisticSpec,
    _reference,
    enumerate_acceptable_assignments,
    frt_p_value,
    impute_potential_outcomes,
    invert_tests_ci,
    prepivoted_statistic,
)

CRITERIA = BalanceCriteria.from_acceptance(1, 2, 0.2, 0.2)


def small_experiment(seed, n=40, n1=20, effect=1.0, heterogeneity=0.0, threshold=math.inf):
    """Covariates: C = (W, X2), sampling block W, assignment block (W, X2).

    The assignment is uniform on ``{M_T <= threshold}``.
    """
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(n, 2))
    t = draw_acceptable_assignments(C, n1, threshold, 1, rng).treated[0]
    y0 = C @ [1.0, -0.5] + rng.normal(size=n)
    y1 = y0 + effect + heterogeneity * C[:, 0]
    return Experiment(
        outcomes=np.where(t, y1, y0),
        treated=t,
        population_size=1000,
        sample_covariates=C,
        sampling_covariates=C[:, :1],
        assignment_covariates=C,
    )


class TestImputation:
    def test_zero_null_keeps_outcomes(self):
        exp = small_experiment(0)
        y1, y0 = impute_potential_outcomes(exp, SharpNull.constant(0.0, exp.n))
        assert np.array_equal(y1, exp.outcomes) and np.array_equal(y0, exp.outcomes)

    def test_treated_unit(self):
        exp = Experiment([3.0, 1.0], [1, 0], 10)
        y1, y0 = impute_potential_outcomes(exp, SharpNull.constant(1.0, 2))
        assert (y1[0], y0[0]) == (3.0, 2.0)
        assert (y1[1], y0[1]) == (2.0, 1.0)

    def test_constant_null_differences(self):
        exp = small_experiment(1)
        y1, y0 = impute_potential_outcomes(exp, SharpNull.constant(0.7, exp.n))
        assert np.all(y1 - y0 == pytest.approx(0.7, abs=1e-14))

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            impute_potential_outcomes(small_experiment(2), SharpNull.constant(1.0, 3))

    def test_non_finite_effects(self):
        with pytest.raises(DomainError):
            SharpNull([1.0, math.nan])


class TestPrepivotedStatistic:
    def test_zero_at_the_estimate(self):
        exp = small_experiment(3)
        t = exp.treated
        center = exp.outcomes[t].mean() - exp.outcomes[~t].mean()
        assert prepivoted_statistic(exp, center, CRITERIA) == pytest.approx(0.0, abs=1e-12)

    def test_tends_to_one(self):
        assert prepivoted_statistic(small_experiment(4), 1e3, CRITERIA) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_distance(self):
        exp = small_experiment(5)
        values = [prepivoted_statistic(exp, c, CRITERIA) for c in (1.0, 0.5, 0.0, -1.0)]
        assert all(-1 <= v <= 1 for v in values)
        t = exp.treated
        estimate = exp.outcomes[t].mean() - exp.outcomes[~t].mean()
        order = np.argsort([abs(estimate - c) for c in (1.0, 0.5, 0.0, -1.0)])
        assert np.all(np.diff(np.array(values)[order]) >= 0)

    @pytest.mark.parametrize("flags", [(True, True), (False, True), (True, False), (False, False)])
    def test_matches_asymptotic_law(self, flags):
        exp = small_experiment(6, heterogeneity=0.5)
        knowledge = KnowledgeFlags(*flags)
        comp = estimate_components(exp, knowledge=knowledge)
        t = exp.treated
        estimate = exp.outcomes[t].mean() - exp.outcomes[~t].mean()
        center = estimate - 1.3 * math.sqrt(comp.variance / exp.n)
        law = AsymptoticLaw.from_criteria(comp.variance, comp.r2_sampling, comp.r2_assignment, CRITERIA)
        expected = 2 * law.cdf(math.sqrt(exp.n) * abs(estimate - center)) - 1
        got = prepivoted_statistic(exp, center, CRITERIA, knowledge=knowledge)
        assert got == pytest.approx(expected, abs=1e-3)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), scale=st.floats(0.01, 100), shift=st.floats(-50, 50))
    def test_affine_invariance(self, seed, scale, shift):
        exp = small_experiment(seed)
        moved = exp.with_outcomes(scale * exp.outcomes + shift)
        for coefficients in ("zero", "estimated"):
            base = prepivoted_statistic(exp, 0.4, CRITERIA, coefficients)
            assert prepivoted_statistic(moved, scale * 0.4, CRITERIA, coefficients) == pytest.approx(base, abs=1e-8)


class TestPValue:
    def test_constant_statistic_gives_one(self):
        exp = small_experiment(7).with_outcomes(np.full(40, 2.0))
        result = frt_p_value(exp, SharpNull.constant(0.0, 40), CRITERIA, StatisticSpec(prepivot=False), draws=99)
        assert result.p_value == 1.0

    def test_brute_force_enumeration(self):
        y = np.array([1.0, 2.5, 3.0, 7.0])
        t = np.array([1, 1, 0, 0], dtype=bool)
        exp = Experiment(y, t, 20, np.array([0.3, -1.0, 0.8, 0.1]))
        crit = BalanceCriteria.from_acceptance(1, 1)

        def stat(treated):
            mask = np.zeros(4, dtype=bool)
            mask[list(treated)] = True
            return abs(y[mask].mean() - y[~mask].mean())

        observed = stat((0, 1))
        values = [stat(s) for s in itertools.combinations(range(4), 2)]
        expected = sum(v >= observed - 1e-12 for v in values) / 6
        result = frt_p_value(exp, SharpNull.constant(0.0, 4), crit, StatisticSpec(prepivot=False), mode="enumerate")
        assert result.p_value == pytest.approx(expected, abs=1e-12)
        assert result.draws == 6 and result.mode == "enumerate"

    def test_auto_mode_enumerates_small_sets(self):
        exp = small_experiment(8, n=8, n1=4)
        result = frt_p_value(exp, SharpNull.constant(1.0, 8), CRITERIA, StatisticSpec(prepivot=False), mode="auto")
        assert result.mode == "enumerate"

    def test_enumeration_cap(self):
        with pytest.raises(DomainError):
            enumerate_acceptable_assignments(small_experiment(9), math.inf, cap=1000)

    def test_reference_respects_threshold(self):
        exp = small_experiment(10)
        treated, attempts, _ = _reference(exp, CRITERIA, 500, 0, "sample", 10**5, None)
        assert treated.shape == (500, 40) and attempts >= 500
        m = np.array([mahalanobis_assignment(exp.assignment_covariates, row) for row in treated])
        assert np.all(m <= CRITERIA.threshold_assignment + 1e-12)

    def test_enumeration_respects_threshold(self):
        exp = small_experiment(11, n=10, n1=5)
        treated = enumerate_acceptable_assignments(exp, CRITERIA.threshold_assignment)
        m = np.array([mahalanobis_assignment(exp.assignment_covariates, row) for row in treated])
        assert 0 < treated.shape[0] < math.comb(10, 5)
        assert np.all(m <= CRITERIA.threshold_assignment)

    def test_seeded_determinism_and_json(self):
        exp = small_experiment(12)
        a = frt_p_value(exp, SharpNull.constant(1.0, 40), CRITERIA, draws=99, rng=RngStream(3))
        b = frt_p_value(exp, SharpNull.constant(1.0, 40), CRITERIA, draws=99, rng=RngStream(3))
        assert a == b
        assert set(a.to_json_dict()) == {"statistic", "p_value", "draws", "attempts", "acceptance_rate", "mode"}
        assert 0 < a.acceptance_rate <= 1

    def test_exact_validity_on_enumerated_set(self):
        # Under a true sharp null the exact p-value is super-uniform over the acceptance set.
        exp = small_experiment(13, n=10, n1=5, effect=0.5)
        crit = BalanceCriteria.from_acceptance(1, 2, 1.0, 0.5)
        acceptable = enumerate_acceptable_assignments(exp, crit.threshold_assignment)
        y1 = np.where(exp.treated, exp.outcomes, exp.outcomes + 0.5)
        y0 = y1 - 0.5
        p_values = []
        for row in acceptable:
            realized = Experiment(
                np.where(row, y1, y0), row, 1000, exp.sample_covariates, None, None,
                exp.sampling_covariates, exp.assignment_covariates,
            )
            spec = StatisticSpec(prepivot=False)
            p_values.append(frt_p_value(realized, SharpNull.constant(0.5, 10), crit, spec, mode="enumerate").p_value)
        p_values = np.array(p_values)
        for alpha in (0.05, 0.1, 0.25, 0.5):
            assert np.mean(p_values <= alpha) <= alpha + 1e-12

    def test_sampled_validity(self):
        rejections = 0
        for rep in range(300):
            exp = small_experiment(1000 + rep, threshold=CRITERIA.threshold_assignment)
            result = frt_p_value(exp, SharpNull.constant(1.0, 40), CRITERIA, draws=19, rng=rep)
            rejections += result.p_value <= 0.05
        assert rejections / 300 <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 300)


class TestInversion:
    def test_contains_true_constant_effect(self):
        exp = small_experiment(14, n=60, n1=30, effect=1.0)
        ci = invert_tests_ci(exp, CRITERIA, 0.05, draws=199, rng=1)
        assert ci.lo <= 1.0 <= ci.hi and not ci.truncated

    def test_nested_in_alpha(self):
        exp = small_experiment(15, n=60, n1=30)
        wide = invert_tests_ci(exp, CRITERIA, 0.01, draws=199, rng=2)
        narrow = invert_tests_ci(exp, CRITERIA, 0.10, draws=199, rng=2)
        assert wide.lo <= narrow.lo and narrow.hi <= wide.hi

    def test_resolution(self):
        exp = small_experiment(16)
        ci = invert_tests_ci(exp, CRITERIA, 0.05, draws=99, rng=3)
        assert ci.resolution == pytest.approx(ci.standard_error / 50)

    def test_grid_edge_is_flagged(self):
        # With 19 draws no p-value can fall to 0.01, so every grid point is kept.
        exp = small_experiment(17)
        ci = invert_tests_ci(exp, CRITERIA, 0.01, draws=19, rng=4)
        assert ci.truncated
        assert ci.lo == pytest.approx(ci.estimate - 5 * ci.standard_error)

    def test_rejects_bad_grid(self):
        with pytest.raises(DomainError):
            GridSpec(half_width=1.0, resolution=2.0)

    @pytest.mark.slow
    def test_coverage_on_model_population(self, model_population):
        pop = model_population
        # Same size as the size check; at n=200 the plug-in variance is still visibly anti-conservative.
        spec = DesignSpec.from_acceptance(pop, 500, 250, 0.01, 0.01)
        covered = 0
        for rep in range(1000):
            exp = observe(pop, run_resem(pop, spec, RngStream(123, rep)))
            ci = invert_tests_ci(exp, spec.criteria, 0.05, draws=99, rng=RngStream(456, rep))
            covered += not ci.empty and ci.lo <= pop.average_effect <= ci.hi
        assert covered / 1000 >= 0.94
