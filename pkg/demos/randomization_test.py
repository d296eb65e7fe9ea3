"""Randomization test of a constant effect and the interval from inverting it.

Run: python3 demos/randomization_test.py
"""

from resem import DesignSpec, RngStream, analyze, generate_population_model, observe, run_resem
from resem.randomization_test import SharpNull, StatisticSpec, frt_p_value, invert_tests_ci

pop = generate_population_model(10_000, seed=0)
spec = DesignSpec.from_acceptance(pop, 200, 100, p_sampling=0.01, p_assignment=0.01)
exp = observe(pop, run_resem(pop, spec, RngStream(seed=7)))
print(f"tau = {pop.average_effect:.4f}")

for c in (0.0, 0.5, 1.0):
    result = frt_p_value(exp, SharpNull.constant(c, exp.n), spec.criteria, StatisticSpec(), draws=999, rng=RngStream(1))
    print(f"H0: every effect equals {c:.1f}  ->  p = {result.p_value:.3f} (acceptance rate {result.acceptance_rate:.4f})")

interval = invert_tests_ci(exp, spec.criteria, alpha=0.05, draws=499, rng=RngStream(2))
report = analyze(exp, spec.criteria)
print(f"test inversion 95% interval: [{interval.lo:.4f}, {interval.hi:.4f}]")
print(f"large-sample 95% interval:   [{report.ci_lower:.4f}, {report.ci_upper:.4f}]")
