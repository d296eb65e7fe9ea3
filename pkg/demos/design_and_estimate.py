"""Draw one rerandomized survey experiment and compare three estimators.

Run: python3 demos/design_and_estimate.py
"""

from resem import (
    DesignFractions,
    DesignSpec,
    KnowledgeFlags,
    RngStream,
    analyze,
    fp_moments,
    generate_population_model,
    observe,
    run_resem,
    theoretical_components,
)

pop = generate_population_model(10_000, seed=0)
n, n1 = 800, 400
parts = theoretical_components(fp_moments(pop), DesignFractions(pop.size, n, n1))
print(f"population: N={pop.size}, tau={pop.average_effect:.4f}")
print(f"  V={parts.variance:.4f}  R_S^2={parts.r2_sampling:.4f}  R_T^2={parts.r2_assignment:.4f}")

spec = DesignSpec.from_acceptance(pop, n, n1, p_sampling=0.01, p_assignment=0.01)
realization = run_resem(pop, spec, RngStream(seed=42))
print(
    f"design: M_S={realization.m_sampling:.4f} after {realization.attempts_sampling} samples, "
    f"M_T={realization.m_assignment:.4f} after {realization.attempts_assignment} assignments"
)

exp = observe(pop, realization)
for label, adjust, knowledge in (
    ("difference in means, design ignored", "none", KnowledgeFlags(False, False)),
    ("difference in means", "none", KnowledgeFlags()),
    ("regression adjusted", "estimated", KnowledgeFlags()),
):
    report = analyze(exp, spec.criteria, adjust, knowledge=knowledge)
    print(
        f"{label:>36}: {report.estimate:.4f}  95% CI [{report.ci_lower:.4f}, {report.ci_upper:.4f}]"
        f"  half-width {report.half_width:.4f}"
    )
