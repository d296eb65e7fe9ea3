"""Small coverage study: how each design and estimator behaves over repeated draws.

Run: python3 demos/coverage_study.py [replicates]
"""

import sys

from resem import SimulationConfig, run_replications

replicates = int(sys.argv[1]) if len(sys.argv) > 1 else 300
config = SimulationConfig(sample_sizes=(400,), replicates=replicates)
summary = run_replications(config)

print(f"tau = {summary.population['tau']:.4f}, n = 400, {replicates} replicates per design")
print(f"{'scenario':>12} {'coverage':>9} {'n*Var':>8} {'predicted':>9} {'length*sqrt(n)':>15}")
for row in summary.rows:
    print(
        f"{row.scenario:>12} {row.coverage:9.3f} {400 * row.variance:8.3f} "
        f"{400 * row.predicted_variance:9.3f} {row.ci_length_scaled:15.3f}"
    )
