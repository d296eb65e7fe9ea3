import itertools

import numpy as np
import pytest

from resem import FinitePopulation, generate_population_model

# Filled by tests/test_acceptance.py, printed once the session ends.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def model_population():
    return generate_population_model(10_000, seed=0)


def tiny_population(seed=0, N=6):
    """Six units, one scalar covariate shared by every block."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=N)
    y0 = 1.0 + 2.0 * w + rng.normal(size=N)
    y1 = y0 + 0.5 + w + rng.normal(scale=0.3, size=N)
    return FinitePopulation(y1, y0, w, w, w, w)


def all_resem_pairs(N, n, n1):
    """Every (sample, assignment) pair of a CRSE as index tuples."""
    pairs = []
    for sample in itertools.combinations(range(N), n):
        for treated in itertools.combinations(range(n), n1):
            pairs.append((sample, treated))
    return pairs


def chi_square_gof(counts, probabilities):
    """Pearson goodness-of-fit p-value via scipy."""
    from scipy import stats

    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(probabilities, dtype=float) * counts.sum()
    return stats.chisquare(counts, expected).pvalue


@pytest.fixture(scope="session")
def resem_draws_800(model_population):
    """10^4 two-stage draws at n=800 with p_S = p_T = 0.01 on the model population.

    Keeps the difference-in-means, the treated-minus-control gap of the two
    covariates no design stage uses (C5, C6), and the variance estimate of
    the first 500 draws.
    """
    from resem import DesignSpec, RngStream, estimate_components, observe, run_resem

    pop = model_population
    spec = DesignSpec.from_acceptance(pop, 800, 400, 0.01, 0.01)
    estimates, held_out, variances = [], [], []
    for rep in range(10_000):
        realization = run_resem(pop, spec, RngStream(77, rep))
        exp = observe(pop, realization)
        t = exp.treated
        estimates.append(exp.outcomes[t].mean() - exp.outcomes[~t].mean())
        C = exp.sample_covariates
        held_out.append(C[t, 4:].mean(axis=0) - C[~t, 4:].mean(axis=0))
        if rep < 500:
            variances.append(estimate_components(exp).variance)
    return {
        "spec": spec,
        "estimates": np.array(estimates),
        "held_out": np.array(held_out),
        "variances": np.array(variances),
    }
