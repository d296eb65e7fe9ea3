"""Data-generating model and replication engine for coverage studies."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .asymptotics import DEFAULT_MC_DRAWS, DEFAULT_MC_SEED, AsymptoticLaw, QuantileCache
from .design import DEFAULT_MAX_ATTEMPTS, DesignSpec, RngStream, run_resem
from .errors import AcceptanceStarvationError, DomainError
from .estimation import KnowledgeFlags, observe
from .inference import analyze
from .population import DesignFractions, FinitePopulation, fp_moments, projection_coefficients, theoretical_components

DESIGNS = {"CRSE": (False, False), "S": (True, False), "T": (False, True), "ST": (True, True)}
SCENARIOS = ("CRSE", "S", "T", "ST", "ST-adjusted")
DESK_SAMPLE_SIZES = (100, 400, 800)
FULL_SAMPLE_SIZES = tuple(range(100, 1001, 100))
_STREAM_STRIDE = 2**32


def generate_population_model(N: int = 10_000, seed: int = 0) -> FinitePopulation:
    """Six covariates, three Bernoulli(1/2) and three standard Gaussian, alternating.

    ``Y(0) = -sum(C)/2 + delta`` with ``delta ~ N(0, 0.1^2)`` and
    ``Y(1) = Y(0) + 3 sum(C) / 5``.  Sampling and population covariates are
    the first two columns, assignment covariates the first four, sample
    covariates all six.
    """
    if N < 100:
        raise DomainError("the model population needs N >= 100")
    gen = RngStream(seed).generator()
    C = np.empty((N, 6))
    for k in range(6):
        C[:, k] = gen.binomial(1, 0.5, N) if k % 2 == 0 else gen.standard_normal(N)
    total = C.sum(axis=1)
    y0 = -0.5 * total + 0.1 * gen.standard_normal(N)
    y1 = y0 + 0.6 * total
    return FinitePopulation(y1, y0, C[:, :2], C[:, :4], C[:, :2], C, e_columns_in_c=(0, 1))


def shrink_control_outcomes(pop: FinitePopulation, factor: float) -> FinitePopulation:
    """Pull ``Y(0)`` toward its mean by ``factor`` and keep every unit effect.

    ``Y(0)' = mean + factor (Y(0) - mean)`` and ``Y(1)' = Y(0)' + tau_i``;
    ``factor = 0`` leaves only effect heterogeneity in the outcomes.
    """
    if not 0 <= factor <= 1:
        raise DomainError("shrinkage factor must lie in [0, 1]")
    center = pop.y0.mean()
    y0 = center + factor * (pop.y0 - center)
    return pop.replace(y1=y0 + pop.effects, y0=y0)


@dataclass(frozen=True)
class SimulationConfig:
    """Settings of a replication study.

    The population is either generated from the model (``population_seed``)
    or loaded from ``population_path`` with the column roles in
    ``population_schema``.  ``n1`` is ``round(treated_fraction * n)``.
    ``full_scale`` switches to 10^4 replicates over n = 100, 200, ..., 1000.
    """

    N: int = 10_000
    sample_sizes: tuple = DESK_SAMPLE_SIZES
    treated_fraction: float = 0.5
    p_sampling: float = 0.01
    p_assignment: float = 0.01
    scenarios: tuple = SCENARIOS
    replicates: int = 2000
    alpha: float = 0.05
    seed: int = 0
    population_seed: int = 0
    population_path: str | None = None
    population_schema: dict | None = None
    mc_draws: int = DEFAULT_MC_DRAWS
    mc_seed: int = DEFAULT_MC_SEED
    cache_width: float = 0.002
    strict: bool = False
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    full_scale: bool = False
    output_path: str | None = None
    output_format: str = "json"

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if self.full_scale:
            object.__setattr__(self, "sample_sizes", FULL_SAMPLE_SIZES)
            object.__setattr__(self, "replicates", 10_000)
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        unknown = set(self.scenarios) - set(SCENARIOS)
        if unknown:
            raise DomainError(f"unknown scenarios {sorted(unknown)}; choose from {SCENARIOS}")
        if not 0 < self.treated_fraction < 1:
            raise DomainError("treated_fraction must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        for name in ("p_sampling", "p_assignment"):
            if not 0 < getattr(self, name) <= 1:
                raise DomainError(f"{name} must lie in (0, 1]")
        if self.output_format not in ("csv", "json"):
            raise DomainError("output_format must be 'csv' or 'json'")
        if self.population_path is not None and self.population_schema is None:
            raise DomainError("population_path needs a population_schema")

    @classmethod
    def from_dict(cls, payload: dict) -> "SimulationConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise DomainError(f"unknown config keys {sorted(unknown)}")
        return cls(**payload)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sample_sizes"] = list(self.sample_sizes)
        out["scenarios"] = list(self.scenarios)
        return out

    def treated_count(self, n: int) -> int:
        n1 = int(math.floor(self.treated_fraction * n + 0.5))
        if not 0 < n1 < n:
            raise DomainError(f"treated fraction leaves an empty arm at n={n}")
        return n1

    def design_spec(self, pop: FinitePopulation, n: int, design: str) -> DesignSpec:
        uses_s, uses_t = DESIGNS[design]
        return DesignSpec.from_acceptance(
            pop,
            n,
            self.treated_count(n),
            self.p_sampling if uses_s else 1.0,
            self.p_assignment if uses_t else 1.0,
            max_attempts=self.max_attempts,
        )


@dataclass
class ScenarioSummary:
    """One row of a replication report.

    ``variance`` is the empirical variance of the estimates and
    ``predicted_variance`` the asymptotic one, ``V * variance_factor / n``,
    from the realized population.  ``ci_length_scaled`` is the mean length
    times ``sqrt(n)``.
    """

    scenario: str
    n: int
    n1: int
    replicates: int
    status: str
    tau: float
    mean_estimate: float = math.nan
    bias: float = math.nan
    variance: float = math.nan
    predicted_variance: float = math.nan
    coverage: float = math.nan
    coverage_se: float = math.nan
    ci_length: float = math.nan
    ci_length_scaled: float = math.nan
    ci_length_se: float = math.nan
    mean_attempts_sampling: float = math.nan
    mean_attempts_assignment: float = math.nan
    runtime_seconds: float = field(default=math.nan, compare=False)

    COLUMNS = (
        "scenario",
        "n",
        "n1",
        "replicates",
        "status",
        "tau",
        "mean_estimate",
        "bias",
        "variance",
        "predicted_variance",
        "coverage",
        "coverage_se",
        "ci_length",
        "ci_length_scaled",
        "ci_length_se",
        "mean_attempts_sampling",
        "mean_attempts_assignment",
    )

    def record(self, include_runtime: bool = False) -> dict:
        out = {name: getattr(self, name) for name in self.COLUMNS}
        if include_runtime:
            out["runtime_seconds"] = self.runtime_seconds
        return out


@dataclass
class ReplicationSummary:
    config: SimulationConfig
    population: dict
    rows: list

    def row(self, scenario: str, n: int) -> ScenarioSummary:
        for row in self.rows:
            if row.scenario == scenario and row.n == n:
                return row
        raise KeyError((scenario, n))


def _load(config: SimulationConfig) -> FinitePopulation:
    if config.population_path is not None:
        from .io import load_population

        return load_population(config.population_path, config.population_schema)
    return generate_population_model(config.N, config.population_seed)


def _population_record(pop: FinitePopulation, config: SimulationConfig) -> dict:
    moments = fp_moments(pop)
    record = {"N": pop.size, "tau": pop.average_effect, "by_n": {}}
    for n in config.sample_sizes:
        fractions = DesignFractions(pop.size, n, config.treated_count(n))
        plain = theoretical_components(moments, fractions)
        beta, gamma = projection_coefficients(moments, fractions)
        record["by_n"][str(n)] = {
            "variance": plain.variance,
            "r2_sampling": plain.r2_sampling,
            "r2_assignment": plain.r2_assignment,
            "beta_tilde": beta.tolist(),
            "gamma_tilde": gamma.tolist(),
        }
    return record


def _predicted_variance(pop, config, n, scenario) -> float:
    design = "ST" if scenario == "ST-adjusted" else scenario
    spec = config.design_spec(pop, n, design)
    fractions = DesignFractions(pop.size, n, spec.n1)
    moments = fp_moments(pop)
    if scenario == "ST-adjusted":
        from .population import adjusted_population

        beta, gamma = projection_coefficients(moments, fractions)
        moments = fp_moments(adjusted_population(pop, beta, gamma, fractions))
    parts = theoretical_components(moments, fractions)
    law = AsymptoticLaw.from_criteria(parts.variance, parts.r2_sampling, parts.r2_assignment, spec.criteria)
    return law.law_variance() / n


def replicate_stream(config: SimulationConfig, size_index: int, design: str, replicate: int) -> RngStream:
    """Stream of one replicate; independent of every other (n, design, replicate)."""
    design_index = list(DESIGNS).index(design)
    return RngStream(config.seed, (size_index * len(DESIGNS) + design_index) * _STREAM_STRIDE + replicate)


def _summarize(scenario, n, n1, tau, estimates, lowers, uppers, attempts, predicted, runtime) -> ScenarioSummary:
    estimates, lowers, uppers = map(np.asarray, (estimates, lowers, uppers))
    reps = estimates.size
    covered = (lowers <= tau) & (tau <= uppers)
    coverage = float(covered.mean())
    lengths = uppers - lowers
    return ScenarioSummary(
        scenario=scenario,
        n=n,
        n1=n1,
        replicates=reps,
        status="ok",
        tau=tau,
        mean_estimate=float(estimates.mean()),
        bias=float(estimates.mean() - tau),
        variance=float(estimates.var(ddof=1)) if reps > 1 else math.nan,
        predicted_variance=predicted,
        coverage=coverage,
        coverage_se=math.sqrt(coverage * (1 - coverage) / reps),
        ci_length=float(lengths.mean()),
        ci_length_scaled=float(lengths.mean() * math.sqrt(n)),
        ci_length_se=float(lengths.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan,
        mean_attempts_sampling=float(np.mean([a[0] for a in attempts])),
        mean_attempts_assignment=float(np.mean([a[1] for a in attempts])),
        runtime_seconds=runtime,
    )


def run_replications(config: SimulationConfig, population: FinitePopulation | None = None) -> ReplicationSummary:
    """Repeat each design ``config.replicates`` times at every sample size.

    ``ST-adjusted`` reuses the ``ST`` realizations with the regression-adjusted
    estimator.  A design that starves aborts its scenarios, which are
    reported with the failing stage in ``status``.
    """
    pop = _load(config) if population is None else population
    tau = pop.average_effect
    caches: dict = {}
    rows = []
    designs = [d for d in DESIGNS if d in config.scenarios or (d == "ST" and "ST-adjusted" in config.scenarios)]
    for size_index, n in enumerate(config.sample_sizes):
        n1 = config.treated_count(n)
        for design in designs:
            spec = config.design_spec(pop, n, design)
            cache = caches.setdefault(
                spec.criteria, QuantileCache(config.cache_width, config.mc_draws, config.mc_seed)
            )
            wanted = [s for s in (design, f"{design}-adjusted") if s in config.scenarios]
            results = {s: ([], [], []) for s in wanted}
            attempts = []
            started = time.perf_counter()
            try:
                for rep in range(config.replicates):
                    realization = run_resem(pop, spec, replicate_stream(config, size_index, design, rep))
                    attempts.append((realization.attempts_sampling, realization.attempts_assignment))
                    exp = observe(pop, realization)
                    for scenario in wanted:
                        adjust = "estimated" if scenario.endswith("-adjusted") else "none"
                        report = analyze(
                            exp,
                            spec.criteria,
                            adjust,
                            knowledge=KnowledgeFlags(),
                            alpha=config.alpha,
                            mc_draws=config.mc_draws,
                            seed=config.mc_seed,
                            cache=None if config.strict else cache,
                            strict=config.strict,
                        )
                        results[scenario][0].append(report.estimate)
                        results[scenario][1].append(report.ci_lower)
                        results[scenario][2].append(report.ci_upper)
            except AcceptanceStarvationError as exc:
                for scenario in wanted:
                    rows.append(
                        ScenarioSummary(scenario, n, n1, len(attempts), f"starved: {exc}", tau)
                    )
                continue
            runtime = time.perf_counter() - started
            for scenario in wanted:
                rows.append(
                    _summarize(
                        scenario,
                        n,
                        n1,
                        tau,
                        *results[scenario],
                        attempts,
                        _predicted_variance(pop, config, n, scenario),
                        runtime,
                    )
                )
    order = {s: i for i, s in enumerate(SCENARIOS)}
    rows.sort(key=lambda r: (r.n, order[r.scenario]))
    return ReplicationSummary(config, _population_record(pop, config), rows)
