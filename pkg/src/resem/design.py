"""Sampling and assignment mechanisms.

Rejection loops draw candidates independently and keep the first acceptable
one, so the accepted draw follows the complete-randomization law conditioned
on the balance criterion exactly.  Assignment candidates are generated in
vectorized batches; the attempt counter still counts individual candidates.

Balance statistics are evaluated on whitened covariates: after centering and
multiplying by the inverse square root of the relevant covariance, ``M_S`` is
``|mean of sampled rows|^2 / (1/n - 1/N)`` and ``M_T`` is
``n / (n1 n0) * |sum of treated rows|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import CONDITION_CAP, spd_inverse_sqrt
from .balance import (
    BalanceCriteria,
    acceptance_from_threshold,
    mahalanobis_assignment,
    mahalanobis_sampling,
)
from .errors import AcceptanceStarvationError, DomainError, InfeasibleDesignError
from .population import FinitePopulation

DEFAULT_MAX_ATTEMPTS = 10**6


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream: the same ``(seed, index)`` always yields the same draws.

    Streams use the counter-based Philox bit generator keyed by
    ``SeedSequence(seed, spawn_key=(index,))``, so replicate ``i`` of a study
    can be regenerated without replaying replicates ``0..i-1``.
    """

    seed: int
    index: int = 0
    algorithm: str = "philox"

    def __post_init__(self):
        if self.algorithm != "philox":
            raise DomainError(f"unsupported generator {self.algorithm!r}")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.index < 0:
            raise DomainError("stream index must be non-negative")

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.index,))
        return np.random.Generator(np.random.Philox(sequence))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, index, self.algorithm)

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "seed": self.seed, "index": self.index}


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an :class:`RngStream`, or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise DomainError(f"cannot build a random generator from {type(rng).__name__}")


@dataclass(frozen=True)
class DesignSpec:
    """Sizes, balance criteria and loop limits of a two-stage design.

    ``assignment_covariance`` selects the matrix scaling ``M_T``: ``"sample"``
    uses the covariance of the sampled units, ``"population"`` the
    finite-population covariance of the assignment covariates.
    """

    n: int
    n1: int
    criteria: BalanceCriteria
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    assignment_covariance: str = "sample"

    def __post_init__(self):
        if not 0 < self.n1 < self.n:
            raise DomainError(f"need 0 < n1 < n, got n1={self.n1}, n={self.n}")
        if self.max_attempts < 1:
            raise DomainError("max_attempts must be positive")
        if self.assignment_covariance not in ("sample", "population"):
            raise DomainError("assignment_covariance must be 'sample' or 'population'")

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @classmethod
    def from_acceptance(
        cls, pop: FinitePopulation, n: int, n1: int, p_sampling: float = 1.0, p_assignment: float = 1.0, **options
    ) -> "DesignSpec":
        criteria = BalanceCriteria.from_acceptance(
            pop.sampling_covariates.shape[1], pop.assignment_covariates.shape[1], p_sampling, p_assignment
        )
        return cls(n, n1, criteria, **options)


@dataclass(frozen=True, eq=False)
class Realization:
    """One accepted draw of the design.

    ``treated`` lists assignments of the sampled units in increasing unit
    order.  ``m_sampling`` is ``None`` when every unit is sampled.  For the
    single-stage design ``attempts_sampling`` counts joint draws and
    ``attempts_assignment`` counts those that passed the sampling criterion.
    """

    sampled: np.ndarray
    treated: np.ndarray
    m_sampling: float | None
    m_assignment: float | None
    attempts_sampling: int = 1
    attempts_assignment: int = 1
    seed: dict | None = None

    def __post_init__(self):
        sampled = np.asarray(self.sampled, dtype=bool).copy()
        treated = np.asarray(self.treated, dtype=bool).copy()
        if treated.size != sampled.sum():
            raise DomainError("assignment must cover exactly the sampled units")
        sampled.setflags(write=False)
        treated.setflags(write=False)
        object.__setattr__(self, "sampled", sampled)
        object.__setattr__(self, "treated", treated)

    @property
    def N(self) -> int:
        return self.sampled.size

    @property
    def n(self) -> int:
        return self.treated.size

    @property
    def n1(self) -> int:
        return int(self.treated.sum())

    @property
    def sample_indices(self) -> np.ndarray:
        return np.flatnonzero(self.sampled)

    @property
    def treated_indices(self) -> np.ndarray:
        """Population indices of treated units."""
        return self.sample_indices[self.treated]

    def unit_assignment(self) -> np.ndarray:
        """Length-N vector with 1 for treated, 0 for control and -1 for unsampled units."""
        out = np.full(self.N, -1, dtype=int)
        out[self.sampled] = self.treated.astype(int)
        return out

    def to_json_dict(self) -> dict:
        return {
            "z": self.sampled.astype(int).tolist(),
            "t_sampled_order": self.treated.astype(int).tolist(),
            "m_s": self.m_sampling,
            "m_t": self.m_assignment,
            "attempts": {"sampling": self.attempts_sampling, "assignment": self.attempts_assignment},
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Realization":
        try:
            attempts = payload.get("attempts", {})
            return cls(
                sampled=np.asarray(payload["z"], dtype=int) == 1,
                treated=np.asarray(payload["t_sampled_order"], dtype=int) == 1,
                m_sampling=payload.get("m_s"),
                m_assignment=payload.get("m_t"),
                attempts_sampling=int(attempts.get("sampling", 1)),
                attempts_assignment=int(attempts.get("assignment", 1)),
                seed=payload.get("seed"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed realization document: {exc}") from exc


# ---------------------------------------------------------------------------
# unconstrained mechanisms


def simple_random_sample(N: int, n: int, rng) -> np.ndarray:
    """Sampling indicator of a simple random sample of ``n`` out of ``N`` units."""
    if not 0 < n <= N:
        raise DomainError(f"need 0 < n <= N, got n={n}, N={N}")
    gen = as_generator(rng)
    z = np.zeros(N, dtype=bool)
    z[gen.choice(N, n, replace=False)] = True
    return z


def complete_randomization(n: int, n1: int, rng) -> np.ndarray:
    """Treatment indicator putting exactly ``n1`` of ``n`` units in treatment."""
    if not 0 < n1 < n:
        raise DomainError(f"need 0 < n1 < n, got n1={n1}, n={n}")
    gen = as_generator(rng)
    t = np.zeros(n, dtype=bool)
    t[gen.choice(n, n1, replace=False)] = True
    return t


# ---------------------------------------------------------------------------
# whitening helpers


def _whiten(covariates: np.ndarray, covariance: np.ndarray, block: str, center) -> np.ndarray:
    if covariates.shape[1] == 0:
        return covariates
    root = spd_inverse_sqrt(covariance, block, CONDITION_CAP)
    return (covariates - center) @ root


def _sample_covariance(covariates: np.ndarray) -> np.ndarray:
    k = covariates.shape[1]
    return np.cov(covariates, rowvar=False, ddof=1).reshape(k, k)


def whitened_assignment_covariates(covariates, covariance=None) -> np.ndarray:
    """Whitened, centered assignment covariates of the sampled units."""
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    if covariates.shape[1] == 0:
        return covariates
    if covariance is None:
        covariance = _sample_covariance(covariates)
    return _whiten(covariates, covariance, "assignment_covariates", covariates.mean(axis=0))


def _acceptance(threshold: float, dim: int) -> float:
    return acceptance_from_threshold(dim, threshold) if dim else 1.0


def _batch_size(threshold: float, dim: int) -> int:
    return int(min(2048, max(8, math.ceil(1.5 / _acceptance(threshold, dim)))))


# ---------------------------------------------------------------------------
# rejection loops


def rejective_sample(
    pop: FinitePopulation,
    n: int,
    threshold: float,
    rng,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> tuple[np.ndarray, float | None, int]:
    """Repeat simple random sampling until ``M_S <= threshold``.

    Returns ``(sampling indicator, M_S, attempts)``.  ``M_S`` is ``None`` when
    ``n = N``, which is only allowed with an infinite threshold.
    """
    N = pop.size
    gen = as_generator(rng)
    if not 0 < n <= N:
        raise DomainError(f"need 0 < n <= N, got n={n}, N={N}")
    W = pop.sampling_covariates
    if n == N:
        if math.isfinite(threshold) and W.shape[1]:
            raise DomainError("a finite sampling threshold needs n < N")
        return np.ones(N, dtype=bool), None, 1
    white = _whiten(W, pop.sampling_covariance, "sampling_covariates", W.mean(axis=0))
    scale = 1.0 / n - 1.0 / N
    for attempt in range(1, max_attempts + 1):
        idx = gen.choice(N, n, replace=False)
        gap = white[idx].sum(axis=0) / n
        m = float(gap @ gap) / scale
        if m <= threshold:
            z = np.zeros(N, dtype=bool)
            z[idx] = True
            return z, m, attempt
    raise AcceptanceStarvationError("sampling", max_attempts)


def _candidate_treated_sets(gen: np.random.Generator, count: int, n: int, n1: int) -> np.ndarray:
    keys = gen.random((count, n))
    return np.argpartition(keys, n1 - 1, axis=1)[:, :n1]


def _candidate_treated_masks(gen: np.random.Generator, count: int, n: int, n1: int) -> np.ndarray:
    """Same draws as ``_candidate_treated_sets``, as boolean rows."""
    keys = gen.random((count, n))
    cut = np.partition(keys, n1 - 1, axis=1)[:, n1 - 1 : n1]
    return keys <= cut


def rerandomized_assignment(
    covariates,
    n1: int,
    threshold: float,
    rng,
    covariance=None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> tuple[np.ndarray, float, int]:
    """Repeat complete randomization of the sampled units until ``M_T <= threshold``.

    ``covariates`` holds the assignment covariates of the sampled units.
    Returns ``(treatment indicator, M_T, attempts)``.
    """
    gen = as_generator(rng)
    white = whitened_assignment_covariates(covariates, covariance)
    n = white.shape[0]
    if not 0 < n1 < n:
        raise DomainError(f"need 0 < n1 < n, got n1={n1}, n={n}")
    if white.shape[1] == 0 or math.isinf(threshold):
        t = complete_randomization(n, n1, gen)
        m = float(n / (n1 * (n - n1)) * np.sum(white[t].sum(axis=0) ** 2)) if white.shape[1] else 0.0
        return t, m, 1
    factor = n / (n1 * (n - n1))
    batch = _batch_size(threshold, white.shape[1])
    attempts = 0
    while attempts < max_attempts:
        size = min(batch, max_attempts - attempts)
        chosen = _candidate_treated_sets(gen, size, n, n1)
        m = factor * np.sum(white[chosen].sum(axis=1) ** 2, axis=1)
        hits = np.flatnonzero(m <= threshold)
        if hits.size:
            first = hits[0]
            t = np.zeros(n, dtype=bool)
            t[chosen[first]] = True
            return t, float(m[first]), attempts + first + 1
        attempts += size
    raise AcceptanceStarvationError("assignment", max_attempts)


@dataclass
class AcceptableAssignments:
    """Independent uniform draws from the set of acceptable assignments."""

    treated: np.ndarray  # (draws, n) boolean
    m_assignment: np.ndarray
    attempts: int
    accepted_per_attempt: float = field(init=False)

    def __post_init__(self):
        self.accepted_per_attempt = self.treated.shape[0] / self.attempts if self.attempts else 0.0


def draw_acceptable_assignments(
    covariates,
    n1: int,
    threshold: float,
    draws: int,
    rng,
    covariance=None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> AcceptableAssignments:
    """Collect ``draws`` independent assignments satisfying ``M_T <= threshold``.

    Every accepted candidate of every batch is kept; candidates are i.i.d., so
    the kept ones are i.i.d. uniform on the acceptance set.
    """
    gen = as_generator(rng)
    white = whitened_assignment_covariates(covariates, covariance)
    n = white.shape[0]
    if not 0 < n1 < n:
        raise DomainError(f"need 0 < n1 < n, got n1={n1}, n={n}")
    factor = n / (n1 * (n - n1))
    p = _acceptance(threshold, white.shape[1])
    max_rows = max(64, 2**22 // n)
    kept_masks, kept_m = [], []
    accepted = attempts = 0
    while accepted < draws:
        if attempts >= max_attempts:
            raise AcceptanceStarvationError("assignment", attempts, accepted)
        wanted = math.ceil(1.2 * (draws - accepted) / p) + 8
        size = min(wanted, max_rows, max_attempts - attempts)
        masks = _candidate_treated_masks(gen, size, n, n1)
        if white.shape[1]:
            m = factor * np.sum((masks.astype(float) @ white) ** 2, axis=1)
        else:
            m = np.zeros(size)
        ok = np.flatnonzero(m <= threshold)[: draws - accepted]
        kept_masks.append(masks[ok])
        kept_m.append(m[ok])
        accepted += ok.size
        attempts += size
    treated = np.concatenate(kept_masks)
    m_values = np.concatenate(kept_m)
    assert np.all(m_values <= threshold)
    return AcceptableAssignments(treated, m_values, attempts)


def _assignment_covariance(pop: FinitePopulation, spec: DesignSpec):
    if spec.assignment_covariance == "population":
        X = pop.assignment_covariates
        return _sample_covariance(X) if X.shape[1] else None
    return None


def _seed_record(rng) -> dict | None:
    return rng.to_dict() if isinstance(rng, RngStream) else None


def run_resem(pop: FinitePopulation, spec: DesignSpec, rng) -> Realization:
    """Two-stage rerandomized survey experiment.

    Rejective sampling first, then rerandomized assignment of the accepted
    sample.  Infinite thresholds reduce either stage to its unconstrained
    counterpart, so ``p_S = p_T = 1`` is the completely randomized survey
    experiment.
    """
    if spec.n > pop.size:
        raise DomainError(f"sample size {spec.n} exceeds population size {pop.size}")
    gen = as_generator(rng)
    a_s, a_t = spec.criteria.threshold_sampling, spec.criteria.threshold_assignment
    z, m_s, attempts_s = rejective_sample(pop, spec.n, a_s, gen, spec.max_attempts)
    t, m_t, attempts_t = rerandomized_assignment(
        pop.assignment_covariates[z], spec.n1, a_t, gen, _assignment_covariance(pop, spec), spec.max_attempts
    )
    assert (m_s is None or m_s <= a_s) and m_t <= a_t
    return Realization(z, t, m_s, m_t, attempts_s, attempts_t, _seed_record(rng))


def run_resem_single_stage(pop: FinitePopulation, spec: DesignSpec, rng) -> Realization:
    """Draw sample and assignment jointly, accepting only when both criteria hold.

    A joint draw whose sample already fails ``M_S`` is rejected before its
    assignment is drawn; the assignment is independent of the sample draw, so
    skipping it does not change the accepted law.
    """
    N, n, n1 = pop.size, spec.n, spec.n1
    if n > N:
        raise DomainError(f"sample size {n} exceeds population size {N}")
    gen = as_generator(rng)
    a_s, a_t = spec.criteria.threshold_sampling, spec.criteria.threshold_assignment
    W, X = pop.sampling_covariates, pop.assignment_covariates
    if n == N and math.isfinite(a_s) and W.shape[1]:
        raise DomainError("a finite sampling threshold needs n < N")
    white_w = _whiten(W, pop.sampling_covariance, "sampling_covariates", W.mean(axis=0)) if n < N else None
    scale = 1.0 / n - 1.0 / N if n < N else math.inf
    fixed_cov = _assignment_covariance(pop, spec)
    factor = n / (n1 * (n - n1))
    reached_assignment = 0
    for attempt in range(1, spec.max_attempts + 1):
        idx = np.sort(gen.choice(N, n, replace=False))
        if white_w is not None:
            gap = white_w[idx].sum(axis=0) / n
            m_s = float(gap @ gap) / scale
            if m_s > a_s:
                continue
        else:
            m_s = None
        reached_assignment += 1
        white_x = whitened_assignment_covariates(X[idx], fixed_cov)
        treated = _candidate_treated_sets(gen, 1, n, n1)[0]
        m_t = factor * float(np.sum(white_x[treated].sum(axis=0) ** 2)) if X.shape[1] else 0.0
        if m_t <= a_t:
            z = np.zeros(N, dtype=bool)
            z[idx] = True
            t = np.zeros(n, dtype=bool)
            t[treated] = True
            return Realization(z, t, m_s, m_t, attempt, reached_assignment, _seed_record(rng))
    raise AcceptanceStarvationError("joint sampling and assignment", spec.max_attempts)


# ---------------------------------------------------------------------------
# stratified and clustered experiments


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5 + 1e-9))


def largest_remainder(quotas) -> np.ndarray:
    """Integer counts close to ``quotas`` whose total is the rounded quota sum.

    Each count is the floor of its quota, and the leftover units go to the
    largest fractional parts, ties broken by position.
    """
    quotas = np.asarray(quotas, dtype=float)
    total = round_half_up(float(quotas.sum()))
    counts = np.floor(quotas + 1e-9).astype(int)
    leftover = total - int(counts.sum())
    if leftover > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts


def _per_stratum(values, labels: np.ndarray, name: str) -> np.ndarray:
    if isinstance(values, dict):
        try:
            return np.array([float(values[label]) for label in labels.tolist()])
        except KeyError as exc:
            raise DomainError(f"{name} has no entry for stratum {exc}") from exc
    if np.ndim(values) == 0:
        return np.full(labels.size, float(values))
    values = np.asarray(values, dtype=float).ravel()
    if values.size != labels.size:
        raise DomainError(f"{name} needs one value per stratum ({labels.size})")
    return values


@dataclass(frozen=True)
class StratumAllocation:
    labels: np.ndarray
    population: np.ndarray
    sampled: np.ndarray
    treated: np.ndarray


def stratum_allocation(strata, sample_fraction, treated_fraction) -> StratumAllocation:
    """Per-stratum sample and treated counts by largest-remainder rounding."""
    labels, sizes = np.unique(np.asarray(strata), return_counts=True)
    f = _per_stratum(sample_fraction, labels, "sample_fraction")
    r1 = _per_stratum(treated_fraction, labels, "treated_fraction")
    if np.any((f <= 0) | (f > 1)) or np.any((r1 <= 0) | (r1 >= 1)):
        raise DomainError("stratum fractions need 0 < f <= 1 and 0 < r1 < 1")
    sampled = largest_remainder(f * sizes)
    too_big = np.flatnonzero(sampled > sizes)
    if too_big.size:
        j = too_big[0]
        raise InfeasibleDesignError(f"stratum {labels[j]!r} has {sizes[j]} units but needs {sampled[j]}")
    treated = largest_remainder(r1 * sampled)
    treated = np.minimum(treated, sampled)
    if treated.sum() == 0 or treated.sum() == sampled.sum():
        raise InfeasibleDesignError("rounding leaves an empty treatment arm")
    return StratumAllocation(labels, sizes, sampled, treated)


def _dummies(strata: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return (strata[:, None] == labels[None, :-1]).astype(float)


def stratified_design(pop: FinitePopulation, sample_fraction, treated_fraction, rng) -> Realization:
    """Stratified sampling followed by blocked complete randomization.

    Fractions may be scalars, sequences ordered like the sorted stratum
    labels, or mappings from label to fraction.  The recorded balance
    statistics use stratum indicator covariates (one category dropped).
    """
    if pop.strata is None:
        raise DomainError("the population has no strata labels")
    gen = as_generator(rng)
    strata = pop.strata
    plan = stratum_allocation(strata, sample_fraction, treated_fraction)
    z = np.zeros(pop.size, dtype=bool)
    for label, count in zip(plan.labels, plan.sampled):
        members = np.flatnonzero(strata == label)
        if count:
            z[gen.choice(members, count, replace=False)] = True
    sampled_strata = strata[z]
    t = np.zeros(int(z.sum()), dtype=bool)
    for label, count in zip(plan.labels, plan.treated):
        members = np.flatnonzero(sampled_strata == label)
        if count:
            t[gen.choice(members, count, replace=False)] = True

    m_s = m_t = 0.0
    if plan.labels.size > 1:
        dummies = _dummies(strata, plan.labels)
        m_s = mahalanobis_sampling(dummies, z) if z.sum() < pop.size else None
        present = plan.labels[plan.sampled > 0]
        if present.size > 1:
            m_t = mahalanobis_assignment(_dummies(sampled_strata, present), t)
    return Realization(z, t, m_s, m_t, 1, 1, _seed_record(rng))


def cluster_aggregate(pop: FinitePopulation, clusters=None) -> FinitePopulation:
    """Cluster-level population of scaled totals.

    Cluster ``l`` gets outcomes and covariates ``sum over members / (N / M)``,
    so the mean of cluster-level effects equals the unit-level average effect.
    Labels must be integer codes ``0..M-1`` with every code used.
    """
    labels = pop.clusters if clusters is None else np.asarray(clusters)
    if labels is None:
        raise DomainError("no cluster labels given")
    labels = np.asarray(labels).ravel()
    if labels.size != pop.size:
        raise DomainError("need one cluster label per unit")
    if not np.issubdtype(labels.dtype, np.integer):
        as_int = labels.astype(int)
        if not np.array_equal(as_int, labels):
            raise DomainError("cluster labels must be integer codes")
        labels = as_int
    if labels.min() < 0:
        raise DomainError("cluster labels must be non-negative")
    counts = np.bincount(labels)
    if np.any(counts == 0):
        raise DomainError(f"cluster label {int(np.flatnonzero(counts == 0)[0])} has no units")
    n_clusters = counts.size
    if n_clusters < 2:
        raise DomainError("need at least two clusters")
    scale = pop.size / n_clusters

    def total(values: np.ndarray) -> np.ndarray:
        if values.ndim == 1:
            return np.bincount(labels, weights=values, minlength=n_clusters) / scale
        out = np.zeros((n_clusters, values.shape[1]))
        np.add.at(out, labels, values)
        return out / scale

    return FinitePopulation(
        y1=total(pop.y1),
        y0=total(pop.y0),
        sampling_covariates=total(pop.sampling_covariates),
        assignment_covariates=total(pop.assignment_covariates),
        population_covariates=total(pop.population_covariates),
        sample_covariates=total(pop.sample_covariates),
        e_columns_in_c=pop.e_columns_in_c,
    )
