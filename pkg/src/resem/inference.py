"""One-call analysis of a rerandomized survey experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asymptotics import DEFAULT_MC_DRAWS, DEFAULT_MC_SEED, AsymptoticLaw, QuantileCache, confidence_interval
from .balance import BalanceCriteria
from .errors import DomainError
from .estimation import (
    AdjustmentCoefficients,
    ComponentEstimates,
    Experiment,
    KnowledgeFlags,
    adjusted_estimator,
    estimate_components,
    fit_adjustment_coefficients,
)

ADJUSTMENTS = ("none", "fixed", "estimated")


@dataclass(frozen=True)
class InferenceReport:
    """Point estimate, interval and the pieces that produced them.

    ``standard_error`` is the estimated standard deviation of the estimator
    under the design, ``sqrt(V_hat * variance_factor / n)``; the interval
    itself uses quantiles of the non-Gaussian law.
    """

    estimate: float
    ci_lower: float
    ci_upper: float
    alpha: float
    standard_error: float
    components: ComponentEstimates
    coefficients: AdjustmentCoefficients

    @property
    def half_width(self) -> float:
        return (self.ci_upper - self.ci_lower) / 2

    def covers(self, value: float) -> bool:
        return self.ci_lower <= value <= self.ci_upper

    def to_json_dict(self) -> dict:
        c = self.components
        return {
            "estimate": self.estimate,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "alpha": self.alpha,
            "standard_error": self.standard_error,
            "variance": c.variance,
            "r2_sampling": c.r2_sampling,
            "r2_assignment": c.r2_assignment,
            "r2_sampling_raw": c.r2_sampling_raw,
            "r2_assignment_raw": c.r2_assignment_raw,
            "knowledge": {"sampling": c.knowledge.sampling, "assignment": c.knowledge.assignment},
            "beta": self.coefficients.beta.tolist(),
            "gamma": self.coefficients.gamma.tolist(),
            "coefficients": self.coefficients.provenance,
        }


def analyze(
    exp: Experiment,
    criteria: BalanceCriteria,
    adjust: str = "none",
    beta=None,
    gamma=None,
    knowledge: KnowledgeFlags = KnowledgeFlags(),
    alpha: float = 0.05,
    mc_draws: int = DEFAULT_MC_DRAWS,
    seed: int = DEFAULT_MC_SEED,
    cache: QuantileCache | None = None,
    strict: bool = False,
) -> InferenceReport:
    """Estimate the average effect and a large-sample confidence interval.

    ``adjust="none"`` is the difference-in-means, ``"fixed"`` uses the given
    ``beta``/``gamma`` (missing ones are zero) and ``"estimated"`` fits them by
    per-arm least squares.
    """
    if adjust not in ADJUSTMENTS:
        raise DomainError(f"adjust must be one of {ADJUSTMENTS}")
    if adjust == "none":
        if beta is not None or gamma is not None:
            raise DomainError("coefficients given but adjust='none'")
        coefficients = AdjustmentCoefficients.zeros(exp, "none")
    elif adjust == "fixed":
        zeros = AdjustmentCoefficients.zeros(exp, "fixed")
        coefficients = AdjustmentCoefficients(
            zeros.beta if beta is None else np.asarray(beta, dtype=float).ravel(),
            zeros.gamma if gamma is None else np.asarray(gamma, dtype=float).ravel(),
            "fixed",
        )
    else:
        coefficients = fit_adjustment_coefficients(exp)
    estimate = adjusted_estimator(exp, coefficients.beta, coefficients.gamma)
    components = estimate_components(exp, coefficients.beta, coefficients.gamma, knowledge)
    lower, upper = confidence_interval(estimate, components, criteria, alpha, exp.n, mc_draws, seed, cache, strict)
    law = AsymptoticLaw.from_criteria(components.variance, components.r2_sampling, components.r2_assignment, criteria)
    se = math.sqrt(law.law_variance() / exp.n)
    return InferenceReport(estimate, lower, upper, alpha, se, components, coefficients)
