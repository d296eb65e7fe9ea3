"""Design and analysis of rerandomized survey experiments.

Units are sampled from a finite population and then assigned to treatment
or control, with either stage repeated until a Mahalanobis balance
criterion holds.  The package draws such designs, estimates the average
treatment effect with optional regression adjustment, builds large-sample
confidence intervals from the non-Gaussian limiting law, and runs
randomization tests.
"""

from .asymptotics import AsymptoticLaw, QuantileCache, confidence_interval, nu_quantile, priav, truncated_variance_factor
from .balance import BalanceCriteria, mahalanobis_assignment, mahalanobis_sampling, threshold_from_acceptance
from .chisquare import chi2_cdf, chi2_quantile, chi2_sf
from .design import (
    DesignSpec,
    Realization,
    RngStream,
    cluster_aggregate,
    rejective_sample,
    rerandomized_assignment,
    run_resem,
    run_resem_single_stage,
    stratified_design,
)
from .errors import (
    AcceptanceStarvationError,
    DegenerateEstimateError,
    DegeneratePopulationError,
    DomainError,
    FallbackWarning,
    InfeasibleDesignError,
    PrecisionWarning,
    ResemError,
    SingularDesignError,
    SingularFitError,
)
from .estimation import (
    Experiment,
    KnowledgeFlags,
    adjusted_estimator,
    difference_in_means,
    estimate_components,
    fit_adjustment_coefficients,
    observe,
)
from .inference import InferenceReport, analyze
from .population import DesignFractions, FinitePopulation, fp_moments, theoretical_components
from .randomization_test import SharpNull, StatisticSpec, frt_p_value, invert_tests_ci
from .simulation import SimulationConfig, generate_population_model, run_replications, shrink_control_outcomes

__version__ = "0.1.0"
