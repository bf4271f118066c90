"""Kernel-centered structural nested models for lagged effects of continuous doses."""

from .estimator import KernelSNMM
from .exceptions import (
    ConfigError,
    DataError,
    KernelUnderflowError,
    LagdoseError,
    NoFiniteMaximizerError,
    NumericalError,
    SingularDesignError,
)
from .kernel import (
    BandwidthRule,
    ConditionalMeans,
    NadarayaWatsonRegressor,
    estimate_conditional_means,
    gaussian_kernel,
    nw_estimate,
)
from .panel import (
    CurrentCovariate,
    FeatureMap,
    LaggedCovariate,
    LaggedDose,
    LagParams,
    LagWeights,
    LeadCovariate,
    RollingMeanCovariate,
    SubjectTrajectory,
    SummarySeries,
    SummarySpec,
    TrajectoryPanel,
    WeightedParams,
    advantage,
    apply_features,
    build_summaries,
    combine_weighted,
    compute_igc,
)
from .policy import (
    AdvantageReport,
    DoseRegime,
    dose_shift_report,
    estimated_advantage_report,
    evaluate_regime,
    suggest_dose,
    suggest_doses,
)
from .snmm import (
    CenteredDesign,
    LagFit,
    assemble_design,
    confidence_intervals,
    fit_lag,
    fit_weighted_direct,
    sandwich_covariance,
)

__version__ = "0.1.0"
