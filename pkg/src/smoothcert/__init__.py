"""Certification engine for Gaussian-smoothed classifiers and ensembles.

The package certifies an l2 robustness radius for any deterministic
classifier by sampling it under isotropic Gaussian noise, supports staged
sampling schedules with early abort, and includes a closed-form Gaussian
logit model for studying how ensembling changes certified radii.
"""

from .bounds import (
    ConvergenceError,
    binomial_pmf,
    certified_radius,
    gaussian_cdf,
    gaussian_quantile,
    lower_conf_bound,
    lower_conf_bound_batch,
    upper_conf_bound,
)
from .certify import (
    ABSTAIN,
    DEFAULT_RADIUS_GRID,
    AdaptiveSchedule,
    BatchReport,
    CertificationResult,
    SamplingCounts,
    StageThreshold,
    batch_certify,
    certify,
    certify_adaptive,
    min_final_stage_size,
    sample_under_noise,
    stage_thresholds,
)
from .classifiers import (
    BaseClassifier,
    LinearGaussianClassifier,
    NoiseSource,
    TabularClassifier,
    classifier_from_spec,
    load_classifier,
)
from .ensemble import EnsembleClassifier, aggregate
from .theory import (
    GaussianLogitModel,
    MarginStatistics,
    OrthantEstimate,
    RadiusDistribution,
    TheorySweepRow,
    chebyshev_lower_bound,
    estimate_model,
    k_sweep,
    margin_statistics,
    margin_variances_closed_form,
    radius_distribution,
    stacked_covariance,
    success_probability_mc,
    synthesize_logit_samples,
    variance_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN",
    "DEFAULT_RADIUS_GRID",
    "AdaptiveSchedule",
    "BaseClassifier",
    "BatchReport",
    "CertificationResult",
    "ConvergenceError",
    "EnsembleClassifier",
    "GaussianLogitModel",
    "LinearGaussianClassifier",
    "MarginStatistics",
    "NoiseSource",
    "OrthantEstimate",
    "RadiusDistribution",
    "SamplingCounts",
    "StageThreshold",
    "TabularClassifier",
    "TheorySweepRow",
    "aggregate",
    "batch_certify",
    "binomial_pmf",
    "certified_radius",
    "certify",
    "certify_adaptive",
    "chebyshev_lower_bound",
    "classifier_from_spec",
    "estimate_model",
    "gaussian_cdf",
    "gaussian_quantile",
    "k_sweep",
    "load_classifier",
    "lower_conf_bound",
    "lower_conf_bound_batch",
    "margin_statistics",
    "margin_variances_closed_form",
    "min_final_stage_size",
    "radius_distribution",
    "sample_under_noise",
    "stacked_covariance",
    "stage_thresholds",
    "success_probability_mc",
    "synthesize_logit_samples",
    "upper_conf_bound",
    "variance_ratio",
    "__version__",
]
