"""Information directed sampling for bandits with heteroscedastic noise."""
from .core import (
    ActionSet,
    ConfigError,
    Environment,
    KernelTruth,
    LinearTruth,
    NoiseModel,
    RngStream,
    evaluate,
    low_noise_subset,
    make_environment,
    make_kernel,
    true_gap,
)
from .estimators import (
    ConfidenceBand,
    KernelState,
    LinearState,
    beta_linear,
    beta_rkhs,
    conditional_width,
    confidence_band,
    gap_surrogate,
)
from .harness import ExperimentResult, Trace, aggregate, run_experiment, run_trial
from .infogain import InfoVector, info_ensemble, info_full, info_target
from .policies import (
    POLICY_IDS,
    Policy,
    PolicyConfig,
    SamplingDistribution,
    make_policy,
    minimize_pair,
    psi_plus,
    select_dids,
    select_ids,
)
from .validation import (
    CheckerConfig,
    CoverageReport,
    check_conditional_mean,
    check_confidence_coverage,
    check_supermartingale_bound,
    check_theorem2,
    full_simplex_min,
)

__version__ = "0.1.0"
