"""Posterior causal-effect estimation: parametric and nonparametric.

Regression models are sampled with an adaptive random-walk Metropolis within
Gibbs engine, and posterior draws are post-processed into causal contrasts:
Bayesian-bootstrap standardization, stratified odds ratios, incremental dose
curves, sensitivity perturbations, and Monte Carlo g-computation for
time-varying treatments.
"""

from .bnp import (
    BARTConfig,
    DPConfig,
    GPConfig,
    bart_fit_predict,
    bnp_ate,
    dp_fit,
    dp_predict,
    dp_regression,
    dp_weights,
    gp_fit_predict,
)
from .cli import main
from .data import LongitudinalDataset, ObservedDataset
from .effects import (
    EstimandDraws,
    SensitivitySpec,
    bb_weights,
    bias_xi,
    marginal_ate_from_linear,
    sensitivity_perturb,
    standardize_marginal,
    standardize_stratified_or,
    stratified_or_from_means,
)
from .engine import (
    ChainConfig,
    DrawsMatrix,
    LogPosteriorTarget,
    effective_sample_size,
    run_chains,
    split_rhat,
)
from .errors import (
    CausalPostError,
    CholeskyError,
    ClampWarning,
    DomainError,
    InitializationError,
    InvalidParameterError,
    MissingStratumError,
    OraclePrecisionWarning,
    PositivityWarning,
    SchemaError,
    ShapeError,
    SingleChainWarning,
    SingularModelError,
    StuckChainWarning,
    ToleranceUnreachableError,
    UnsupportedKindError,
)
from .gcomp import (
    Regime,
    ShrinkageSpec,
    choose_B,
    fit_sequential,
    gcomp_arm_means,
    gcomp_dynamic,
    gcomp_static,
)
from .manifest import RunManifest, build_manifest, file_digest, manifest_path
from .models import (
    DoseModelSpec,
    LinearModelSpec,
    PartialPoolSpec,
    dose_curve_names,
    fit_dose_ar1,
    fit_linear,
    fit_partial_pool,
    partial_pool_predictions,
)
from .prob import (
    Distribution,
    RngHandle,
    exact_simplex,
    expit,
    sample_dirichlet,
    std_normal_cdf,
)
from .synthdata import SCENARIO_IDS, OracleResult, Scenario, generate, oracle_truth

__version__ = "0.1.0"

__all__ = [
    "BARTConfig",
    "ChainConfig",
    "CausalPostError",
    "CholeskyError",
    "ClampWarning",
    "DPConfig",
    "Distribution",
    "DomainError",
    "DoseModelSpec",
    "DrawsMatrix",
    "EstimandDraws",
    "GPConfig",
    "InitializationError",
    "InvalidParameterError",
    "LinearModelSpec",
    "LogPosteriorTarget",
    "LongitudinalDataset",
    "MissingStratumError",
    "ObservedDataset",
    "OraclePrecisionWarning",
    "OracleResult",
    "PartialPoolSpec",
    "PositivityWarning",
    "Regime",
    "RngHandle",
    "RunManifest",
    "SCENARIO_IDS",
    "Scenario",
    "SchemaError",
    "SensitivitySpec",
    "ShapeError",
    "ShrinkageSpec",
    "SingleChainWarning",
    "SingularModelError",
    "StuckChainWarning",
    "ToleranceUnreachableError",
    "UnsupportedKindError",
    "bart_fit_predict",
    "bb_weights",
    "bias_xi",
    "bnp_ate",
    "build_manifest",
    "choose_B",
    "dose_curve_names",
    "dp_fit",
    "dp_predict",
    "dp_regression",
    "dp_weights",
    "effective_sample_size",
    "exact_simplex",
    "expit",
    "file_digest",
    "fit_dose_ar1",
    "fit_linear",
    "fit_partial_pool",
    "fit_sequential",
    "gcomp_arm_means",
    "gcomp_dynamic",
    "gcomp_static",
    "generate",
    "gp_fit_predict",
    "main",
    "manifest_path",
    "marginal_ate_from_linear",
    "oracle_truth",
    "partial_pool_predictions",
    "run_chains",
    "sample_dirichlet",
    "sensitivity_perturb",
    "split_rhat",
    "standardize_marginal",
    "standardize_stratified_or",
    "stratified_or_from_means",
    "std_normal_cdf",
]
