"""Hybrid Monte Carlo yield estimation with Gaussian process surrogates."""

from .distributions import TruncatedGaussian
from .estimator import (
    EstimatorSettings,
    RunReport,
    YieldProblem,
    estimate_gpr_hybrid,
    estimate_pure_mc,
    estimate_sorted,
    mc_sample_size,
)
from .gpr import GaussianProcessSurrogate, KernelParams
from .hybrid import (
    ClassificationOutcome,
    HybridSettings,
    PerformanceClause,
    PerformanceSpec,
    SurrogateBank,
    classify,
    egl_criterion,
    hybrid_criterion,
)
from .linearization import build_linear, estimate_linearized, upsilon_sweep
from .oracle import (
    BlackboxEndpoint,
    BlackboxOracle,
    EvalCounters,
    FrequencyGrid,
    SParamSample,
    WaveguideConfig,
    WaveguideOracle,
    blackbox_eval,
    waveguide_eval,
)

__version__ = "0.1.0"

__all__ = [
    "TruncatedGaussian",
    "GaussianProcessSurrogate",
    "KernelParams",
    "FrequencyGrid",
    "SParamSample",
    "WaveguideConfig",
    "WaveguideOracle",
    "BlackboxEndpoint",
    "BlackboxOracle",
    "EvalCounters",
    "waveguide_eval",
    "blackbox_eval",
    "PerformanceClause",
    "PerformanceSpec",
    "HybridSettings",
    "ClassificationOutcome",
    "SurrogateBank",
    "classify",
    "egl_criterion",
    "hybrid_criterion",
    "EstimatorSettings",
    "YieldProblem",
    "RunReport",
    "mc_sample_size",
    "estimate_pure_mc",
    "estimate_gpr_hybrid",
    "estimate_sorted",
    "build_linear",
    "estimate_linearized",
    "upsilon_sweep",
    "__version__",
]
