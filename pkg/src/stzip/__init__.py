"""Bayesian spatio-temporal zero-inflated Poisson models fitted by Gibbs sampling."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    LatentState,
    ModelKind,
    ModelState,
    Observation,
    PriorConfig,
    SamplerPlan,
    SurveyDataset,
    linear_predictor_intensity,
    linear_predictor_zero,
    marginal_mean_and_zero_prob,
)
from .errors import ConfigurationError, InputError, NumericalError, SamplerError  # noqa: E402
from .kernels import KnotSet, PredictiveProjector, build_projector, select_knots  # noqa: E402
from .predict import (  # noqa: E402
    PredictionGrid,
    posterior_predictive_loss,
    predict_surfaces,
    score_model,
    validation_errors,
)
from .sampler import GibbsSampler, PosteriorDraws, run_chain, run_chain_stp, run_chain_zip  # noqa: E402
from .simgen import SimScenario, default_truth, simulate  # noqa: E402

__all__ = [
    "ConfigurationError", "GibbsSampler", "InputError", "KnotSet", "LatentState", "ModelKind",
    "ModelState", "NumericalError", "Observation", "PosteriorDraws", "PredictionGrid",
    "PredictiveProjector", "PriorConfig", "SamplerError", "SamplerPlan", "SimScenario",
    "SurveyDataset", "build_projector", "default_truth", "linear_predictor_intensity",
    "linear_predictor_zero", "marginal_mean_and_zero_prob", "posterior_predictive_loss",
    "predict_surfaces", "run_chain", "run_chain_stp", "run_chain_zip", "score_model",
    "select_knots", "simulate", "validation_errors",
]
