"""Variational inference for nonlinear latent dynamical systems.

The generative model evolves a latent state with a locally linear map whose
matrix depends on the state through a small network; observations decode the
latent state through a second network.  Inference uses a Gaussian whose
precision is block-tridiagonal, found by fixed-point iteration, so every
per-trial operation is linear in the trial length.
"""

__version__ = "0.1.0"

from .errors import (FpiDivergenceError, InvalidConfigError, InvalidDataError,
                     NotPositiveDefiniteError, NumericalError,
                     QuadratureDomainError, ShapeError, TrainingDivergedError,
                     VindError)
from .model import VindModel, init_model
from .posterior import (contraction_bound, fpi_map, fpi_solve,
                        laplace_posterior, posterior_from_solve,
                        sample_posterior)
from .generative import elbo_estimate, joint_logdensity
from .training import EpochRecord, TrainConfig, TrainState, fit, init_state, train_epoch
from .dataeval import (EvalReport, TrialSet, assign_split_tags,
                       evaluate_forecasts, forward_interpolate, load_trialset,
                       lorenz_generate, mse_k, r2_k, save_trialset, split,
                       synth_observations, toy_intractability_demo)
from .serialize import (load_checkpoint, load_model, save_checkpoint,
                        save_model)

__all__ = [
    "__version__",
    "VindError", "ShapeError", "InvalidConfigError", "InvalidDataError",
    "NumericalError", "NotPositiveDefiniteError", "FpiDivergenceError",
    "QuadratureDomainError", "TrainingDivergedError",
    "VindModel", "init_model",
    "fpi_map", "fpi_solve", "laplace_posterior", "posterior_from_solve",
    "sample_posterior", "contraction_bound",
    "joint_logdensity", "elbo_estimate",
    "TrainConfig", "TrainState", "EpochRecord", "init_state", "train_epoch", "fit",
    "TrialSet", "EvalReport", "lorenz_generate", "synth_observations",
    "assign_split_tags", "split", "forward_interpolate", "mse_k", "r2_k",
    "evaluate_forecasts", "save_trialset", "load_trialset",
    "toy_intractability_demo",
    "save_model", "load_model", "save_checkpoint", "load_checkpoint",
]
