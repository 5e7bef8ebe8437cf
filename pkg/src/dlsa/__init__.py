"""Deep least squares alignment for unsupervised domain adaptation."""

from .data import LabeledDataset, ShiftSpec, generate_shifted_pair, load_feature_csv, save_feature_csv
from .least_squares import LineFit, fit_line, fit_line_per_class, split_latent
from .losses import angle, conditional_loss, intercept_diff, marginal_loss, total_objective
from .network import MlpParams, init_params
from .trainer import TrainConfig, compute_diagnostics, evaluate, run_training

__version__ = "0.1.0"

__all__ = [
    "LabeledDataset",
    "LineFit",
    "MlpParams",
    "ShiftSpec",
    "TrainConfig",
    "angle",
    "compute_diagnostics",
    "conditional_loss",
    "evaluate",
    "fit_line",
    "fit_line_per_class",
    "generate_shifted_pair",
    "init_params",
    "intercept_diff",
    "load_feature_csv",
    "marginal_loss",
    "run_training",
    "save_feature_csv",
    "split_latent",
    "total_objective",
]
