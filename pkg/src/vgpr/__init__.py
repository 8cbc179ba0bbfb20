"""Scaled-Vecchia Gaussian process regression with penalized variable selection."""

from .data import Dataset, SimulationSpec, load_csv, simulate, standardize, train_oos_split
from .kernel import Hyperparameters, covariance_block, kernel_eval
from .ordering import VecchiaPlan, build_plan
from .predict import predict
from .selection import VGPRConfig, forward_backward, sr_gradient_screen, vgpr_path
from .vecchia import MiniBatch, vecchia_fim, vecchia_grad, vecchia_loglik

__all__ = [
    "Dataset", "SimulationSpec", "load_csv", "simulate", "standardize", "train_oos_split",
    "Hyperparameters", "covariance_block", "kernel_eval", "VecchiaPlan", "build_plan",
    "predict", "VGPRConfig", "forward_backward", "sr_gradient_screen", "vgpr_path",
    "MiniBatch", "vecchia_fim", "vecchia_grad", "vecchia_loglik",
]

__version__ = "0.1.0"
