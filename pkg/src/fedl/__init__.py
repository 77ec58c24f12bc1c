"""Flexible evidential deep learning: the flexible Dirichlet distribution,
its closed-form training objective and uncertainty measures, a NumPy MLP
predictor, and the evaluation harness."""

from .fd import (
    DirichletParams,
    FDParams,
    fd_density,
    fd_log_density,
    fd_marginal_density,
    fd_mean,
    fd_mode_separation,
    fd_posterior,
    fd_sample,
    fd_variance,
    predictive_decomposition,
    sl_opinions,
)
from .network import FEDLModel, NetworkConfig
from .objective import loss, loss_gradient
from .trainer import TrainConfig, train
from .uncertainty import edl_uncertainties, normalize_batch, uncertainties

__version__ = "0.1.0"
