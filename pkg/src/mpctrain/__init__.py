"""Truncated-horizon training for block-structured networks.

Horizon ``h`` interpolates between layer-local training (``h = 1``) and
back-propagation (``h = T``). The package provides the gradient engine, an
analytic oracle for deep linear chains, memory accounting, horizon selection
and scikit-learn style estimators.
"""

__version__ = "0.1.0"

from .gradients import (
    BlockGrouping, HorizonGradient, finite_diff_gradient, gradient_angle, horizon_gradient,
    local_gradient, loco_gradient, rescaled_deviation,
)
from .memory import MemoryModel, memory_estimate
from .network import Block, Network, block_apply, block_vjp, forward, terminal_loss, trajectory_loss
from .selection import CostFn, Objective, build_profile, estimate_rate, relative_performance, select_horizon
from .trainer import Dataset, TrainConfig, loss_rate, train_sgd
from .estimators import HorizonSelector, MPCRegressor

__all__ = [
    "Block", "BlockGrouping", "CostFn", "Dataset", "HorizonGradient", "HorizonSelector", "MPCRegressor",
    "MemoryModel", "Network", "Objective", "TrainConfig", "block_apply", "block_vjp", "build_profile",
    "estimate_rate", "finite_diff_gradient", "forward", "gradient_angle", "horizon_gradient",
    "local_gradient", "loco_gradient", "loss_rate", "memory_estimate", "relative_performance",
    "rescaled_deviation", "select_horizon", "terminal_loss", "train_sgd", "trajectory_loss",
]
