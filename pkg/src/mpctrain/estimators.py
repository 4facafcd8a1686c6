"""scikit-learn compatible wrappers.

:class:`MPCRegressor` trains a block network with horizon-``h`` gradients
through the usual ``fit``/``predict`` protocol; :class:`HorizonSelector`
runs the horizon-selection procedure in ``fit`` and exposes the chosen
horizon as ``horizon_``. Both follow estimator conventions (hyperparameters
in ``__init__``, learned state in trailing-underscore attributes), so they
work with ``clone``, ``get_params`` and pipelines.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import InvalidInputError
from .memory import MemoryModel
from .network import forward, linear_residual_net, residual_mlp
from .numerics import make_rng
from .selection import CostFn, Objective, build_profile, default_subset, select_horizon
from .trainer import Dataset, TrainConfig, pad_features, train_sgd

ARCHITECTURES = {"residual_mlp": residual_mlp, "linear_residual": linear_residual_net}


def _validate_width(n_features: int, n_targets: int, width: int):
    if max(n_features, n_targets) > width:
        raise InvalidInputError(
            f"width {width} is smaller than the data ({n_features} features, {n_targets} targets)"
        )


def _build_network(architecture, n_blocks, width, random_state):
    try:
        builder = ARCHITECTURES[architecture]
    except KeyError:
        raise InvalidInputError(f"unknown architecture {architecture!r}") from None
    return builder(n_blocks, width, make_rng(random_state))


class MPCRegressor(RegressorMixin, BaseEstimator):
    """Block network regressor trained with truncated-horizon gradients.

    Inputs and targets are zero-padded to ``width`` so every intermediate
    state can be scored against the target; predictions are cut back to the
    target dimension.

    Parameters
    ----------
    architecture : {"residual_mlp", "linear_residual"}
    n_blocks : int
        Number of blocks ``T``.
    width : int
    horizon : int or None
        Look-ahead horizon; ``None`` means ``T`` (back-propagation), ``1`` is
        layer-local training.
    algorithm : {"mpc", "loco"}
        ``"loco"`` uses horizon-2 stage gradients over ``loco_stages`` stages.
    loco_stages : int
    learning_rate, batch_size, epochs, lr_decay :
        SGD settings; the rate is multiplied by ``lr_decay`` after any epoch
        whose loss went up.
    random_state : int
        Seeds both initialisation and minibatch order.
    """

    def __init__(self, architecture="residual_mlp", n_blocks=15, width=10, horizon=None,
                 algorithm="mpc", loco_stages=5, learning_rate=0.01, batch_size=100,
                 epochs=40, lr_decay=0.9, random_state=0):
        self.architecture = architecture
        self.n_blocks = n_blocks
        self.width = width
        self.horizon = horizon
        self.algorithm = algorithm
        self.loco_stages = loco_stages
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_decay = lr_decay
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            algorithm=self.algorithm,
            horizon=self.horizon if self.algorithm == "mpc" else None,
            stages=self.loco_stages if self.algorithm == "loco" else None,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
            lr_decay=self.lr_decay,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._y_1d = y.ndim == 1
        Y = y.reshape(-1, 1) if self._y_1d else y
        _validate_width(X.shape[1], Y.shape[1], self.width)
        self.n_features_in_ = X.shape[1]
        self.n_targets_ = Y.shape[1]
        net = _build_network(self.architecture, self.n_blocks, self.width, self.random_state)
        data = Dataset(pad_features(X, self.width), pad_features(Y, self.width))
        record = train_sgd(net, data, self._train_config())
        self.network_ = record.network
        self.loss_curve_ = list(record.losses)
        self.learning_rates_ = list(record.learning_rates)
        self.status_ = record.status
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = forward(self.network_, pad_features(X, self.width))[self.network_.T][:, :self.n_targets_]
        return out.ravel() if self._y_1d else out


class HorizonSelector(BaseEstimator):
    """Pick a training horizon from measured gradient alignment and memory.

    ``fit(X, y)`` builds a freshly initialised network (same construction as
    :class:`MPCRegressor`), measures the cosine between horizon-``h`` and
    full gradients on ``batches`` chunks of the data for every ``h`` in
    ``horizons``, fits the cubic and affine models and scans ``h = 1..T``.

    Parameters
    ----------
    objective : {"weighted", "accuracy_constraint"}
    lam : float
        Weight on cost for the weighted objective.
    epsilon : float
        Allowed rate shortfall for the accuracy constraint.
    cost : {"linear", "ladder"}
    unit_cost : float
    node_memory : float or None
        Memory of one node; ``None`` uses ``node_memory_fraction`` times the
        largest measured memory.
    node_memory_fraction : float
    memory_mode : {"eager", "static"}
    horizons : sequence of int or None
    batches : int

    Attributes
    ----------
    horizon_ : int or None
        Selected horizon, ``None`` when the constraint cannot be met.
    feasible_ : bool
    profile_ : HorizonProfile
    result_ : SelectionResult
    """

    def __init__(self, objective="weighted", lam=0.5, epsilon=0.1, cost="linear", unit_cost=1.0,
                 node_memory=None, node_memory_fraction=1.0, memory_mode="eager", horizons=None,
                 batches=4, architecture="residual_mlp", n_blocks=15, width=10, random_state=0):
        self.objective = objective
        self.lam = lam
        self.epsilon = epsilon
        self.cost = cost
        self.unit_cost = unit_cost
        self.node_memory = node_memory
        self.node_memory_fraction = node_memory_fraction
        self.memory_mode = memory_mode
        self.horizons = horizons
        self.batches = batches
        self.architecture = architecture
        self.n_blocks = n_blocks
        self.width = width
        self.random_state = random_state

    def _objective(self):
        if self.objective == "weighted":
            return Objective.weighted(self.lam)
        return Objective.accuracy_constraint(self.epsilon)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        Y = y.reshape(-1, 1) if y.ndim == 1 else y
        _validate_width(X.shape[1], Y.shape[1], self.width)
        self.n_features_in_ = X.shape[1]
        net = _build_network(self.architecture, self.n_blocks, self.width, self.random_state)
        H = default_subset(net.T) if self.horizons is None else list(self.horizons)
        mem_model = MemoryModel.for_network(net, self.memory_mode)
        self.profile_ = build_profile(net, (pad_features(X, self.width), pad_features(Y, self.width)),
                                      H, self.batches, mem_model)
        node = self.node_memory
        if node is None:
            node = self.node_memory_fraction * max(self.profile_.measured_mem.values())
        self.cost_fn_ = CostFn(self.cost, self.unit_cost, node)
        self.result_ = select_horizon(self.profile_, self._objective(), self.cost_fn_)
        self.horizon_ = self.result_.horizon
        self.feasible_ = self.result_.feasible
        return self
