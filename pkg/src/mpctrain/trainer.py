"""Synthetic regression tasks and minibatch SGD with horizon-``h`` gradients."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DivergenceError, InvalidInputError, UndefinedRateError
from .gradients import BlockGrouping, horizon_gradient, loco_gradient
from .network import Network, forward, state_loss
from .numerics import make_rng


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.inputs.ndim != 2 or self.labels.ndim != 2:
            raise InvalidInputError("inputs and labels must be 2-D row batches")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("inputs and labels differ in sample count")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.labels))):
            raise InvalidInputError("dataset contains non-finite values")

    def __len__(self):
        return self.inputs.shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.inputs, self.labels):
            h.update(str(a.shape).encode())
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def pad_features(a: np.ndarray, width: int) -> np.ndarray:
    """Right-pad rows with zeros up to ``width`` columns."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[1] > width:
        raise InvalidInputError(f"cannot pad {a.shape[1]} features down to {width}")
    if a.shape[1] == width:
        return a
    return np.hstack([a, np.zeros((a.shape[0], width - a.shape[1]))])


def gen_linear_dataset(n: int, samples: int, seed: int) -> Dataset:
    """``y = W0 x`` with ``W0`` and ``x`` entries of variance ``n**-0.5``."""
    if n <= 0 or samples <= 0:
        raise InvalidInputError("n and samples must be positive")
    rng = make_rng(seed)
    std = n ** -0.25
    W0 = std * rng.standard_normal((n, n))
    X = std * rng.standard_normal((samples, n))
    return Dataset(X, X @ W0.T, {"kind": "linear", "n": n, "samples": samples, "seed": int(seed),
                                 "teacher": W0.tolist()})


def trig_targets(x, eps=None) -> np.ndarray:
    """``(1 + eps) * (cos pi x, sin pi x, cos 2 pi x, sin 2 pi x)`` per sample."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.stack([np.cos(np.pi * x), np.sin(np.pi * x), np.cos(2 * np.pi * x), np.sin(2 * np.pi * x)], axis=1)
    if eps is not None:
        y = y * (1.0 + np.asarray(eps, dtype=np.float64).reshape(-1, 1))
    return y


def gen_trig_dataset(samples: int, seed: int, width: int | None = None, noise_std: float = 0.03) -> Dataset:
    """Scalar ``x ~ U[-2, 2]`` with noisy trigonometric targets.

    With ``width`` set, inputs and labels are zero-padded to that many
    features so every network state can be compared against the label; the
    padding is recorded in ``meta``.
    """
    if samples <= 0:
        raise InvalidInputError("samples must be positive")
    rng = make_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=samples)
    eps = noise_std * rng.standard_normal(samples) if noise_std > 0 else None
    X = x[:, None]
    Y = trig_targets(x, eps)
    meta = {"kind": "trig", "samples": samples, "seed": int(seed), "noise_std": noise_std,
            "input_features": 1, "label_features": 4}
    if width is not None:
        X = pad_features(X, width)
        Y = pad_features(Y, width)
        meta.update(width=width, input_pad=width - 1, label_pad=width - 4)
    return Dataset(X, Y, meta)


def whiten(dataset: Dataset) -> Dataset:
    """Map inputs so their uncentered covariance ``X^T X / N`` is the identity."""
    X = dataset.inputs
    cov = X.T @ X / X.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    tol = evals.max() * X.shape[1] * np.finfo(float).eps if evals.size else 0.0
    rank = int(np.sum(evals > tol))
    if rank < X.shape[1]:
        raise InvalidInputError(f"input covariance is singular: rank {rank} < {X.shape[1]}")
    transform = evecs @ np.diag(evals ** -0.5) @ evecs.T
    meta = dict(dataset.meta, whitening=transform.tolist())
    return Dataset(X @ transform, dataset.labels.copy(), meta)


def cross_covariance(dataset: Dataset) -> np.ndarray:
    """``Phi`` with ``Phi[i, j] = mean(y_i x_j)``."""
    return dataset.labels.T @ dataset.inputs / len(dataset)


@dataclass
class TrainConfig:
    algorithm: str = "mpc"
    horizon: int | None = None
    stages: int | None = None
    learning_rate: float = 0.01
    batch_size: int = 100
    epochs: int = 40
    seed: int = 0
    lr_decay: float = 0.9

    def validate(self, T: int) -> None:
        if self.algorithm == "mpc":
            h = T if self.horizon is None else self.horizon
            if int(h) != h or not 1 <= h <= T:
                raise InvalidInputError(f"horizon must be in [1, {T}], got {h}")
        elif self.algorithm == "loco":
            if self.stages is None or not 1 <= self.stages <= T:
                raise InvalidInputError(f"loco needs 1 <= stages <= {T}")
        else:
            raise InvalidInputError(f"unknown algorithm {self.algorithm!r}")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidInputError("learning rate must be >= 0, batch size >= 1, epochs >= 0")
        if not 0 < self.lr_decay <= 1:
            raise InvalidInputError("lr_decay must lie in (0, 1]")

    def label(self, T: int) -> str:
        if self.algorithm == "loco":
            return f"loco:{self.stages}"
        return f"mpc:{T if self.horizon is None else self.horizon}"


@dataclass
class TrainRecord:
    losses: list[float]
    learning_rates: list[float]
    config: TrainConfig
    status: str = "ok"
    network: Network | None = None

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    def to_dict(self) -> dict:
        return {"losses": self.losses, "learning_rates": self.learning_rates,
                "config": asdict(self.config), "status": self.status}


def dataset_loss(net: Network, X, Y) -> float:
    return state_loss(forward(net, X)[net.T], Y)


def train_sgd(net: Network, dataset: Dataset, config: TrainConfig, *, raise_on_divergence: bool = False,
              on_epoch=None) -> TrainRecord:
    """Minibatch SGD where each step uses horizon-``h`` (or grouped-stage) gradients.

    ``losses[0]`` is the full-dataset loss before training; ``losses[k]`` the
    full-dataset loss after epoch ``k``. Whenever an epoch ends with a higher
    loss than the previous one, the learning rate is multiplied by
    ``lr_decay``. The input network is not modified; the trained copy is
    returned on the record. A non-finite loss stops training with status
    ``"diverged"``. ``on_epoch(epoch, network)`` is called after the initial
    evaluation (epoch 0) and after every completed epoch.
    """
    # overflow on the way to a non-finite loss is reported through the status
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(net, dataset, config, raise_on_divergence, on_epoch)


def _train(net, dataset, config, raise_on_divergence, on_epoch) -> TrainRecord:
    T = net.T
    config.validate(T)
    X, Y = dataset.inputs, dataset.labels
    if X.shape[1] != net.width or Y.shape[1] != net.width:
        raise InvalidInputError(f"dataset widths {X.shape[1]}/{Y.shape[1]} do not match network width {net.width}")
    work = net.copy()
    grouping = BlockGrouping.even(T, config.stages) if config.algorithm == "loco" else None
    h = T if config.horizon is None else int(config.horizon)
    rng = make_rng(config.seed)
    lr = float(config.learning_rate)
    losses = [dataset_loss(work, X, Y)]
    lrs = [lr]
    record = TrainRecord(losses, lrs, config, "ok", work)
    if on_epoch is not None:
        on_epoch(0, work)
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = X[idx], Y[idx]
            if grouping is None:
                g = horizon_gradient(work, xb, yb, h)
            else:
                g = loco_gradient(work, grouping, xb, yb)
            for block, gb in zip(work.blocks, g.per_block):
                block.params -= lr * gb
        loss = dataset_loss(work, X, Y)
        if not math.isfinite(loss):
            losses.append(loss)
            lrs.append(lr)
            record.status = "diverged"
            if raise_on_divergence:
                raise DivergenceError(f"loss became {loss} at epoch {len(losses) - 1}", record)
            return record
        if loss > losses[-1]:
            lr *= config.lr_decay
        losses.append(loss)
        lrs.append(lr)
        if on_epoch is not None:
            on_epoch(epoch, work)
    return record


def loss_rate(record_h: TrainRecord, record_T: TrainRecord, tau: int | None = None) -> float:
    """``ln(J_h(tau)/J0) / ln(J_T(tau)/J0)``; ``tau`` defaults to the last common epoch."""
    if tau is None:
        tau = min(len(record_h.losses), len(record_T.losses)) - 1
    if not 0 <= tau < min(len(record_h.losses), len(record_T.losses)):
        raise InvalidInputError(f"epoch {tau} not recorded")
    # both runs normally start from the same initialisation, so J0 agrees
    j0h, j0T = record_h.losses[0], record_T.losses[0]
    jh, jT = record_h.losses[tau], record_T.losses[tau]
    if min(j0h, j0T, jh, jT) <= 0:
        raise InvalidInputError("loss rate needs positive losses")
    den = math.log(jT / j0T)
    if den == 0:
        raise UndefinedRateError("reference run made no progress")
    return math.log(jh / j0h) / den
