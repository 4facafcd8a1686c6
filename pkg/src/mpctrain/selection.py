"""Objective-based horizon selection.

Cosine similarity to the full gradient and memory use are measured on a few
horizons, fitted by a cubic and a line respectively, and every horizon
``1..T`` is then scored with ``r_hat(h) = clamp(cos_fit(h), -1, 1)**2``.

Both objectives are minimised:

``accuracy_constraint``
    cheapest ``h`` (by ``cost(mem_fit(h))``) subject to ``r_hat(h) >= 1 - epsilon``;
``weighted``
    ``-r_hat(h) + lambda * cost(mem_fit(h))``.

Ties resolve to the smaller horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateInputError, InvalidInputError
from .gradients import horizon_gradient
from .memory import MemoryModel, memory_estimate
from .network import Network, forward
from .numerics import PolyModel, cosine_similarity, polyeval, polyfit

COS_DEGREE = 3
MEM_DEGREE = 1


@dataclass(frozen=True)
class CostFn:
    kind: str = "linear"
    unit_cost: float = 1.0
    node_memory: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "ladder"):
            raise InvalidInputError(f"cost kind must be 'linear' or 'ladder', got {self.kind!r}")
        if not (self.unit_cost > 0 and self.node_memory > 0):
            raise InvalidInputError("unit cost and node memory must be positive")


@dataclass(frozen=True)
class Objective:
    kind: str
    epsilon: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.kind == "accuracy_constraint":
            if self.epsilon is None or not 0 < self.epsilon < 1:
                raise InvalidInputError("accuracy constraint needs 0 < epsilon < 1")
        elif self.kind == "weighted":
            if self.lam is None or not self.lam > 0:
                raise InvalidInputError("weighted objective needs lambda > 0")
        else:
            raise InvalidInputError(f"unknown objective kind {self.kind!r}")

    @classmethod
    def accuracy_constraint(cls, epsilon: float) -> "Objective":
        return cls("accuracy_constraint", epsilon=epsilon)

    @classmethod
    def weighted(cls, lam: float) -> "Objective":
        return cls("weighted", lam=lam)


def cost_value(costfn: CostFn, M: float) -> float:
    """``c*M/M0`` (linear) or ``c*ceil(M/M0)`` (ladder)."""
    if M < 0:
        raise InvalidInputError("memory must be non-negative")
    ratio = M / costfn.node_memory
    if costfn.kind == "ladder":
        return costfn.unit_cost * math.ceil(ratio)
    return costfn.unit_cost * ratio


@dataclass
class HorizonProfile:
    T: int
    H: list[int]
    measured_cos: dict[int, float]
    measured_mem: dict[int, float]
    cos_fit: PolyModel
    mem_fit: PolyModel
    skipped_batches: int = 0

    def fitted_memory(self, h) -> float:
        return polyeval(self.mem_fit, h)


def _check_subset(H, T: int) -> list[int]:
    H = sorted({int(h) for h in H})
    if any(not 1 <= h <= T for h in H):
        raise InvalidInputError(f"measured horizons must lie in [1, {T}], got {H}")
    return H


def fit_profile(T: int, measured_cos: dict, measured_mem: dict, skipped_batches: int = 0) -> HorizonProfile:
    """Fit the cubic cosine model and the affine memory model to measurements."""
    H = _check_subset(measured_cos, T)
    Hm = _check_subset(measured_mem, T)
    if len(H) < COS_DEGREE + 1:
        raise InvalidInputError(f"cosine fit needs {COS_DEGREE + 1} horizons, got {len(H)}")
    if len(Hm) < MEM_DEGREE + 1:
        raise InvalidInputError(f"memory fit needs {MEM_DEGREE + 1} horizons, got {len(Hm)}")
    cos = {h: float(measured_cos[h]) for h in H}
    if any(not -1 <= v <= 1 for v in cos.values()):
        raise InvalidInputError("measured cosines must lie in [-1, 1]")
    mem = {h: float(measured_mem[h]) for h in Hm}
    return HorizonProfile(
        T, H, cos, mem,
        polyfit(H, [cos[h] for h in H], COS_DEGREE),
        polyfit(Hm, [mem[h] for h in Hm], MEM_DEGREE),
        skipped_batches,
    )


def default_subset(T: int) -> list[int]:
    """``{1, ceil(T/4), ceil(T/2), ceil(3T/4), T}`` (deduplicated)."""
    return sorted({1, math.ceil(T / 4), math.ceil(T / 2), math.ceil(3 * T / 4), T})


def build_profile(net: Network, data, H=None, batches: int = 1, mem_model: MemoryModel | None = None) -> HorizonProfile:
    """Measure cosines per batch and memory per horizon, then fit.

    Parameters
    ----------
    net : Network
    data : tuple of (X, Y)
        Split into ``batches`` contiguous chunks.
    H : sequence of int, optional
        Measured horizons; defaults to :func:`default_subset`.
    batches : int
    mem_model : MemoryModel, optional
        Defaults to the eager model of ``net`` with no fixed overhead.
    """
    T = net.T
    H = _check_subset(default_subset(T) if H is None else H, T)
    if batches < 1:
        raise InvalidInputError("batches must be >= 1")
    X, Y = (np.asarray(a, dtype=np.float64) for a in data)
    if X.shape[0] < batches:
        raise InvalidInputError(f"{X.shape[0]} samples cannot form {batches} batches")
    mem_model = MemoryModel.for_network(net) if mem_model is None else mem_model
    sums = {h: 0.0 for h in H}
    used = 0
    skipped = 0
    for xb, yb in zip(np.array_split(X, batches), np.array_split(Y, batches)):
        acts = forward(net, xb)
        gT = horizon_gradient(net, xb, yb, T, acts=acts).flat()
        try:
            cos = {h: cosine_similarity(horizon_gradient(net, xb, yb, h, acts=acts).flat(), gT) for h in H}
        except DegenerateInputError:
            skipped += 1
            continue
        for h in H:
            sums[h] += cos[h]
        used += 1
    if used == 0:
        raise DegenerateInputError("every batch produced a zero gradient")
    measured_cos = {h: sums[h] / used for h in H}
    measured_mem = {h: memory_estimate(mem_model, h, T) for h in H}
    return fit_profile(T, measured_cos, measured_mem, skipped)


def estimate_rate(profile: HorizonProfile, h) -> float:
    """``clamp(cos_fit(h), -1, 1)**2``."""
    if not 1 <= h <= profile.T:
        raise InvalidInputError(f"horizon {h} outside [1, {profile.T}]")
    c = min(1.0, max(-1.0, polyeval(profile.cos_fit, h)))
    return c * c


@dataclass
class SelectionResult:
    horizon: int | None
    feasible: bool
    objective: Objective
    costfn: CostFn
    table: list[dict] = field(default_factory=list)

    @property
    def value(self) -> float | None:
        if self.horizon is None:
            return None
        return self.table[self.horizon - 1]["objective_value"]


def horizon_table(profile: HorizonProfile, objective: Objective, costfn: CostFn) -> list[dict]:
    """Per-horizon diagnostics for ``h = 1..T``."""
    hs = np.arange(1, profile.T + 1, dtype=np.float64)
    cos_hat = polyeval(profile.cos_fit, hs)
    r_hat = np.clip(cos_hat, -1.0, 1.0) ** 2
    mem_hat = polyeval(profile.mem_fit, hs)
    rows = []
    for i, h in enumerate(range(1, profile.T + 1)):
        cost = cost_value(costfn, max(float(mem_hat[i]), 0.0))
        if objective.kind == "weighted":
            feasible = True
            value = -float(r_hat[i]) + objective.lam * cost
        else:
            feasible = bool(r_hat[i] >= 1.0 - objective.epsilon)
            value = cost
        rows.append({
            "h": h,
            "measured_cos": profile.measured_cos.get(h),
            "fitted_cos": float(cos_hat[i]),
            "measured_mem": profile.measured_mem.get(h),
            "fitted_mem": float(mem_hat[i]),
            "r_hat": float(r_hat[i]),
            "cost": cost,
            "objective_value": value,
            "feasible": feasible,
        })
    return rows


def select_horizon(profile: HorizonProfile, objective: Objective, costfn: CostFn) -> SelectionResult:
    """Exhaustive scan over ``h = 1..T``; infeasibility is reported, not raised."""
    table = horizon_table(profile, objective, costfn)
    values = np.array([row["objective_value"] for row in table])
    ok = np.array([row["feasible"] for row in table])
    if not ok.any():
        return SelectionResult(None, False, objective, costfn, table)
    masked = np.where(ok, values, np.inf)
    # argmin returns the first minimiser, i.e. the smallest h
    return SelectionResult(int(np.argmin(masked)) + 1, True, objective, costfn, table)


def brute_force_horizon(profile: HorizonProfile, objective: Objective, costfn: CostFn) -> int | None:
    """Reference selection written as a plain loop, kept independent of :func:`select_horizon`."""
    best_h, best_v = None, None
    for h in range(1, profile.T + 1):
        c = polyeval(profile.cos_fit, float(h))
        c = 1.0 if c > 1.0 else (-1.0 if c < -1.0 else c)
        r = c * c
        m = polyeval(profile.mem_fit, float(h))
        cost = cost_value(costfn, m if m > 0 else 0.0)
        if objective.kind == "accuracy_constraint":
            if r < 1.0 - objective.epsilon:
                continue
            v = cost
        else:
            v = objective.lam * cost - r
        if best_v is None or v < best_v:
            best_h, best_v = h, v
    return best_h


def relative_performance(objective_values: dict) -> dict:
    """Min-max normalise objective values; ``None``/NaN marks infeasible (mapped to 1.5)."""
    finite = {k: float(v) for k, v in objective_values.items() if v is not None and not math.isnan(v)}
    out = {}
    lo = min(finite.values()) if finite else 0.0
    hi = max(finite.values()) if finite else 0.0
    for k, v in objective_values.items():
        if k not in finite:
            out[k] = 1.5
        elif hi == lo:
            out[k] = 0.0
        else:
            out[k] = (finite[k] - lo) / (hi - lo)
    return out
