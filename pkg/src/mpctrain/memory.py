"""Activation-storage accounting for horizon-``h`` training.

Memory is counted in abstract activation units: block ``t`` stores its input
state, of size ``per_block_activation_units[t]``.

``eager``
    Storage is released after each reverse window, so the peak is the largest
    window of ``h`` consecutive block inputs plus a fixed overhead. With equal
    widths this is exactly ``a*h + b``.
``static``
    The whole graph is kept: block ``s`` is stored once for every window that
    passes through it, ``sum_t sum_{s=t}^{min(t+h,T)-1} n_s`` in total, whose
    leading term grows as ``h*(T-h+1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

MODES = ("eager", "static")


@dataclass(frozen=True)
class MemoryModel:
    mode: str
    per_block_activation_units: tuple[float, ...]
    fixed_overhead: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"memory mode must be one of {MODES}, got {self.mode!r}")
        units = tuple(float(u) for u in self.per_block_activation_units)
        if not units or any(u <= 0 for u in units):
            raise InvalidInputError("activation sizes must be positive")
        if self.fixed_overhead < 0:
            raise InvalidInputError("fixed overhead must be non-negative")
        object.__setattr__(self, "per_block_activation_units", units)

    @classmethod
    def for_network(cls, net, mode: str = "eager", fixed_overhead: float = 0.0) -> "MemoryModel":
        return cls(mode, tuple(net.state_dims[:-1]), fixed_overhead)

    @property
    def T(self) -> int:
        return len(self.per_block_activation_units)


def memory_estimate(model: MemoryModel, h: int, T: int | None = None) -> float:
    """Activation storage for horizon ``h``; see the module docstring for the two modes."""
    T = model.T if T is None else T
    if T != model.T:
        raise InvalidInputError(f"model describes {model.T} blocks, asked for T={T}")
    if isinstance(h, bool) or int(h) != h or not 1 <= h <= T:
        raise InvalidInputError(f"horizon must be in [1, {T}], got {h!r}")
    h = int(h)
    units = np.asarray(model.per_block_activation_units)
    prefix = np.concatenate([[0.0], np.cumsum(units)])
    ends = np.minimum(np.arange(T) + h, T)
    windows = prefix[ends] - prefix[:T]
    if model.mode == "eager":
        return model.fixed_overhead + float(windows.max())
    return model.fixed_overhead + float(windows.sum())


def static_leading_term(h: int, T: int) -> int:
    """``h * (T - h + 1)``, the growth law of the static-mode total."""
    return h * (T - h + 1)


def loco_memory(model: MemoryModel, boundaries) -> float:
    """Storage for grouped-stage training, whose widest window spans two stages."""
    b = [int(v) for v in boundaries]
    if b[0] != 0 or b[-1] != model.T or any(lo >= hi for lo, hi in zip(b, b[1:])):
        raise InvalidInputError(f"invalid stage boundaries {b} for T={model.T}")
    units = np.asarray(model.per_block_activation_units)
    S = len(b) - 1
    windows = [float(units[b[s]:b[min(s + 2, S)]].sum()) for s in range(S)]
    if model.mode == "eager":
        return model.fixed_overhead + max(windows)
    return model.fixed_overhead + sum(windows)
