"""Truncated-horizon gradients.

For horizon ``h`` the gradient of block ``t`` is the gradient of the loss on
state ``x(min(t + h, T))`` with respect to ``u(t)``: ``h = 1`` gives the
layer-local (forward-forward) gradient, ``h = T`` the back-propagation
gradient. The constant ``-L(x(t))`` part of the windowed objective does not
depend on ``u(t)`` and is never evaluated.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, InvalidInputError
from .network import Activations, Network, _as_batch, block_apply, block_vjp, forward, state_loss, state_loss_grad
from .numerics import cosine_similarity


@dataclass
class HorizonGradient:
    horizon: int
    per_block: list[np.ndarray]
    batch_id: object = None

    def flat(self) -> np.ndarray:
        return np.concatenate(self.per_block)

    def __len__(self):
        return len(self.per_block)


def _check_horizon(net: Network, h: int) -> int:
    if isinstance(h, bool) or int(h) != h or not 1 <= h <= net.T:
        raise InvalidInputError(f"horizon must be an integer in [1, {net.T}], got {h!r}")
    return int(h)


def _sweep(net: Network, acts: Activations, y: np.ndarray, end: int, targets) -> dict[int, np.ndarray]:
    """Back-propagate ``L(x(end))`` from block ``end - 1`` down to ``min(targets)``.

    Returns the parameter gradient of each block in ``targets``.
    """
    lowest = min(targets)
    upstream = state_loss_grad(acts[end], y)
    out = {}
    for s in range(end - 1, lowest - 1, -1):
        upstream, grad_u = block_vjp(net.blocks[s], acts[s], upstream)
        if s in targets:
            out[s] = grad_u
    return out


def window_gradient(net: Network, acts: Activations, y, t: int, end: int) -> np.ndarray:
    """``d L(x(end)) / d u(t)`` for ``t < end <= T``."""
    if not 0 <= t < end <= net.T:
        raise InvalidInputError(f"need 0 <= t < end <= T, got t={t}, end={end}")
    y = _as_batch(y, net.width, "y")
    return _sweep(net, acts, y, end, {t})[t]


def horizon_gradient(net: Network, x0, y, h: int, *, acts: Activations | None = None, batch_id=None) -> HorizonGradient:
    """Per-block gradients ``g_h(u(t))`` from a single forward pass.

    Blocks that share a window end (all ``t >= T - h`` end at ``T``) share one
    reverse sweep; every other block gets its own sweep of length ``h``.
    """
    h = _check_horizon(net, h)
    T = net.T
    y = _as_batch(y, net.width, "y")
    if acts is None:
        acts = forward(net, x0)
    by_end = defaultdict(set)
    for t in range(T):
        by_end[min(t + h, T)].add(t)
    grads: dict[int, np.ndarray] = {}
    for end in sorted(by_end):
        grads.update(_sweep(net, acts, y, end, by_end[end]))
    return HorizonGradient(h, [grads[t] for t in range(T)], batch_id)


def local_gradient(net: Network, x0, y, *, acts: Activations | None = None) -> HorizonGradient:
    """Layer-local gradients ``d L(x(t+1)) / d u(t)``; one VJP per block."""
    y = _as_batch(y, net.width, "y")
    if acts is None:
        acts = forward(net, x0)
    per_block = []
    for t, block in enumerate(net.blocks):
        _, g = block_vjp(block, acts[t], state_loss_grad(acts[t + 1], y))
        per_block.append(g)
    return HorizonGradient(1, per_block)


def backprop_gradient(net: Network, x0, y, *, acts: Activations | None = None) -> HorizonGradient:
    """Plain reverse-mode gradient of ``L(x(T))``."""
    return horizon_gradient(net, x0, y, net.T, acts=acts)


# -- grouped stages ---------------------------------------------------------

@dataclass(frozen=True)
class BlockGrouping:
    """Stage boundaries ``0 = b_0 < b_1 < ... < b_S = T``; stage ``s`` is ``[b_s, b_{s+1})``."""

    boundaries: tuple[int, ...]

    def validate(self, T: int) -> None:
        b = self.boundaries
        if len(b) < 2 or b[0] != 0 or b[-1] != T:
            raise InvalidInputError(f"grouping must start at 0 and end at T={T}, got {b}")
        if any(lo >= hi for lo, hi in zip(b, b[1:])):
            raise InvalidInputError(f"boundaries must be strictly increasing, got {b}")

    @property
    def n_stages(self) -> int:
        return len(self.boundaries) - 1

    @classmethod
    def even(cls, T: int, n_stages: int) -> "BlockGrouping":
        """Split ``T`` blocks into ``n_stages`` contiguous stages of near-equal size."""
        if not 1 <= n_stages <= T:
            raise InvalidInputError(f"cannot split {T} blocks into {n_stages} stages")
        return cls(tuple(int(round(i * T / n_stages)) for i in range(n_stages + 1)))


def loco_gradient(net: Network, grouping: BlockGrouping, x0, y, *, acts: Activations | None = None) -> HorizonGradient:
    """Horizon-2 gradients over stages, counting both windows a stage belongs to.

    Each parameter in stage ``s`` gets ``d L(x_{s+1}) + d L(x_{s+2})`` where
    ``x_k`` is the state after stage ``k - 1``; the final stage only has the
    terminal term. A single stage reduces to back-propagation.
    """
    grouping.validate(net.T)
    y = _as_batch(y, net.width, "y")
    if acts is None:
        acts = forward(net, x0)
    b = grouping.boundaries
    S = grouping.n_stages
    grads = [np.zeros(blk.n_params) for blk in net.blocks]
    for s in range(S):
        members = set(range(b[s], b[s + 1]))
        for end_stage in (s + 1, s + 2):
            if end_stage > S:
                continue
            for t, g in _sweep(net, acts, y, b[end_stage], members).items():
                grads[t] += g
    return HorizonGradient(2, grads, batch_id="loco")


# -- oracles and diagnostics -----------------------------------------------

def finite_diff_gradient(net: Network, x0, y, t: int, eps: float = 1e-5, end: int | None = None) -> np.ndarray:
    """Central differences of ``L(x(end))`` (default ``end = T``) w.r.t. ``u(t)``."""
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    end = net.T if end is None else end
    if not 0 <= t < end <= net.T:
        raise InvalidInputError(f"need 0 <= t < end <= T, got t={t}, end={end}")
    y = _as_batch(y, net.width, "y")
    work = net.copy()
    block = work.blocks[t]
    base = block.params.copy()
    grad = np.empty_like(base)

    # states before block t do not depend on u(t), so start each pass there
    x_t = forward(work, x0)[t]

    def loss():
        x = x_t
        for blk in work.blocks[t:end]:
            x = block_apply(blk, x)
        return state_loss(x, y)

    for i in range(base.size):
        block.params = base.copy()
        block.params[i] += eps
        up = loss()
        block.params[i] -= 2 * eps
        down = loss()
        grad[i] = (up - down) / (2 * eps)
    block.params = base
    return grad


def _check_pair(gh: HorizonGradient, gT: HorizonGradient):
    if len(gh) != len(gT) or any(a.shape != b.shape for a, b in zip(gh.per_block, gT.per_block)):
        raise InvalidInputError("gradients come from differently shaped networks")
    if gT.horizon != len(gT):
        raise InvalidInputError(f"reference gradient must have full horizon {len(gT)}, got {gT.horizon}")


def gradient_angle(gh: HorizonGradient, gT: HorizonGradient) -> float:
    """Cosine of the angle between concatenated ``g_h`` and ``g_T``."""
    _check_pair(gh, gT)
    return cosine_similarity(gh.flat(), gT.flat())


def rescaled_deviation(gh: HorizonGradient, gT: HorizonGradient) -> float:
    """``min_c ||c g_h - g_T||``, which equals ``sin(theta_h) ||g_T||``."""
    _check_pair(gh, gT)
    a = gh.flat()
    b = gT.flat()
    aa = float(a @ a)
    if aa == 0 or not np.any(b):
        raise DegenerateInputError("zero gradient")
    c = float(a @ b) / aa
    return float(np.linalg.norm(c * a - b))
