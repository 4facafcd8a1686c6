"""Block-structured feed-forward networks.

A network is a list of blocks ``x(t+1) = f_t(x(t), u(t))`` acting on row
batches of shape ``(n_samples, n_t)``. Each block keeps its parameters as one
flat vector ``u(t)`` (weights row-major, then bias), so gradients can be
compared block by block and concatenated across blocks.

Every loss is the batch mean of ``0.5 * ||x - y||**2``, and the same ``1/N``
reduction is folded into the upstream gradients handed to :func:`block_vjp`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError

BLOCK_KINDS = ("linear-dense", "linear-residual", "mlp-residual")


@dataclass
class Block:
    """One stage ``f_t`` of the dynamics.

    ``linear-dense``: ``W x (+ b)``; ``linear-residual``: ``x + W x``;
    ``mlp-residual``: ``x + relu(W x + b)``.
    """

    kind: str
    input_dim: int
    output_dim: int
    params: np.ndarray
    bias: bool = False

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise InvalidInputError(f"unknown block kind {self.kind!r}")
        if self.kind == "mlp-residual":
            self.bias = True
        elif self.kind == "linear-residual":
            self.bias = False
        if self.kind != "linear-dense" and self.input_dim != self.output_dim:
            raise InvalidInputError(f"{self.kind} block needs input_dim == output_dim")
        self.params = np.array(self.params, dtype=np.float64).ravel()
        if self.params.size != self.n_params:
            raise InvalidInputError(
                f"{self.kind} block {self.output_dim}x{self.input_dim} expects "
                f"{self.n_params} parameters, got {self.params.size}"
            )
        if not np.all(np.isfinite(self.params)):
            raise InvalidInputError("non-finite block parameters")

    @property
    def n_params(self) -> int:
        return self.output_dim * self.input_dim + (self.output_dim if self.bias else 0)

    @property
    def weight(self) -> np.ndarray:
        """View of the weight matrix, shape ``(output_dim, input_dim)``."""
        k = self.output_dim * self.input_dim
        return self.params[:k].reshape(self.output_dim, self.input_dim)

    @property
    def b(self) -> np.ndarray | None:
        if not self.bias:
            return None
        return self.params[self.output_dim * self.input_dim:]

    def copy(self) -> "Block":
        return Block(self.kind, self.input_dim, self.output_dim, self.params.copy(), self.bias)


@dataclass
class Network:
    """Ordered list of blocks with an MSE loss compatible with every state."""

    blocks: list[Block]
    loss_kind: str = "mse"

    def __post_init__(self):
        if not self.blocks:
            raise InvalidInputError("network needs at least one block")
        if self.loss_kind != "mse":
            raise InvalidInputError(f"unsupported loss {self.loss_kind!r}")
        for i, (a, b) in enumerate(zip(self.blocks, self.blocks[1:])):
            if a.output_dim != b.input_dim:
                raise InvalidInputError(f"block {i} outputs {a.output_dim} but block {i + 1} takes {b.input_dim}")
        dims = {self.blocks[0].input_dim, *(blk.output_dim for blk in self.blocks)}
        if len(dims) != 1:
            raise InvalidInputError(
                "intermediate losses need every state to share one width; got widths "
                f"{sorted(dims)}"
            )

    @property
    def T(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.blocks[0].input_dim

    @property
    def state_dims(self) -> list[int]:
        return [self.blocks[0].input_dim] + [b.output_dim for b in self.blocks]

    @property
    def param_sizes(self) -> list[int]:
        return [b.n_params for b in self.blocks]

    def get_params(self) -> np.ndarray:
        return np.concatenate([b.params for b in self.blocks])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != sum(self.param_sizes):
            raise InvalidInputError("flat parameter vector has the wrong length")
        offset = 0
        for b in self.blocks:
            b.params = flat[offset:offset + b.n_params].copy()
            offset += b.n_params

    def copy(self) -> "Network":
        return Network([b.copy() for b in self.blocks], self.loss_kind)


@dataclass
class Activations:
    """States ``x(0), ..., x(T)`` recorded by one forward pass."""

    states: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, t):
        return self.states[t]


def _as_batch(x, dim: int, what: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InvalidInputError(f"{what} must have {dim} features, got shape {x.shape}")
    return x


def block_apply(block: Block, x) -> np.ndarray:
    """Apply one block to a batch."""
    x = _as_batch(x, block.input_dim)
    z = x @ block.weight.T
    if block.kind == "linear-dense":
        return z + block.b if block.bias else z
    if block.kind == "linear-residual":
        return x + z
    return x + np.maximum(z + block.b, 0.0)


def block_vjp(block: Block, x, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian products of one block.

    Parameters
    ----------
    block : Block
    x : ndarray, shape (N, input_dim)
        Block input.
    upstream : ndarray, shape (N, output_dim)
        Gradient of the (batch-mean) loss with respect to the block output.

    Returns
    -------
    grad_x : ndarray, shape (N, input_dim)
    grad_u : ndarray, shape (n_params,)
        Gradient with respect to the flat parameter vector, summed over samples.
    """
    x = _as_batch(x, block.input_dim)
    upstream = _as_batch(upstream, block.output_dim, "upstream")
    if upstream.shape[0] != x.shape[0]:
        raise InvalidInputError("upstream batch size differs from x")
    W = block.weight
    if block.kind == "mlp-residual":
        # relu'(0) := 0
        pre = upstream * ((x @ W.T + block.b) > 0.0)
        grad_x = upstream + pre @ W
        grad_u = np.concatenate([(pre.T @ x).ravel(), pre.sum(axis=0)])
        return grad_x, grad_u
    grad_x = upstream @ W
    if block.kind == "linear-residual":
        grad_x = grad_x + upstream
    grad_W = (upstream.T @ x).ravel()
    if block.bias:
        return grad_x, np.concatenate([grad_W, upstream.sum(axis=0)])
    return grad_x, grad_W


def forward(net: Network, x0) -> Activations:
    """Run the network and keep every intermediate state."""
    states = [_as_batch(x0, net.width, "x0")]
    for block in net.blocks:
        states.append(block_apply(block, states[-1]))
    return Activations(states)


def state_loss(x, y) -> float:
    """Batch mean of ``0.5 * ||x - y||**2``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidInputError(f"state shape {x.shape} does not match label shape {y.shape}")
    d = x - y
    return 0.5 * float(np.sum(d * d)) / x.shape[0]


def state_loss_grad(x, y) -> np.ndarray:
    """Gradient of :func:`state_loss` with respect to the state batch."""
    return (x - y) / x.shape[0]


def terminal_loss(net: Network, acts: Activations, y) -> float:
    """``L(x(T))``."""
    y = _as_batch(y, net.width, "y")
    return state_loss(acts[net.T], y)


def trajectory_loss(net: Network, acts: Activations, y, t: int) -> float:
    """Per-block loss increment ``L(x(t+1)) - L(x(t))``."""
    if not 0 <= t < net.T:
        raise InvalidInputError(f"block index {t} outside [0, {net.T})")
    y = _as_batch(y, net.width, "y")
    return state_loss(acts[t + 1], y) - state_loss(acts[t], y)


# -- builders ---------------------------------------------------------------

def _gauss(rng, shape, var):
    return np.sqrt(var) * rng.standard_normal(shape)


def residual_mlp(n_blocks: int, width: int, rng: np.random.Generator, residual_scale: float | None = None) -> Network:
    """Dense input layer, ``n_blocks - 2`` ReLU residual blocks, dense output layer.

    Dense weights have entries with variance ``width**-0.5``. Residual branch
    weights are additionally multiplied by ``residual_scale`` (default
    ``1 / n_blocks``) so the depth-15 forward pass stays bounded at init.
    Biases start at zero.
    """
    if n_blocks < 2:
        raise InvalidInputError("residual MLP needs at least an input and an output block")
    if residual_scale is None:
        residual_scale = 1.0 / n_blocks
    var = width ** -0.5
    zeros = np.zeros(width)
    blocks = [Block("linear-dense", width, width, np.concatenate([_gauss(rng, width * width, var), zeros]), bias=True)]
    for _ in range(n_blocks - 2):
        w = residual_scale * _gauss(rng, width * width, var)
        blocks.append(Block("mlp-residual", width, width, np.concatenate([w, zeros])))
    blocks.append(Block("linear-dense", width, width, np.concatenate([_gauss(rng, width * width, var), zeros]), bias=True))
    return Network(blocks)


def mlp_residual_stack(n_blocks: int, width: int, rng: np.random.Generator, weight_std: float | None = None) -> Network:
    """``n_blocks`` blocks of ``x + relu(W x + b)``, a small all-residual test network.

    Weights are Gaussian with standard deviation ``weight_std`` (default
    ``width**-0.5 / n_blocks``); biases are small Gaussians so that ReLU
    kinks are avoided almost surely.
    """
    if weight_std is None:
        weight_std = width ** -0.5 / n_blocks
    blocks = [
        Block("mlp-residual", width, width,
              np.concatenate([weight_std * rng.standard_normal(width * width), 0.1 * rng.standard_normal(width)]))
        for _ in range(n_blocks)
    ]
    return Network(blocks)


def linear_residual_net(n_blocks: int, width: int, rng: np.random.Generator, residual_scale: float | None = None) -> Network:
    """Bias-free linear counterpart of :func:`residual_mlp`."""
    if n_blocks < 2:
        raise InvalidInputError("need at least an input and an output block")
    if residual_scale is None:
        residual_scale = 1.0 / n_blocks
    var = width ** -0.5
    blocks = [Block("linear-dense", width, width, _gauss(rng, width * width, var))]
    for _ in range(n_blocks - 2):
        blocks.append(Block("linear-residual", width, width, residual_scale * _gauss(rng, width * width, var)))
    blocks.append(Block("linear-dense", width, width, _gauss(rng, width * width, var)))
    return Network(blocks)


def linear_chain_network(weights) -> Network:
    """Bias-free dense chain ``x -> W(T-1) ... W(0) x``."""
    return Network([Block("linear-dense", w.shape[1], w.shape[0], np.asarray(w).ravel()) for w in weights])


# -- serialization ----------------------------------------------------------

FORMAT_VERSION = 1


def network_to_dict(net: Network) -> dict:
    """Plain-data form; floats are hex strings so reloading is bit-exact."""
    return {
        "format": "mpctrain.network",
        "version": FORMAT_VERSION,
        "loss": net.loss_kind,
        "blocks": [
            {
                "kind": b.kind,
                "input_dim": b.input_dim,
                "output_dim": b.output_dim,
                "bias": b.bias,
                "params": [float(v).hex() for v in b.params],
            }
            for b in net.blocks
        ],
    }


def network_from_dict(doc: dict) -> Network:
    if doc.get("format") != "mpctrain.network" or doc.get("version") != FORMAT_VERSION:
        raise InvalidInputError("not a version-1 network document")
    blocks = [
        Block(
            spec["kind"],
            int(spec["input_dim"]),
            int(spec["output_dim"]),
            np.array([float.fromhex(v) for v in spec["params"]], dtype=np.float64),
            bool(spec.get("bias", False)),
        )
        for spec in doc["blocks"]
    ]
    return Network(blocks, doc.get("loss", "mse"))


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=1, sort_keys=True)


def loads_network(text: str) -> Network:
    return network_from_dict(json.loads(text))
