"""Closed-form horizon gradients for deep linear chains.

With whitened inputs the loss of a linear chain reduces to
``0.5 * ||W_0^T - Phi||_F**2`` where ``W_{t1}^{t2} = W(t2-1) ... W(t1)``.
The horizon-``h`` gradient of layer ``t`` is then

    (W_{t+1}^{e})^T (W_0^{e} - Phi) (W_0^{t})^T,   e = min(t + h, T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateInputError, InvalidInputError
from .numerics import cosine_similarity, make_rng, polyfit


@dataclass
class LinearChain:
    weights: list[np.ndarray]
    phi: np.ndarray
    perturbation_bound: float | None = None

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not self.weights:
            raise InvalidInputError("chain needs at least one layer")
        n = self.phi.shape[0]
        if self.phi.shape != (n, n) or any(w.shape != (n, n) for w in self.weights):
            raise InvalidInputError("all weights and phi must be square with one common size")

    @property
    def T(self) -> int:
        return len(self.weights)

    @property
    def n(self) -> int:
        return self.phi.shape[0]


ENSEMBLES = ("iid", "shared")


def theorem_chain(n: int, T: int, c: float, rng: np.random.Generator, phi_std: float = 1.0,
                  ensemble: str = "iid") -> LinearChain:
    """Chain ``W(t) = I + Wt(t)/T`` with ``||Wt(t)||_2 <= c``.

    ``Wt(t)`` is standard Gaussian, rescaled to spectral norm exactly ``c``
    whenever its raw norm exceeds ``c``. With ``ensemble="iid"`` every layer
    draws its own perturbation; ``"shared"`` reuses one draw for all layers,
    the coherent case in which the tail products drift linearly in depth.
    ``Phi`` has i.i.d. ``N(0, phi_std**2 / n)`` entries.
    """
    if c < 0:
        raise InvalidInputError("perturbation bound must be non-negative")
    if ensemble not in ENSEMBLES:
        raise InvalidInputError(f"ensemble must be one of {ENSEMBLES}")
    eye = np.eye(n)
    weights = []
    for t in range(T):
        if ensemble == "shared" and t > 0:
            weights.append(weights[0])
            continue
        wt = rng.standard_normal((n, n))
        norm = np.linalg.norm(wt, 2)
        if norm > c:
            wt = wt * (c / norm) if c > 0 else np.zeros_like(wt)
        weights.append(eye + wt / T)
    phi = phi_std / math.sqrt(n) * rng.standard_normal((n, n))
    return LinearChain(weights, phi, c)


def partial_product(chain: LinearChain, t1: int, t2: int) -> np.ndarray:
    """``W(t2-1) ... W(t1)``; the identity when ``t1 == t2``."""
    if not 0 <= t1 <= t2 <= chain.T:
        raise InvalidInputError(f"need 0 <= t1 <= t2 <= T, got ({t1}, {t2})")
    out = np.eye(chain.n)
    for t in range(t1, t2):
        out = chain.weights[t] @ out
    return out


def _prefix_products(chain: LinearChain) -> list[np.ndarray]:
    """``[W_0^0, W_0^1, ..., W_0^T]``."""
    out = [np.eye(chain.n)]
    for w in chain.weights:
        out.append(w @ out[-1])
    return out


def _suffix_sweep(chain: LinearChain, start: int, end: int) -> list[np.ndarray]:
    """``[W_{t+1}^{end} for t in range(start, end)]`` built right to left."""
    out = {}
    acc = np.eye(chain.n)
    for t in range(end - 1, start - 1, -1):
        out[t] = acc
        acc = acc @ chain.weights[t]
    return [out[t] for t in range(start, end)]


def closed_form_gradient(chain: LinearChain, t: int, h: int) -> np.ndarray:
    """Horizon-``h`` gradient of layer ``t`` as an ``n x n`` matrix."""
    T = chain.T
    if not 0 <= t < T:
        raise InvalidInputError(f"layer index {t} outside [0, {T})")
    if not 1 <= h <= T:
        raise InvalidInputError(f"horizon {h} outside [1, {T}]")
    end = min(t + h, T)
    upper = partial_product(chain, t + 1, end)
    before = partial_product(chain, 0, t)
    residual = upper @ chain.weights[t] @ before - chain.phi
    return upper.T @ residual @ before.T


def closed_form_gradients(chain: LinearChain, h: int) -> list[np.ndarray]:
    """All layers' horizon-``h`` gradients, reusing prefix/suffix products."""
    T = chain.T
    if not 1 <= h <= T:
        raise InvalidInputError(f"horizon {h} outside [1, {T}]")
    prefix = _prefix_products(chain)
    grads = [None] * T
    # layers sharing the terminal window
    tail_start = max(T - h, 0)
    for t, upper in zip(range(tail_start, T), _suffix_sweep(chain, tail_start, T)):
        grads[t] = upper.T @ (prefix[T] - chain.phi) @ prefix[t].T
    for t in range(tail_start):
        end = t + h
        upper = partial_product(chain, t + 1, end)
        grads[t] = upper.T @ (prefix[end] - chain.phi) @ prefix[t].T
    return grads


def closed_form_cosine(chain: LinearChain, h: int, reference=None) -> float:
    """Cosine between concatenated horizon-``h`` and full-horizon gradients."""
    if reference is None:
        reference = closed_form_gradients(chain, chain.T)
    gh = np.concatenate([g.ravel() for g in closed_form_gradients(chain, h)])
    gT = np.concatenate([g.ravel() for g in reference])
    return cosine_similarity(gh, gT)


def whitened_batch(phi) -> tuple[np.ndarray, np.ndarray]:
    """Row batch ``(X, Y)`` with ``X^T X / N = I`` and ``Y^T X / N = Phi^T``.

    Under these moments the batch-mean squared loss of a linear chain equals
    ``0.5 * ||W - Phi||_F**2`` up to a constant, so its gradients match the
    closed forms.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[0]
    X = math.sqrt(n) * np.eye(n)
    Y = X @ phi.T
    return X, Y


# -- angle scaling with depth -----------------------------------------------

@dataclass
class ScalingReport:
    alphas: list[float]
    one_minus_cos2: list[float]
    stderr: list[float]
    slope: float
    seeds: list[int]
    horizons: list[int] = field(default_factory=list)
    n: int = 0
    T: int = 0
    c: float = 0.0
    ensemble: str = "iid"


def fit_loglog_slope(alphas, values) -> float:
    """Slope of ``log(values)`` against ``log(1 - alphas)``."""
    alphas = np.asarray(alphas, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep = (alphas < 1) & (values > 0)
    if keep.sum() < 2:
        raise DegenerateInputError("need two points with alpha < 1 and positive deviation")
    return polyfit(np.log1p(-alphas[keep]), np.log(values[keep]), 1).coefficients[1]


def scaling_experiment(n: int, T: int, c: float, seeds, alphas, ensemble: str = "iid") -> ScalingReport:
    """Mean ``1 - cos^2(theta_h)`` over seeded chains at ``h = floor(alpha*T)``.

    Each seed draws a :func:`theorem_chain`; the reported slope is the log-log
    fit of the seed-averaged deviation against ``1 - alpha``.
    """
    alphas = [float(a) for a in alphas]
    if not alphas or any(not 0 < a <= 1 for a in alphas):
        raise InvalidInputError("alphas must lie in (0, 1]")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise InvalidInputError("alphas must be strictly increasing")
    horizons = [max(1, int(math.floor(a * T + 1e-9))) for a in alphas]
    seeds = [int(s) for s in seeds]
    table = np.empty((len(seeds), len(alphas)))
    for i, seed in enumerate(seeds):
        chain = theorem_chain(n, T, c, make_rng(seed), ensemble=ensemble)
        reference = closed_form_gradients(chain, T)
        if not any(np.any(g) for g in reference):
            raise DegenerateInputError(f"seed {seed}: full-horizon gradient is zero")
        for j, h in enumerate(horizons):
            cos = closed_form_cosine(chain, h, reference)
            table[i, j] = max(0.0, 1.0 - cos * cos)
    mean = table.mean(axis=0)
    if len(seeds) > 1:
        err = table.std(axis=0, ddof=1) / math.sqrt(len(seeds))
    else:
        err = np.zeros(len(alphas))
    slope = fit_loglog_slope(alphas, mean)
    return ScalingReport(alphas, mean.tolist(), err.tolist(), float(slope), seeds, horizons, n, T, float(c), ensemble)


# -- product norm bounds -----------------------------------------------------

@dataclass
class BoundsReport:
    checked: int
    violations: list[dict]

    @property
    def ok(self) -> bool:
        return not self.violations


def _sigma_extremes(m: np.ndarray) -> tuple[float, float]:
    s = np.linalg.svd(m, compute_uv=False)
    return float(s[-1]), float(s[0])


def lemma_bounds_check(chain: LinearChain, samples: int, rng: np.random.Generator | None = None,
                       rtol: float = 1e-12) -> BoundsReport:
    """Check the partial-product norm bounds on sampled index ranges.

    For sampled ``t1 <= t2`` with ``k = t2 - t1`` factors::

        sigma_min(W_{t1}^{t2}) >= (1 - c/T)**k
        ||W_{t1}^{t2}||_2      <= (1 + c/T)**k  <  exp(k c / T)

    and for sampled ``t`` with ``alpha = t/T``::

        ||I - W_t^T||_2 <= exp((1 - alpha) c) - 1

    Indices are drawn on the integer grid so ``alpha*T`` needs no rounding.
    ``rtol`` absorbs floating-point round-off only.
    """
    c = chain.perturbation_bound
    if c is None:
        raise InvalidInputError("chain has no perturbation bound")
    rng = make_rng(0) if rng is None else rng
    T = chain.T
    eye = np.eye(chain.n)
    violations = []
    for _ in range(samples):
        t1, t2 = sorted(int(v) for v in rng.integers(0, T + 1, size=2))
        k = t2 - t1
        smin, smax = _sigma_extremes(partial_product(chain, t1, t2))
        lower = (1 - c / T) ** k
        upper = (1 + c / T) ** k
        if smin < lower * (1 - rtol):
            violations.append({"bound": "sigma_min", "t1": t1, "t2": t2, "value": smin, "limit": lower})
        if smax > upper * (1 + rtol) or smax > math.exp(k * c / T) * (1 + rtol):
            violations.append({"bound": "spectral", "t1": t1, "t2": t2, "value": smax, "limit": upper})
        t = int(rng.integers(0, T + 1))
        alpha = t / T
        dev = float(np.linalg.norm(eye - partial_product(chain, t, T), 2))
        limit = math.expm1((1 - alpha) * c)
        if dev > limit * (1 + rtol) + rtol:
            violations.append({"bound": "tail_identity", "t": t, "value": dev, "limit": limit})
    return BoundsReport(samples, violations)
