"""Small numerical helpers: seeded sampling, polynomial fits, similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, InvalidInputError

#: Identifier of the bit generator behind :func:`make_rng`, written into run metadata.
RNG_ALGORITHM = f"numpy.PCG64/numpy-{np.__version__}"


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed generator for a 64-bit unsigned seed."""
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def child_seeds(seed: int, count: int) -> list[int]:
    """Derive ``count`` independent 64-bit seeds from ``seed``."""
    ss = np.random.SeedSequence(int(seed))
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(count)]


def gaussian_matrix(rows: int, cols: int, std: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. ``N(0, std**2)`` entries drawn from ``rng``."""
    if not std > 0:
        raise InvalidInputError(f"std must be positive, got {std}")
    return std * rng.standard_normal((rows, cols))


@dataclass(frozen=True)
class PolyModel:
    """Polynomial with coefficients in ascending power order."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        if len(self.coefficients) == 0:
            raise InvalidInputError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x):
        return polyeval(self, x)


def polyfit(xs, ys, degree: int) -> PolyModel:
    """Least-squares polynomial fit.

    Parameters
    ----------
    xs, ys : sequence of float
        Sample abscissae (distinct) and values.
    degree : int
        Polynomial degree; needs at least ``degree + 1`` points.

    Returns
    -------
    PolyModel
        Coefficients minimising ``sum((p(x_i) - y_i)**2)``. With exactly
        ``degree + 1`` points the fit interpolates.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if degree < 0:
        raise InvalidInputError("degree must be non-negative")
    if xs.shape != ys.shape:
        raise InvalidInputError(f"xs and ys differ in length ({xs.size} vs {ys.size})")
    if xs.size < degree + 1:
        raise InvalidInputError(f"degree {degree} fit needs {degree + 1} points, got {xs.size}")
    if np.unique(xs).size != xs.size:
        raise InvalidInputError("xs must be distinct")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InvalidInputError("non-finite sample")
    vander = np.vander(xs, degree + 1, increasing=True)
    # column equilibration keeps the h**3 column from dominating the conditioning
    scale = np.linalg.norm(vander, axis=0)
    scale[scale == 0] = 1.0
    sol, *_ = np.linalg.lstsq(vander / scale, ys, rcond=None)
    return PolyModel(tuple(sol / scale))


def polyeval(model: PolyModel, x):
    """Evaluate ``sum(c_k * x**k)`` by Horner's rule; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for c in reversed(model.coefficients):
        out = out * x + c
    return float(out) if out.ndim == 0 else out


def cosine_similarity(a, b) -> float:
    """``a.b / (|a| |b|)``, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    if np.array_equal(a, b):
        # exact for self-similarity, which rounding would otherwise leave one ulp short
        return 1.0
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))
