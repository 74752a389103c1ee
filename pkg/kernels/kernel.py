"""
Kernel evaluation for dense stationary kernels (Matérn-3/2, squared exponential)
and the sparse Tanimoto kernel on count fingerprints.

Gram rows are produced on demand; nothing here materialises the full n x n
matrix except `gram`, which is guarded by a size cap and only meant for small
oracles and test predictions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from utils.config import settings
from utils.errors import (
    CapExceededError,
    ConfigError,
    KernelInputError,
    ShapeMismatchError,
    UnsupportedFamilyError,
)

SQRT3 = np.sqrt(3.0)

Indices = Union[slice, Sequence[int], np.ndarray]


class KernelFamily(str, Enum):
    MATERN32 = "matern32"
    SQUARED_EXPONENTIAL = "squared_exponential"
    TANIMOTO = "tanimoto"


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel family plus hyperparameters; `length_scale` may be scalar or per-dimension."""

    family: KernelFamily
    length_scale: Union[float, Sequence[float], np.ndarray] = 1.0
    amplitude: float = 1.0
    noise: float = 1.0
    prior_mean: float = 0.0

    def __post_init__(self):
        try:
            family = KernelFamily(self.family)
        except ValueError as e:
            raise ConfigError(f"unknown kernel family {self.family!r}") from e
        object.__setattr__(self, "family", family)

        scales = np.atleast_1d(np.asarray(self.length_scale, dtype=np.float64))
        if scales.ndim != 1 or scales.size == 0:
            raise ConfigError("length_scale must be a scalar or a 1-d vector")
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise ConfigError(f"length_scale must be positive, got {scales}")
        scales.setflags(write=False)
        object.__setattr__(self, "length_scale", scales)

        for name in ("amplitude", "noise"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        if not np.isfinite(self.prior_mean):
            raise ConfigError(f"prior_mean must be finite, got {self.prior_mean}")
        object.__setattr__(self, "prior_mean", float(self.prior_mean))

    @property
    def kappa(self) -> float:
        """sup_x k(x, x); equal to the amplitude for every family in scope."""
        return self.amplitude

    @property
    def is_stationary(self) -> bool:
        return self.family is not KernelFamily.TANIMOTO

    def scales_for(self, d: int) -> np.ndarray:
        if self.length_scale.size == 1:
            return np.full(d, self.length_scale[0])
        if self.length_scale.size != d:
            raise ShapeMismatchError(
                f"length_scale has {self.length_scale.size} entries but inputs have d={d}"
            )
        return self.length_scale

    def to_dict(self) -> dict:
        scales = self.length_scale.tolist()
        return {
            "family": self.family.value,
            "length_scale": scales[0] if len(scales) == 1 else scales,
            "amplitude": self.amplitude,
            "noise": self.noise,
            "prior_mean": self.prior_mean,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        unknown = set(data) - {"family", "length_scale", "amplitude", "noise", "prior_mean"}
        if unknown:
            raise ConfigError(f"unknown kernel fields: {sorted(unknown)}")
        if "family" not in data:
            raise ConfigError("kernel.family is required")
        return cls(**data)


class InputMatrix:
    """
    Training or test inputs: dense rows (n x d floats) or sparse nonnegative
    integer count vectors (CSR) for fingerprints.
    """

    def __init__(self, values: Union[np.ndarray, sp.spmatrix]):
        if sp.issparse(values):
            csr = sp.csr_matrix(values)
            data = csr.data
            if data.size and (np.any(data < 0) or np.any(data != np.round(data))):
                raise KernelInputError("sparse inputs must be nonnegative integer counts")
            csr = sp.csr_matrix(csr, dtype=np.float64)
            csr.eliminate_zeros()
            csr.sort_indices()
            self._values = csr
        else:
            dense = np.asarray(values, dtype=np.float64)
            if dense.ndim != 2:
                raise ShapeMismatchError(f"dense inputs must be 2-d, got shape {dense.shape}")
            if not np.all(np.isfinite(dense)):
                raise KernelInputError("dense inputs must be finite")
            self._values = dense

    @classmethod
    def empty(cls, d: int) -> "InputMatrix":
        return cls(np.zeros((0, d)))

    @property
    def values(self) -> Union[np.ndarray, sp.csr_matrix]:
        return self._values

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._values)

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def d(self) -> int:
        return self._values.shape[1]

    def __len__(self) -> int:
        return self.n

    def take(self, indices: Indices) -> "InputMatrix":
        if isinstance(indices, slice):
            return InputMatrix(self._values[indices])
        return InputMatrix(self._values[np.asarray(indices, dtype=np.intp)])

    def dense_row(self, i: int) -> np.ndarray:
        if self.is_sparse:
            return self._values[i].toarray().ravel()
        return self._values[i]

    @cached_property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self._values.sum(axis=1)).ravel()

    @cached_property
    def levels(self) -> List[sp.csr_matrix]:
        """Binary indicator matrices 1[x >= c] for c = 1..max count."""
        if not self.is_sparse:
            raise UnsupportedFamilyError("count levels are only defined for sparse inputs")
        top = int(self._values.data.max()) if self._values.nnz else 0
        out = []
        for c in range(1, top + 1):
            level = self._values.copy()
            level.data = (level.data >= c).astype(np.float64)
            level.eliminate_zeros()
            out.append(level)
        return out


def _check_compatible(spec: KernelSpec, A: InputMatrix, X: InputMatrix) -> None:
    if spec.family is KernelFamily.TANIMOTO:
        if not (A.is_sparse and X.is_sparse):
            raise KernelInputError("tanimoto kernel expects sparse count inputs")
    elif A.is_sparse or X.is_sparse:
        raise KernelInputError(f"{spec.family.value} kernel expects dense inputs")
    if A.d != X.d:
        raise ShapeMismatchError(f"input dimensions differ: {A.d} vs {X.d}")


def _require_nonzero_rows(M: InputMatrix) -> None:
    empty = np.flatnonzero(M.row_sums == 0)
    if empty.size:
        raise KernelInputError(f"tanimoto kernel is undefined for all-zero row {int(empty[0])}")


def _tanimoto_block(A: InputMatrix, X: InputMatrix) -> np.ndarray:
    _require_nonzero_rows(A)
    _require_nonzero_rows(X)
    mins = np.zeros((A.n, X.n))
    # sum_i min(a_i, x_i) = sum_c 1[a >= c] . 1[x >= c] for integer counts
    for level_a, level_x in zip(A.levels, X.levels):
        mins += (level_a @ level_x.T).toarray()
    maxs = A.row_sums[:, None] + X.row_sums[None, :] - mins
    return mins / maxs


def cross(spec: KernelSpec, A: InputMatrix, X: InputMatrix) -> np.ndarray:
    """k(A, X) as an A.n x X.n block."""
    _check_compatible(spec, A, X)
    if A.n == 0 or X.n == 0:
        return np.zeros((A.n, X.n))
    if spec.family is KernelFamily.TANIMOTO:
        return spec.amplitude * _tanimoto_block(A, X)

    scales = spec.scales_for(A.d)
    a = A.values / scales
    x = X.values / scales
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        return spec.amplitude * np.exp(-0.5 * cdist(a, x, "sqeuclidean"))
    s = SQRT3 * cdist(a, x, "euclidean")
    return spec.amplitude * (1.0 + s) * np.exp(-s)


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    """k(x, x2) for a single pair of rows."""
    x = x.toarray().ravel() if sp.issparse(x) else np.asarray(x, dtype=np.float64)
    x2 = x2.toarray().ravel() if sp.issparse(x2) else np.asarray(x2, dtype=np.float64)
    if x.ndim != 1 or x.shape != x2.shape:
        raise ShapeMismatchError(f"rows must be 1-d with equal length, got {x.shape} and {x2.shape}")

    if spec.family is KernelFamily.TANIMOTO:
        if np.any(x < 0) or np.any(x2 < 0):
            raise KernelInputError("tanimoto inputs must be nonnegative")
        den = np.maximum(x, x2).sum()
        if den == 0:
            raise KernelInputError("tanimoto kernel is undefined for two all-zero vectors")
        return float(spec.amplitude * np.minimum(x, x2).sum() / den)

    r = np.linalg.norm((x - x2) / spec.scales_for(x.size))
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        return float(spec.amplitude * np.exp(-0.5 * r * r))
    return float(spec.amplitude * (1.0 + SQRT3 * r) * np.exp(-SQRT3 * r))


def _check_indices(indices: np.ndarray, n: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.intp).ravel()
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"row index out of range for n={n}")
    return indices


def row(spec: KernelSpec, X: InputMatrix, i: int) -> np.ndarray:
    """The i-th Gram row K_i, computed on demand."""
    return rows(spec, X, [i])[0]


def rows(spec: KernelSpec, X: InputMatrix, indices) -> np.ndarray:
    indices = _check_indices(indices, X.n)
    return cross(spec, X.take(indices), X)


def matvec(
    spec: KernelSpec,
    X: InputMatrix,
    v: np.ndarray,
    block_size: Optional[int] = None,
    workers: int = 1,
) -> np.ndarray:
    """
    Kv in row blocks. `v` may be a vector or an n x k matrix. Each block writes
    a disjoint slice of the output, so results do not depend on `workers`.
    """
    v = np.asarray(v)
    if v.ndim not in (1, 2) or v.shape[0] != X.n:
        raise ShapeMismatchError(f"expected leading dimension {X.n}, got shape {v.shape}")
    block_size = block_size or settings.block_size
    if block_size <= 0:
        raise ConfigError(f"block_size must be positive, got {block_size}")

    out = np.empty(v.shape, dtype=np.result_type(v.dtype, np.float32))

    def _block(start: int) -> None:
        stop = min(start + block_size, X.n)
        out[start:stop] = cross(spec, X.take(slice(start, stop)), X) @ v

    starts = range(0, X.n, block_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_block, starts))
    else:
        for start in starts:
            _block(start)
    return out


def cross_matvec(
    spec: KernelSpec,
    A: InputMatrix,
    X: InputMatrix,
    coeff: np.ndarray,
    block_size: Optional[int] = None,
) -> np.ndarray:
    """k(A, X) @ coeff, blocked over the rows of A."""
    coeff = np.asarray(coeff)
    if coeff.shape[0] != X.n:
        raise ShapeMismatchError(f"expected {X.n} coefficients, got shape {coeff.shape}")
    block_size = block_size or settings.block_size
    out = np.zeros((A.n,) + coeff.shape[1:])
    for start in range(0, A.n, block_size):
        stop = min(start + block_size, A.n)
        out[start:stop] = cross(spec, A.take(slice(start, stop)), X) @ coeff
    return out


def kernel_gradient_matvec(
    spec: KernelSpec, points: np.ndarray, X: InputMatrix, coeff: np.ndarray
) -> np.ndarray:
    """Gradient w.r.t. each point a of sum_i coeff_i k(x_i, a); shape (s, d)."""
    if not spec.is_stationary:
        raise UnsupportedFamilyError("input gradients need a stationary kernel")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != X.d:
        raise ShapeMismatchError(f"points have d={points.shape[1]}, inputs have d={X.d}")
    scales = spec.scales_for(X.d)
    a = points / scales
    x = X.values / scales
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        weights = -spec.amplitude * np.exp(-0.5 * cdist(a, x, "sqeuclidean"))
    else:
        weights = -3.0 * spec.amplitude * np.exp(-SQRT3 * cdist(a, x, "euclidean"))
    weights = weights * coeff[None, :]
    return (weights.sum(axis=1)[:, None] * a - weights @ x) / scales


def gram(
    spec: KernelSpec,
    X: InputMatrix,
    X2: Optional[InputMatrix] = None,
    cap: Optional[int] = None,
) -> np.ndarray:
    """Full cross-Gram matrix; refuses above `cap` entries."""
    X2 = X if X2 is None else X2
    cap = cap or settings.gram_cap
    if X.n * X2.n > cap:
        raise CapExceededError(f"gram of {X.n} x {X2.n} exceeds the cap of {cap} entries")
    return cross(spec, X, X2)


class RowCache:
    """
    Gram rows kept in memory by index; only allowed for small n. Once every
    row is present the rows are stacked into one matrix and served from it.
    """

    def __init__(self, n: int, threshold: Optional[int] = None):
        threshold = threshold or settings.row_cache_threshold
        if n > threshold:
            raise ConfigError(f"row cache refused: n={n} exceeds threshold {threshold}")
        self.n = n
        self._rows: Dict[int, np.ndarray] = {}
        self._matrix: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.n if self._matrix is not None else len(self._rows)

    def __contains__(self, i: int) -> bool:
        return self._matrix is not None or i in self._rows

    @property
    def full(self) -> bool:
        return len(self) == self.n

    def get(self, i: int) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix[i]
        return self._rows[i]

    def put(self, i: int, values: np.ndarray) -> None:
        if self._matrix is None:
            self._rows[i] = values

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if not self.full:
                raise KeyError(f"row cache holds {len(self._rows)} of {self.n} rows")
            self._matrix = np.stack([self._rows[i] for i in range(self.n)]) if self.n else np.zeros((0, 0))
            self._rows.clear()
        return self._matrix

    def clear(self) -> None:
        self._rows.clear()
        self._matrix = None


@dataclass(eq=False)
class KernelOperator:
    """The implicit Gram matrix K of a fixed input set."""

    spec: KernelSpec
    X: InputMatrix
    block_size: int = field(default_factory=lambda: settings.block_size)
    cache_rows: bool = False
    workers: int = field(default_factory=lambda: settings.workers)
    dtype: type = field(default_factory=lambda: settings.np_dtype)

    def __post_init__(self):
        self._cache = RowCache(self.X.n) if self.cache_rows else None

    @property
    def n(self) -> int:
        return self.X.n

    def row(self, i: int) -> np.ndarray:
        return self.rows([i])[0]

    def rows(self, indices) -> np.ndarray:
        indices = _check_indices(indices, self.n)
        if self._cache is None:
            return cross(self.spec, self.X.take(indices), self.X).astype(self.dtype, copy=False)
        if self._cache.full:
            return self._cache.matrix()[indices]

        missing = np.array([i for i in np.unique(indices) if i not in self._cache], dtype=np.intp)
        if missing.size:
            fresh = cross(self.spec, self.X.take(missing), self.X).astype(self.dtype, copy=False)
            for i, values in zip(missing, fresh):
                self._cache.put(int(i), values)
        if not indices.size:
            return np.zeros((0, self.n), dtype=self.dtype)
        return np.stack([self._cache.get(int(i)) for i in indices])

    def warm(self) -> None:
        """Fill the row cache with every row."""
        if self._cache is None:
            raise ConfigError("warm() needs an operator built with cache_rows=True")
        for start in range(0, self.n, self.block_size):
            self.rows(np.arange(start, min(start + self.block_size, self.n)))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=self.dtype)
        if self._cache is not None and self._cache.full:
            if v.shape[0] != self.n:
                raise ShapeMismatchError(f"expected leading dimension {self.n}, got shape {v.shape}")
            return self._cache.matrix() @ v
        return matvec(self.spec, self.X, v, self.block_size, self.workers)

    def diag(self) -> np.ndarray:
        return np.full(self.n, self.spec.amplitude)

    def dense(self, cap: Optional[int] = None) -> np.ndarray:
        return gram(self.spec, self.X, cap=cap)
