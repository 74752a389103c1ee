"""
Stochastic gradient estimators.

Coordinate estimators return a SparseGradient so that a solver step costs
O(B n): only B Gram rows are evaluated and only B coordinates are touched
(plus an optional dense part for estimators that carry one). Estimators are
stateless; the caller supplies the evaluation point and the sampled indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from kernels.features import FeatureMap
from solvers.objective import RegressionProblem
from utils.errors import ConfigError, ShapeMismatchError

DEFAULT_CLIP_NORM = 0.1

IndexLike = Union[int, np.integer, np.ndarray, list]


@dataclass(frozen=True, eq=False)
class SparseGradient:
    """sum_j values[j] e_{indices[j]} + dense_part; duplicate indices accumulate."""

    indices: np.ndarray
    values: np.ndarray
    dense_part: Optional[np.ndarray] = None

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros((n,) + self.values.shape[1:])
        self.add_to(out, 1.0)
        return out

    def add_to(self, target: np.ndarray, scale: float) -> None:
        """target += scale * gradient, in place."""
        if self.dense_part is not None:
            target += scale * self.dense_part
        np.add.at(target, self.indices, scale * self.values)


def _indices(p: RegressionProblem, i: IndexLike) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(i, dtype=np.intp))
    if idx.ndim != 1 or idx.size == 0:
        raise ConfigError("estimators need a non-empty batch of indices")
    if idx.min() < 0 or idx.max() >= p.n:
        raise IndexError(f"coordinate index out of range for n={p.n}")
    return idx


def rc_batch(
    p: RegressionProblem, theta: np.ndarray, batch: IndexLike, B: Optional[int] = None
) -> SparseGradient:
    """
    Random-coordinate estimate of the dual gradient at the lookahead point theta:
    (n/B) sum_{i in batch} ((K_i + lambda e_i)^T theta - b_i) e_i.
    """
    batch = _indices(p, batch)
    if B is not None and B != batch.size:
        raise ShapeMismatchError(f"batch has {batch.size} indices, expected B={B}")
    residual = p.operator.rows(batch) @ theta + p.noise * theta[batch] - p.b[batch]
    return SparseGradient(indices=batch, values=(p.n / batch.size) * residual)


def rf_estimate(p: RegressionProblem, alpha: np.ndarray, fmap: FeatureMap, j: IndexLike) -> np.ndarray:
    """
    Random-feature estimate lambda a - b + (m/|J|) sum_{j in J} Z_j Z_j^T a.
    Its error (K~ - K) a does not shrink near the optimum.
    """
    cols = np.atleast_1d(np.asarray(j, dtype=np.intp))
    if cols.size == 0:
        raise ConfigError("rf_estimate needs at least one feature index")
    Z = fmap.column(p.X, cols)
    return p.noise * alpha - p.b + (fmap.m / cols.size) * (Z @ (Z.T @ alpha))


def rb_rc_estimate(p: RegressionProblem, alpha: np.ndarray, i: IndexLike) -> SparseGradient:
    """
    Only the K a term subsampled: (n/B) sum_i e_i e_i^T (K a) + lambda a - b.
    Unbiased, but the exact lambda a - b part makes the noise additive.
    """
    idx = _indices(p, i)
    return SparseGradient(
        indices=idx,
        values=(p.n / idx.size) * (p.operator.rows(idx) @ alpha),
        dense_part=p.noise * alpha - p.b,
    )


def clip_by_norm(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale g (column-wise for 2-d g) so its 2-norm is at most clip_norm."""
    if clip_norm <= 0:
        raise ConfigError(f"clip_norm must be positive, got {clip_norm}")
    norms = np.linalg.norm(g, axis=0)
    factor = np.minimum(1.0, clip_norm / np.maximum(norms, np.finfo(float).tiny))
    return g * factor


def sgd_mixed_estimate(
    p: RegressionProblem,
    alpha: np.ndarray,
    i: IndexLike,
    fmap: Optional[FeatureMap] = None,
    clip_norm: Optional[float] = DEFAULT_CLIP_NORM,
) -> np.ndarray:
    """
    Mixed estimate of the PRIMAL gradient used by the SGD baseline:
    (n/B) sum_i K_i (K_i^T a - b_i) + lambda Z Z^T a, then clipped.

    With fmap=None the regulariser uses the exact K a; with clip_norm=None no
    clipping is applied.
    """
    idx = _indices(p, i)
    K_rows = p.operator.rows(idx)
    fit = (p.n / idx.size) * (K_rows.T @ (K_rows @ alpha - p.b[idx]))
    if fmap is None:
        reg = p.kv(alpha)
    else:
        Z = fmap(p.X)
        reg = Z @ (Z.T @ alpha)
    g = fit + p.noise * reg
    return g if clip_norm is None else clip_by_norm(g, clip_norm)
