"""
Primal (kernel ridge) and dual objectives for alpha*(b) = (K + lambda I)^-1 b.

    L(a)  = 1/2 ||b - K a||^2 + lambda/2 ||a||_K^2        grad K(lambda a - b + K a)
    L*(a) = 1/2 ||a||_{K + lambda I}^2 - a^T b             grad lambda a - b + K a

Both share the minimiser alpha*(b) and satisfy min L = -lambda min L*.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg

from kernels.kernel import InputMatrix, KernelOperator, KernelSpec, gram
from utils.config import settings
from utils.errors import CapExceededError, NumericalError, ShapeMismatchError


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    """Kernel, inputs and right-hand side b (targets, or perturbed targets for samples)."""

    kernel: KernelSpec
    X: InputMatrix
    b: np.ndarray
    operator: Optional[KernelOperator] = None

    def __post_init__(self):
        b = np.array(self.b, dtype=np.float64)
        if b.ndim not in (1, 2) or b.shape[0] != self.X.n:
            raise ShapeMismatchError(f"b must have leading dimension n={self.X.n}, got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        if self.operator is None:
            object.__setattr__(self, "operator", KernelOperator(self.kernel, self.X))
        elif self.operator.X is not self.X:
            raise ShapeMismatchError("operator was built for a different input matrix")

    @property
    def n(self) -> int:
        return self.X.n

    @property
    def noise(self) -> float:
        return self.kernel.noise

    def with_targets(self, b: np.ndarray) -> "RegressionProblem":
        """Same kernel operator (and row cache), new right-hand side."""
        return replace(self, b=b)

    def kv(self, v: np.ndarray) -> np.ndarray:
        return self.operator.matvec(v)


def _check(p: RegressionProblem, alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != p.b.shape:
        raise ShapeMismatchError(f"expected shape {p.b.shape}, got {alpha.shape}")
    return alpha


def primal_loss(p: RegressionProblem, alpha: np.ndarray) -> float:
    alpha = _check(p, alpha)
    k_alpha = p.kv(alpha)
    return float(0.5 * np.sum((p.b - k_alpha) ** 2) + 0.5 * p.noise * np.sum(alpha * k_alpha))


def primal_grad(p: RegressionProblem, alpha: np.ndarray) -> np.ndarray:
    alpha = _check(p, alpha)
    return p.kv(p.noise * alpha - p.b + p.kv(alpha))


def dual_loss(p: RegressionProblem, alpha: np.ndarray) -> float:
    alpha = _check(p, alpha)
    return float(0.5 * np.sum(alpha * (p.kv(alpha) + p.noise * alpha)) - np.sum(alpha * p.b))


def dual_grad(p: RegressionProblem, alpha: np.ndarray) -> np.ndarray:
    alpha = _check(p, alpha)
    return p.noise * alpha - p.b + p.kv(alpha)


def k_norm_sq(p: RegressionProblem, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum(v * p.kv(v)))


def k2_norm_sq(p: RegressionProblem, v: np.ndarray) -> float:
    return float(np.sum(p.kv(np.asarray(v, dtype=np.float64)) ** 2))


def _dense_system(p: RegressionProblem, cap: Optional[int]) -> np.ndarray:
    cap = cap or settings.oracle_cap
    if p.n > cap:
        raise CapExceededError(f"direct solve refused: n={p.n} exceeds the oracle cap of {cap}")
    system = gram(p.kernel, p.X, cap=max(p.n * p.n, 1))
    system[np.diag_indices_from(system)] += p.noise
    return system


def direct_solve(p: RegressionProblem, cap: Optional[int] = None) -> np.ndarray:
    """alpha*(b) by dense Cholesky of K + lambda I."""
    if p.n == 0:
        return np.zeros_like(p.b)
    system = _dense_system(p, cap)
    try:
        factor = linalg.cho_factor(system, lower=True, check_finite=False)
    except linalg.LinAlgError as e:
        raise NumericalError(f"Cholesky of K + lambda I failed (lambda={p.noise}): {e}") from e
    return linalg.cho_solve(factor, p.b, check_finite=False)


def gram_eigenvalues(p: RegressionProblem, cap: Optional[int] = None) -> np.ndarray:
    """Ascending eigenvalues of K (dense oracle)."""
    cap = cap or settings.oracle_cap
    if p.n > cap:
        raise CapExceededError(f"eigen oracle refused: n={p.n} exceeds the oracle cap of {cap}")
    return linalg.eigvalsh(gram(p.kernel, p.X, cap=max(p.n * p.n, 1)), check_finite=False)
