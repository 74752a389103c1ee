"""
Posterior mean prediction and pathwise posterior sampling.

A posterior sample is a prior draw plus a kernel correction,

    f(.) = mu0 + f0(.) + sum_i c_i k(x_i, .),   c = (K + lambda I)^-1 (y - mu0 - (f0(X) + zeta)),

with f0 a random-Fourier-feature prior draw and zeta ~ N(0, lambda I).
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from kernels.features import DEFAULT_PRIOR_FEATURES, FeatureMap, sample_rff
from kernels.kernel import InputMatrix, cross, cross_matvec, gram, kernel_gradient_matvec
from solvers.baselines import CgConfig
from solvers.dispatch import DirectConfig, SolverConfig, solve
from solvers.objective import RegressionProblem
from utils.config import settings
from utils.errors import (
    CapExceededError,
    ConfigError,
    DivergenceError,
    NumericalError,
    ShapeMismatchError,
    UnsupportedFamilyError,
)
from utils.log import get_logger
from utils.rng import Stream, make_rng

logger = get_logger(__name__)

DEFAULT_NLL_SAMPLES = 64


@dataclass(frozen=True, eq=False)
class PosteriorSample:
    feature_map: FeatureMap
    weights: np.ndarray
    coefficients: np.ndarray
    noise_draw: np.ndarray
    prior_mean: float = 0.0
    seed: int = 0
    index: int = 0

    def prior(self, A: Union[InputMatrix, np.ndarray]) -> np.ndarray:
        return self.feature_map.function(A, self.weights)

    def evaluate(self, p: RegressionProblem, A: InputMatrix) -> np.ndarray:
        """f0(a) + sum_i c_i k(x_i, a) + mu0 for every row a of A."""
        _check_coefficients(p, self.coefficients)
        return self.prior(A) + cross_matvec(p.kernel, A, p.X, self.coefficients) + self.prior_mean

    def gradient(self, p: RegressionProblem, points: np.ndarray) -> np.ndarray:
        """Analytic input gradient at each point, shape (s, d)."""
        return self.feature_map.gradient(points, self.weights) + kernel_gradient_matvec(
            p.kernel, points, p.X, self.coefficients
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "index": self.index,
            "prior_mean": self.prior_mean,
            "feature_map": self.feature_map.to_dict(),
            "weights": self.weights.tolist(),
            "coefficients": self.coefficients.tolist(),
            "noise_draw": self.noise_draw.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorSample":
        try:
            return cls(
                feature_map=FeatureMap.from_dict(data["feature_map"]),
                weights=np.asarray(data["weights"], dtype=np.float64),
                coefficients=np.asarray(data["coefficients"], dtype=np.float64),
                noise_draw=np.asarray(data["noise_draw"], dtype=np.float64),
                prior_mean=float(data["prior_mean"]),
                seed=int(data["seed"]),
                index=int(data.get("index", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"posterior sample artifact is missing {e}") from e

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "PosteriorSample":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_coefficients(p: RegressionProblem, coeff: np.ndarray) -> None:
    if coeff.shape[0] != p.n:
        raise ShapeMismatchError(f"{coeff.shape[0]} coefficients for {p.n} training points")


def mean_predict(coeff: np.ndarray, p: RegressionProblem, A_test: InputMatrix) -> np.ndarray:
    """mu0 + sum_i coeff_i k(x_i, a) per test row a."""
    coeff = np.asarray(coeff, dtype=np.float64)
    _check_coefficients(p, coeff)
    return p.kernel.prior_mean + cross_matvec(p.kernel, A_test, p.X, coeff)


def _targets(p: RegressionProblem, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (p.n,):
        raise ShapeMismatchError(f"y must have shape ({p.n},), got {y.shape}")
    return y


def _solve(p: RegressionProblem, b: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    report = solve(p.with_targets(b), cfg)
    if report.diverged:
        raise DivergenceError(f"posterior solve diverged after {report.steps} steps")
    return report.coefficients


async def _solve_column_async(p: RegressionProblem, b: np.ndarray, cfg: SolverConfig, sem: asyncio.Semaphore):
    async with sem:
        return await asyncio.to_thread(_solve, p, b, cfg)


async def _solve_columns_async(p: RegressionProblem, B: np.ndarray, cfg: SolverConfig, workers: int):
    sem = asyncio.Semaphore(workers)
    tasks = [_solve_column_async(p, B[:, k], cfg, sem) for k in range(B.shape[1])]
    return await asyncio.gather(*tasks)


def solve_many(p: RegressionProblem, B: np.ndarray, cfg: SolverConfig, workers: int = 1) -> np.ndarray:
    """
    alpha*(b_k) for every column of B. CG runs one solve per column (fanned out
    over `workers`); every other solver takes all columns in one multi-RHS run.
    """
    if B.ndim == 1:
        return _solve(p, B, cfg)
    if isinstance(cfg, CgConfig):
        columns = asyncio.run(_solve_columns_async(p, B, cfg, workers))
        return np.stack(columns, axis=1)
    return _solve(p, B, cfg)


def _prior_draws(
    p: RegressionProblem,
    m_features: int,
    seed: int,
    indices: Sequence[int],
    zero_draw: bool,
    key: Tuple[int, ...] = (),
) -> Tuple[List[FeatureMap], np.ndarray, np.ndarray]:
    if not p.kernel.is_stationary:
        raise UnsupportedFamilyError(f"pathwise sampling needs random features; {p.kernel.family.value} has none")
    fmaps, weights, noises = [], [], []
    for k in indices:
        fmaps.append(sample_rff(p.kernel, m_features, seed, p.X.d, *key, k))
        if zero_draw:
            weights.append(np.zeros(m_features))
            noises.append(np.zeros(p.n))
        else:
            weights.append(make_rng(seed, Stream.WEIGHTS, *key, k).standard_normal(m_features))
            noises.append(np.sqrt(p.noise) * make_rng(seed, Stream.NOISE, *key, k).standard_normal(p.n))
    return fmaps, np.stack(weights, axis=1), np.stack(noises, axis=1)


def draw_pathwise_many(
    p: RegressionProblem,
    y: np.ndarray,
    count: int,
    m_features: int = DEFAULT_PRIOR_FEATURES,
    solver_cfg: Optional[SolverConfig] = None,
    seed: int = 0,
    zero_draw: bool = False,
    mean_solver_cfg: Optional[SolverConfig] = None,
    mean_coefficients: Optional[np.ndarray] = None,
    workers: int = 1,
    key: Tuple[int, ...] = (),
) -> List[PosteriorSample]:
    """
    `count` independent posterior samples; sample k draws from the random
    streams keyed by (*key, k).

    Without a mean config every sample solves for y - mu0 - (f0(X) + zeta)
    directly. With `mean_solver_cfg` (or precomputed `mean_coefficients`) the
    mean alpha*(y - mu0) is solved once and each sample only solves for its
    correction alpha*(f0(X) + zeta), which may use a different step size.
    """
    if count < 1:
        raise ConfigError(f"count must be positive, got {count}")
    y = _targets(p, y)
    solver_cfg = solver_cfg or DirectConfig()
    indices = list(range(count))
    fmaps, W, Zeta = _prior_draws(p, m_features, seed, indices, zero_draw, key)
    prior_at_X = np.stack([fm.function(p.X, W[:, k]) for k, fm in enumerate(fmaps)], axis=1)
    perturbation = prior_at_X + Zeta

    logger.info(f"🎲 Drawing {count} pathwise samples (n={p.n}, m={m_features})")
    centred = y - p.kernel.prior_mean
    if mean_coefficients is None and mean_solver_cfg is not None:
        mean_coefficients = _solve(p, centred, mean_solver_cfg)
    if mean_coefficients is None:
        C = solve_many(p, centred[:, None] - perturbation, solver_cfg, workers)
    else:
        mean_coefficients = np.asarray(mean_coefficients, dtype=np.float64)
        _check_coefficients(p, mean_coefficients)
        C = mean_coefficients[:, None] - solve_many(p, perturbation, solver_cfg, workers)

    return [
        PosteriorSample(
            feature_map=fmaps[k],
            weights=W[:, k].copy(),
            coefficients=C[:, k].copy(),
            noise_draw=Zeta[:, k].copy(),
            prior_mean=p.kernel.prior_mean,
            seed=seed,
            index=k,
        )
        for k in indices
    ]


def draw_pathwise(
    p: RegressionProblem,
    y: np.ndarray,
    m_features: int = DEFAULT_PRIOR_FEATURES,
    solver_cfg: Optional[SolverConfig] = None,
    seed: int = 0,
    zero_draw: bool = False,
    mean_coefficients: Optional[np.ndarray] = None,
) -> PosteriorSample:
    """One posterior sample; `zero_draw` forces w = 0 and zeta = 0 (the mean)."""
    return draw_pathwise_many(
        p, y, 1, m_features, solver_cfg, seed, zero_draw, mean_coefficients=mean_coefficients
    )[0]


def evaluate_many(samples: Sequence[PosteriorSample], p: RegressionProblem, A: InputMatrix) -> np.ndarray:
    """Sample evaluations as an (a, k) matrix, sharing one kernel pass over A."""
    if not samples:
        return np.zeros((A.n, 0))
    C = np.stack([s.coefficients for s in samples], axis=1)
    _check_coefficients(p, C)
    priors = np.stack([s.prior(A) for s in samples], axis=1)
    prior_means = np.array([s.prior_mean for s in samples])
    return priors + cross_matvec(p.kernel, A, p.X, C) + prior_means[None, :]


def exact_posterior(
    p: RegressionProblem, y: np.ndarray, A_test: InputMatrix, cap: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Dense closed-form posterior mean and covariance at the rows of A_test."""
    cap = cap or settings.oracle_cap
    if p.n > cap or A_test.n > cap:
        raise CapExceededError(f"exact posterior refused: n={p.n}, test={A_test.n}, cap={cap}")
    prior_cov = gram(p.kernel, A_test, cap=max(A_test.n**2, 1))
    mu0 = p.kernel.prior_mean
    if p.n == 0:
        return np.full(A_test.n, mu0), prior_cov

    y = _targets(p, y)
    system = gram(p.kernel, p.X, cap=p.n**2)
    system[np.diag_indices_from(system)] += p.noise
    try:
        factor = linalg.cho_factor(system, lower=True)
    except linalg.LinAlgError as e:
        raise NumericalError(f"Cholesky of K + lambda I failed: {e}") from e
    K_xa = cross(p.kernel, p.X, A_test)
    mean = mu0 + K_xa.T @ linalg.cho_solve(factor, y - mu0)
    cov = prior_cov - K_xa.T @ linalg.cho_solve(factor, K_xa)
    return mean, 0.5 * (cov + cov.T)


def gaussian_nll(mean: np.ndarray, var: np.ndarray, y: np.ndarray, noise: float) -> float:
    """Mean Gaussian NLL of y under N(mean, var + noise), per point."""
    total = np.asarray(var, dtype=np.float64) + noise
    if np.any(total <= 0):
        raise NumericalError("predictive variance must be positive")
    resid = np.asarray(y, dtype=np.float64) - mean
    return float(np.mean(0.5 * np.log(2.0 * np.pi * total) + resid**2 / (2.0 * total)))


def predictive_nll(
    samples: Sequence[PosteriorSample], p: RegressionProblem, test_X: InputMatrix, test_y: np.ndarray
) -> float:
    """
    NLL of test_y with per-point mean and variance estimated from the sample
    evaluations (unbiased variance), plus the observation noise lambda.
    """
    if len(samples) < 2:
        raise ConfigError(f"predictive_nll needs at least 2 samples, got {len(samples)}")
    test_y = np.asarray(test_y, dtype=np.float64)
    if test_y.shape != (test_X.n,):
        raise ShapeMismatchError(f"test_y must have shape ({test_X.n},), got {test_y.shape}")
    F = evaluate_many(samples, p, test_X)
    return gaussian_nll(F.mean(axis=1), F.var(axis=1, ddof=1), test_y, p.noise)
