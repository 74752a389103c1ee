"""
Baseline solvers: full-batch gradient descent on the primal or dual objective,
SGD with the mixed primal estimator, and (pivoted-Cholesky preconditioned)
conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Union

import numpy as np
from scipy import linalg

from kernels.features import sample_rff
from solvers.estimators import DEFAULT_CLIP_NORM, sgd_mixed_estimate
from solvers.objective import RegressionProblem, dual_grad, primal_grad
from solvers.sdd import (
    DEFAULT_MOMENTUM,
    TAIL_FRACTION,
    Averaging,
    DualState,
    Probes,
    SolveReport,
    Termination,
    _TraceRecorder,
    averaging_update,
    default_averaging,
    run_momentum,
)
from utils.errors import ConfigError, NumericalError, ShapeMismatchError, UnsupportedFamilyError
from utils.log import get_logger
from utils.rng import Stream, make_rng

logger = get_logger(__name__)

DEFAULT_CG_TOLERANCE = 0.01
DEFAULT_CG_MAX_ITERS = 1000
DEFAULT_PRECONDITIONER_RANK = 100
CG_RESIDUAL_REFRESH = 10


class Objective(str, Enum):
    PRIMAL = "primal"
    DUAL = "dual"


# -------- Full-batch gradient descent --------
@dataclass(frozen=True)
class GdConfig:
    objective: Objective = Objective.DUAL
    step_size_times_n: float = 1.0
    steps: int = 1000
    momentum: float = 0.0
    snapshot_every: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "objective", Objective(self.objective))
        except ValueError as e:
            raise ConfigError(f"objective must be primal or dual, got {self.objective!r}") from e
        if self.steps < 0 or not self.step_size_times_n > 0 or not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"invalid gradient descent config: {self}")


def gd_solve(
    p: RegressionProblem,
    objective: Union[Objective, str],
    step_size_times_n: float,
    steps: int,
    momentum: float = 0.0,
    probes: Optional[Probes] = None,
    snapshot_every: int = 0,
) -> SolveReport:
    """Full-batch (Nesterov) gradient descent; returns the last iterate."""
    cfg = GdConfig(objective, step_size_times_n, steps, momentum, snapshot_every)
    grad = primal_grad if cfg.objective is Objective.PRIMAL else dual_grad

    def last(state: DualState) -> np.ndarray:
        return averaging_update(Averaging.LAST, state)

    return run_momentum(
        p,
        steps=cfg.steps,
        step_size=cfg.step_size_times_n / p.n,
        momentum=cfg.momentum,
        gradient=lambda t, theta: grad(p, theta),
        averaging=last,
        probes=probes,
        snapshot_every=cfg.snapshot_every,
        name=f"GD[{cfg.objective.value}]",
    )


def max_stable_step_size(
    p: RegressionProblem,
    objective: Union[Objective, str],
    low: float,
    high: float,
    steps: int = 2000,
    iters: int = 20,
) -> float:
    """
    Largest beta*n (within the bracket) for which full-batch gradient descent
    does not diverge in `steps` steps; bisection in log space.
    """
    if not 0 < low < high:
        raise ConfigError(f"need 0 < low < high, got ({low}, {high})")

    def stable(step_size_times_n: float) -> bool:
        return not gd_solve(p, objective, step_size_times_n, steps).diverged

    if not stable(low):
        raise ConfigError(f"lower bracket beta*n={low} already diverges")
    if stable(high):
        return high
    for _ in range(iters):
        mid = float(np.sqrt(low * high))
        if stable(mid):
            low = mid
        else:
            high = mid
    return low


# -------- SGD with the mixed primal estimator --------
@dataclass(frozen=True)
class SgdConfig:
    steps: int
    batch_size: int = 512
    step_size_times_n: float = 0.5
    momentum: float = DEFAULT_MOMENTUM
    averaging: Optional[float] = None
    averaging_mode: Averaging = Averaging.GEOMETRIC
    tail_start: Optional[int] = None
    regulariser_features: int = 100
    clip_norm: Optional[float] = DEFAULT_CLIP_NORM
    seed: int = 0
    snapshot_every: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "averaging_mode", Averaging(self.averaging_mode))
        except ValueError as e:
            raise ConfigError(f"invalid averaging_mode: {self.averaging_mode!r}") from e
        if self.steps < 0 or self.batch_size < 1 or not self.step_size_times_n > 0:
            raise ConfigError(f"invalid SGD config: {self}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.averaging is not None and not 0.0 < self.averaging <= 1.0:
            raise ConfigError(f"averaging r must lie in (0, 1], got {self.averaging}")
        if self.regulariser_features < 0:
            raise ConfigError("regulariser_features must be non-negative (0 means exact K)")

    @property
    def r(self) -> float:
        return self.averaging if self.averaging is not None else default_averaging(max(self.steps, 1))

    @property
    def tail(self) -> int:
        return self.tail_start if self.tail_start is not None else int(TAIL_FRACTION * self.steps)


def sgd_solve(p: RegressionProblem, cfg: SgdConfig, probes: Optional[Probes] = None) -> SolveReport:
    """
    Primal SGD: minibatched fit term, fresh random features for the
    regulariser every step, gradient clipping, Nesterov momentum and
    iterate averaging (geometric by default).
    """
    if cfg.batch_size > p.n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds n={p.n}")
    if cfg.regulariser_features and not p.kernel.is_stationary:
        raise UnsupportedFamilyError(
            f"{p.kernel.family.value} kernel has no random features; set regulariser_features=0"
        )
    rng = make_rng(cfg.seed, Stream.BATCH)

    def gradient(t: int, theta: np.ndarray) -> np.ndarray:
        idx = rng.integers(0, p.n, size=cfg.batch_size)
        fmap = (
            sample_rff(p.kernel, cfg.regulariser_features, cfg.seed, p.X.d, t)
            if cfg.regulariser_features
            else None
        )
        return sgd_mixed_estimate(p, theta, idx, fmap, cfg.clip_norm)

    r, tail = cfg.r, cfg.tail
    logger.info(f"🚀 SGD: n={p.n} T={cfg.steps} B={cfg.batch_size} beta*n={cfg.step_size_times_n}")
    return run_momentum(
        p,
        steps=cfg.steps,
        step_size=cfg.step_size_times_n / p.n,
        momentum=cfg.momentum,
        gradient=gradient,
        averaging=lambda state: averaging_update(cfg.averaging_mode, state, r, tail),
        probes=probes,
        snapshot_every=cfg.snapshot_every,
        name="SGD",
    )


# -------- Pivoted Cholesky preconditioner --------
@dataclass(frozen=True, eq=False)
class PivotedCholesky:
    """Low-rank K ~ L L^T; applies (L L^T + lambda I)^-1 by the Woodbury identity."""

    factor: np.ndarray
    pivots: np.ndarray
    noise: float
    residual_traces: np.ndarray

    def __post_init__(self):
        inner = None
        if self.rank:
            inner = linalg.cho_factor(self.noise * np.eye(self.rank) + self.factor.T @ self.factor, lower=True)
        object.__setattr__(self, "_inner", inner)

    @property
    def rank(self) -> int:
        return self.factor.shape[1]

    def apply_inverse(self, z: np.ndarray) -> np.ndarray:
        if self.rank == 0:
            return z / self.noise
        L = self.factor
        return (z - L @ linalg.cho_solve(self._inner, L.T @ z)) / self.noise

    __call__ = apply_inverse


def pivoted_cholesky(p: RegressionProblem, rank: int = DEFAULT_PRECONDITIONER_RANK) -> PivotedCholesky:
    """
    Greedy partial Cholesky of K pivoting on the largest remaining diagonal.
    Stops early once the residual diagonal is numerically zero.
    """
    if rank < 0 or rank > p.n:
        raise ConfigError(f"rank must lie in [0, n={p.n}], got {rank}")
    diag = p.operator.diag().astype(np.float64).copy()
    tiny = 1e-12 * max(float(diag.max(initial=0.0)), 1.0)
    L = np.zeros((p.n, rank))
    pivots: List[int] = []
    traces = [float(diag.sum())]

    for k in range(rank):
        i = int(np.argmax(diag))
        if diag[i] <= tiny:
            break
        column = (p.operator.row(i) - L[:, :k] @ L[i, :k]) / np.sqrt(diag[i])
        L[:, k] = column
        diag -= column**2
        diag[i] = 0.0
        np.maximum(diag, 0.0, out=diag)
        pivots.append(i)
        traces.append(float(diag.sum()))

    return PivotedCholesky(
        factor=L[:, : len(pivots)],
        pivots=np.asarray(pivots, dtype=np.intp),
        noise=p.noise,
        residual_traces=np.asarray(traces),
    )


# -------- Conjugate gradients --------
@dataclass(frozen=True)
class CgConfig:
    tol: float = DEFAULT_CG_TOLERANCE
    max_iters: int = DEFAULT_CG_MAX_ITERS
    preconditioner_rank: int = DEFAULT_PRECONDITIONER_RANK
    snapshot_every: int = 0

    def __post_init__(self):
        if not self.tol > 0 or self.max_iters < 0 or self.preconditioner_rank < 0:
            raise ConfigError(f"invalid CG config: {self}")


def cg_solve(
    p: RegressionProblem,
    tol: float = DEFAULT_CG_TOLERANCE,
    max_iters: int = DEFAULT_CG_MAX_ITERS,
    precond: Optional[PivotedCholesky] = None,
    probes: Optional[Probes] = None,
    snapshot_every: int = 0,
) -> SolveReport:
    """
    Preconditioned CG on (K + lambda I) a = b. Stops once the relative
    Euclidean residual ||(K + lambda I) a - b|| / ||b|| is at most `tol`
    (checked against a freshly computed residual) or after max_iters.
    """
    if p.b.ndim != 1:
        raise ShapeMismatchError("cg_solve handles a single right-hand side")
    b = p.b
    x = np.zeros_like(b)
    recorder = _TraceRecorder(p, probes)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return SolveReport(x, recorder.finish(0, x), Termination.TOLERANCE_REACHED, 0, recorder.elapsed, (0.0,))

    def system(v: np.ndarray) -> np.ndarray:
        return p.kv(v) + p.noise * v

    def precondition(r: np.ndarray) -> np.ndarray:
        return precond(r) if precond is not None else r.copy()

    r = b.copy()
    z = precondition(r)
    d = z.copy()
    rz = float(r @ z)
    residuals = [1.0]
    termination = Termination.COMPLETED
    it = 0

    for it in range(1, max_iters + 1):
        q = system(d)
        curvature = float(d @ q)
        if curvature <= 0:
            raise NumericalError(f"CG met non-positive curvature {curvature} at iteration {it}")
        step = rz / curvature
        x += step * d
        if it % CG_RESIDUAL_REFRESH == 0:
            r = b - system(x)
        else:
            r -= step * q
        rel = float(np.linalg.norm(r)) / b_norm
        if rel <= tol:
            r = b - system(x)
            rel = float(np.linalg.norm(r)) / b_norm
        residuals.append(rel)
        if snapshot_every and it % snapshot_every == 0:
            recorder.record(it, x)
        if rel <= tol:
            termination = Termination.TOLERANCE_REACHED
            break
        z = precondition(r)
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new

    logger.info(
        f"✅ CG stopped after {it} iterations ({termination.value}, rel. residual {residuals[-1]:.3g})"
    )
    return SolveReport(
        coefficients=x,
        trace=recorder.finish(it, x),
        termination=termination,
        steps=it,
        seconds=recorder.elapsed,
        residual_norms=tuple(residuals),
    )
