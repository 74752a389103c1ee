"""
Stochastic dual descent.

    v_0 = a_0 = abar_0 = 0
    for t = 1..T:
        I_t ~ uniform({1..n})^B                       (with replacement)
        g_t = (n/B) sum_{i in I_t} ((K_i + lambda e_i)^T (a_{t-1} + rho v_{t-1}) - b_i) e_i
        v_t = rho v_{t-1} - beta g_t
        a_t = a_{t-1} + v_t
        abar_t = r a_t + (1 - r) abar_{t-1}
    return abar_T

The momentum loop here is shared with the full-batch and SGD baselines.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from time import perf_counter
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from kernels.features import sample_rff
from kernels.kernel import InputMatrix, cross_matvec
from solvers.estimators import SparseGradient, rb_rc_estimate, rc_batch, rf_estimate
from solvers.objective import RegressionProblem, k2_norm_sq, k_norm_sq
from utils.errors import ConfigError, ShapeMismatchError, UnsupportedFamilyError
from utils.log import get_logger
from utils.rng import Stream, make_rng

logger = get_logger(__name__)

DIVERGENCE_FACTOR = 1e12
DEFAULT_MOMENTUM = 0.9
TAIL_FRACTION = 0.7

Gradient = Union[SparseGradient, np.ndarray]


class Averaging(str, Enum):
    GEOMETRIC = "geometric"
    ARITHMETIC_TAIL = "arithmetic_tail"
    LAST = "last"


class Estimator(str, Enum):
    COORDINATES = "coordinates"
    RB_COORDINATES = "rb_coordinates"
    FEATURES = "features"


class Sampling(str, Enum):
    WITH_REPLACEMENT = "with_replacement"
    WITHOUT_REPLACEMENT = "without_replacement"


class Termination(str, Enum):
    COMPLETED = "completed"
    DIVERGED = "diverged"
    TOLERANCE_REACHED = "tolerance_reached"


def default_averaging(steps: int) -> float:
    """r = 100/T, capped at 1 for short runs."""
    return min(1.0, 100.0 / steps)


@dataclass(frozen=True)
class SddConfig:
    steps: int
    batch_size: int = 128
    step_size_times_n: float = 50.0
    momentum: float = DEFAULT_MOMENTUM
    averaging: Optional[float] = None
    averaging_mode: Averaging = Averaging.GEOMETRIC
    tail_start: Optional[int] = None
    estimator: Estimator = Estimator.COORDINATES
    sampling: Sampling = Sampling.WITH_REPLACEMENT
    seed: int = 0
    snapshot_every: int = 0

    def __post_init__(self):
        for name, kind in (("averaging_mode", Averaging), ("estimator", Estimator), ("sampling", Sampling)):
            try:
                object.__setattr__(self, name, kind(getattr(self, name)))
            except ValueError as e:
                raise ConfigError(f"invalid {name}: {getattr(self, name)!r}") from e
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if not self.step_size_times_n > 0:
            raise ConfigError(f"step_size_times_n must be positive, got {self.step_size_times_n}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.averaging is not None and not 0.0 < self.averaging <= 1.0:
            raise ConfigError(f"averaging r must lie in (0, 1], got {self.averaging}")
        if self.snapshot_every < 0 or self.seed < 0:
            raise ConfigError("snapshot_every and seed must be non-negative")

    @property
    def r(self) -> float:
        return self.averaging if self.averaging is not None else default_averaging(max(self.steps, 1))

    @property
    def tail(self) -> int:
        return self.tail_start if self.tail_start is not None else int(TAIL_FRACTION * self.steps)

    def validate_for(self, n: int) -> None:
        if self.batch_size > n:
            raise ConfigError(f"batch_size {self.batch_size} exceeds n={n}")

    def to_dict(self) -> dict:
        out = asdict(self)
        for name in ("averaging_mode", "estimator", "sampling"):
            out[name] = out[name].value
        return out


@dataclass
class DualState:
    alpha: np.ndarray
    velocity: np.ndarray
    averaged: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "DualState":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), 0)


class TraceRow(NamedTuple):
    step: int
    seconds: float
    knorm_sq: Optional[float] = None
    k2norm_sq: Optional[float] = None
    rmse: Optional[float] = None


TRACE_HEADER = ("step", "seconds", "knorm_sq", "k2norm_sq", "rmse", "status")


@dataclass(frozen=True, eq=False)
class SolveReport:
    """
    Coefficients plus the snapshot trace. Trace K-norm columns are relative:
    ||a - a*||^2_K / ||a*||^2_K (absolute when a* = 0).
    """

    coefficients: np.ndarray
    trace: Tuple[TraceRow, ...]
    termination: Termination
    steps: int
    seconds: float
    residual_norms: Tuple[float, ...] = ()

    @property
    def diverged(self) -> bool:
        return self.termination is Termination.DIVERGED

    @property
    def final(self) -> Optional[TraceRow]:
        return self.trace[-1] if self.trace else None

    def trace_rows(self) -> List[tuple]:
        out = []
        for k, row in enumerate(self.trace):
            status = self.termination.value if k == len(self.trace) - 1 else "running"
            out.append(tuple("" if v is None else v for v in row) + (status,))
        return out

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(TRACE_HEADER)
            writer.writerows(self.trace_rows())
        return path


@dataclass(frozen=True, eq=False)
class Probes:
    """Snapshot metrics: K/K^2-norm errors need `reference`, RMSE needs the test set."""

    reference: Optional[np.ndarray] = None
    test_X: Optional[InputMatrix] = None
    test_y: Optional[np.ndarray] = None
    callback: Optional[Callable[[int, np.ndarray], None]] = None

    @property
    def active(self) -> bool:
        return self.reference is not None or self.test_X is not None or self.callback is not None


class _TraceRecorder:
    def __init__(self, p: RegressionProblem, probes: Optional[Probes]):
        self.p = p
        self.probes = probes if probes is not None and probes.active else None
        self.rows: List[TraceRow] = []
        self.start = perf_counter()
        self._ref_k = self._ref_k2 = None
        if self.probes is not None and self.probes.reference is not None:
            ref = self.probes.reference
            if ref.shape != p.b.shape:
                raise ShapeMismatchError(f"reference has shape {ref.shape}, expected {p.b.shape}")
            self._ref_k = k_norm_sq(p, ref) or 1.0
            self._ref_k2 = k2_norm_sq(p, ref) or 1.0

    def record(self, step: int, coefficients: np.ndarray) -> None:
        seconds = perf_counter() - self.start
        knorm = k2norm = rmse = None
        if self.probes is not None:
            if self.probes.reference is not None:
                err = coefficients - self.probes.reference
                knorm = k_norm_sq(self.p, err) / self._ref_k
                k2norm = k2_norm_sq(self.p, err) / self._ref_k2
            if self.probes.test_X is not None and coefficients.ndim == 1:
                pred = self.p.kernel.prior_mean + cross_matvec(
                    self.p.kernel, self.probes.test_X, self.p.X, coefficients
                )
                rmse = float(np.sqrt(np.mean((pred - self.probes.test_y) ** 2)))
            if self.probes.callback is not None:
                self.probes.callback(step, coefficients)
            logger.debug(f"step {step}: knorm={knorm} k2norm={k2norm} rmse={rmse}")
        self.rows.append(TraceRow(step, seconds, knorm, k2norm, rmse))

    def finish(self, step: int, coefficients: np.ndarray) -> Tuple[TraceRow, ...]:
        if not self.rows or self.rows[-1].step != step:
            self.record(step, coefficients)
        return tuple(self.rows)

    @property
    def elapsed(self) -> float:
        return perf_counter() - self.start


def averaging_update(
    mode: Union[Averaging, str],
    state: DualState,
    r: Optional[float] = None,
    tail_start: int = 0,
) -> np.ndarray:
    """Update state.averaged in place from state.alpha at step state.t."""
    mode = Averaging(mode)
    if mode is Averaging.LAST:
        np.copyto(state.averaged, state.alpha)
    elif mode is Averaging.GEOMETRIC:
        if r is None or not 0.0 < r <= 1.0:
            raise ConfigError(f"geometric averaging needs r in (0, 1], got {r}")
        state.averaged *= 1.0 - r
        state.averaged += r * state.alpha
    elif state.t < tail_start:
        np.copyto(state.averaged, state.alpha)
    else:
        count = state.t - tail_start + 1
        state.averaged += (state.alpha - state.averaged) / count
    return state.averaged


def run_momentum(
    p: RegressionProblem,
    steps: int,
    step_size: float,
    momentum: float,
    gradient: Callable[[int, np.ndarray], Gradient],
    averaging: Callable[[DualState], np.ndarray],
    probes: Optional[Probes] = None,
    snapshot_every: int = 0,
    name: str = "solver",
) -> SolveReport:
    """
    Nesterov-momentum loop shared by every first-order solver: the gradient is
    evaluated at the lookahead point a + rho v.
    """
    state = DualState.zeros(p.b.shape)
    limit = DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(p.b)))
    recorder = _TraceRecorder(p, probes)
    termination = Termination.COMPLETED

    for t in range(1, steps + 1):
        theta = state.alpha + momentum * state.velocity if momentum else state.alpha
        g = gradient(t, theta)
        state.velocity *= momentum
        if isinstance(g, SparseGradient):
            g.add_to(state.velocity, -step_size)
        else:
            state.velocity -= step_size * g
        state.alpha += state.velocity
        state.t = t
        averaging(state)

        size = float(np.linalg.norm(state.alpha))
        if not np.isfinite(size) or size > limit:
            termination = Termination.DIVERGED
            logger.warning(f"⚠️ {name} diverged at step {t} (|alpha|={size:.3g} > {limit:.3g})")
            break
        if snapshot_every and t % snapshot_every == 0:
            recorder.record(t, state.averaged)

    trace = recorder.finish(state.t, state.averaged)
    if termination is Termination.COMPLETED:
        logger.info(f"✅ {name} finished {state.t} steps in {recorder.elapsed:.1f}s")
    return SolveReport(
        coefficients=state.averaged.copy(),
        trace=trace,
        termination=termination,
        steps=state.t,
        seconds=recorder.elapsed,
    )


def _batch_sampler(cfg: SddConfig, n: int) -> Callable[[], np.ndarray]:
    rng = make_rng(cfg.seed, Stream.BATCH)
    if cfg.sampling is Sampling.WITH_REPLACEMENT:
        return lambda: rng.integers(0, n, size=cfg.batch_size)
    return lambda: rng.choice(n, size=cfg.batch_size, replace=False)


def sdd_solve(p: RegressionProblem, cfg: SddConfig, probes: Optional[Probes] = None) -> SolveReport:
    """Stochastic dual descent for alpha*(b) = (K + lambda I)^-1 b."""
    cfg.validate_for(p.n)
    sample = _batch_sampler(cfg, p.n)

    if cfg.estimator is Estimator.COORDINATES:
        def gradient(t: int, theta: np.ndarray) -> Gradient:
            return rc_batch(p, theta, sample())
    elif cfg.estimator is Estimator.RB_COORDINATES:
        def gradient(t: int, theta: np.ndarray) -> Gradient:
            return rb_rc_estimate(p, theta, sample())
    else:
        if not p.kernel.is_stationary:
            raise UnsupportedFamilyError("the features estimator needs a stationary kernel")
        features = np.arange(cfg.batch_size)

        def gradient(t: int, theta: np.ndarray) -> Gradient:
            fmap = sample_rff(p.kernel, cfg.batch_size, cfg.seed, p.X.d, t)
            return rf_estimate(p, theta, fmap, features)

    r, tail = cfg.r, cfg.tail

    def average(state: DualState) -> np.ndarray:
        return averaging_update(cfg.averaging_mode, state, r, tail)

    logger.info(
        f"🚀 SDD: n={p.n} T={cfg.steps} B={cfg.batch_size} beta*n={cfg.step_size_times_n} "
        f"rho={cfg.momentum} r={r:.4g} estimator={cfg.estimator.value}"
    )
    return run_momentum(
        p,
        steps=cfg.steps,
        step_size=cfg.step_size_times_n / p.n,
        momentum=cfg.momentum,
        gradient=gradient,
        averaging=average,
        probes=probes,
        snapshot_every=cfg.snapshot_every,
        name="SDD",
    )
