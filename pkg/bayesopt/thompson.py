"""
Parallel Thompson sampling on [0, 1]^d against synthetic GP-prior targets.

Each round draws `acquisition_batch` pathwise posterior samples, maximises
every sample by multi-start projected gradient ascent, observes the target at
the maximisers and appends them to the training set.
"""

from __future__ import annotations

import asyncio
import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from time import perf_counter
from typing import List, NamedTuple, Optional, Protocol, Tuple, Union

import numpy as np

from kernels.features import DEFAULT_PRIOR_FEATURES, FeatureMap, sample_rff
from kernels.kernel import InputMatrix, KernelFamily, KernelSpec
from posterior.pathwise import PosteriorSample, draw_pathwise_many
from solvers.dispatch import SolverConfig
from solvers.objective import RegressionProblem
from solvers.sdd import SddConfig
from utils.errors import ConfigError, ShapeMismatchError
from utils.log import get_logger
from utils.rng import Stream, make_rng

logger = get_logger(__name__)

THOMPSON_HEADER = ("round", "n_observations", "best_value", "seconds")
LENGTH_SCALE_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)
INNER_STEPS = 15_000
MEAN_STEP_SIZE_TIMES_N = 3.0
SAMPLE_STEP_SIZE_TIMES_N = 0.003


class Acquisition(str, Enum):
    THOMPSON = "thompson"
    RANDOM = "random"


class Maximisable(Protocol):
    def value(self, points: np.ndarray) -> np.ndarray: ...

    def gradient(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class MaximiserConfig:
    """Uniform starts (plus the incumbent), fixed-step projected gradient ascent."""

    num_starts: int = 50
    grad_steps: int = 100
    grad_step_size: Optional[float] = None

    def __post_init__(self):
        if self.num_starts < 1 or self.grad_steps < 0:
            raise ConfigError(f"invalid maximiser config: {self}")
        if self.grad_step_size is not None and not self.grad_step_size > 0:
            raise ConfigError(f"grad_step_size must be positive, got {self.grad_step_size}")

    def step_size_for(self, length_scale: float, dim: int) -> float:
        """Default 10 l^2 / d."""
        return self.grad_step_size if self.grad_step_size is not None else 10.0 * length_scale**2 / dim


@dataclass(frozen=True)
class ThompsonConfig:
    dim: int = 8
    length_scale: float = 0.3
    amplitude: float = 1.0
    family: KernelFamily = KernelFamily.MATERN32
    init_points: int = 50_000
    acquisition_batch: int = 1000
    rounds: int = 30
    observation_noise_var: float = 1e-6
    target_features: int = DEFAULT_PRIOR_FEATURES
    prior_features: int = DEFAULT_PRIOR_FEATURES
    mean_solver: Optional[SolverConfig] = None
    sample_solver: Optional[SolverConfig] = None
    maximiser: MaximiserConfig = field(default_factory=MaximiserConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", KernelFamily(self.family))
        except ValueError as e:
            raise ConfigError(f"unknown kernel family {self.family!r}") from e
        counts = ("dim", "init_points", "acquisition_batch", "target_features", "prior_features", "workers")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        defaults = (("mean_solver", MEAN_STEP_SIZE_TIMES_N), ("sample_solver", SAMPLE_STEP_SIZE_TIMES_N))
        for name, step_size_times_n in defaults:
            if getattr(self, name) is None:
                default = SddConfig(INNER_STEPS, step_size_times_n=step_size_times_n, seed=self.seed)
                object.__setattr__(self, name, default)
        if self.rounds < 0:
            raise ConfigError(f"rounds must be non-negative, got {self.rounds}")
        if not self.observation_noise_var > 0:
            raise ConfigError("observation_noise_var must be positive")
        if not self.length_scale > 0 or not self.amplitude > 0:
            raise ConfigError("length_scale and amplitude must be positive")
        if self.family is KernelFamily.TANIMOTO:
            raise ConfigError("Thompson sampling needs a stationary kernel")

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(
            family=self.family,
            length_scale=self.length_scale,
            amplitude=self.amplitude,
            noise=self.observation_noise_var,
        )

    @property
    def total_evaluations(self) -> int:
        return self.init_points + self.rounds * self.acquisition_batch


@dataclass(frozen=True, eq=False)
class TargetFunction:
    """A fixed prior draw g(x) = sum_j w_j phi_j(x)."""

    feature_map: FeatureMap
    weights: np.ndarray

    def value(self, points: np.ndarray) -> np.ndarray:
        return self.feature_map.function(points, self.weights)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return self.feature_map.gradient(points, self.weights)


@dataclass(frozen=True, eq=False)
class SampleFunction:
    """A posterior sample viewed as a function of raw points."""

    sample: PosteriorSample
    problem: RegressionProblem

    def value(self, points: np.ndarray) -> np.ndarray:
        return self.sample.evaluate(self.problem, InputMatrix(np.atleast_2d(points)))

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return self.sample.gradient(self.problem, points)


def synth_target(cfg: ThompsonConfig) -> TargetFunction:
    fmap = sample_rff(cfg.kernel, cfg.target_features, cfg.seed, cfg.dim)
    weights = make_rng(cfg.seed, Stream.TARGET).standard_normal(cfg.target_features)
    return TargetFunction(fmap, weights)


def maximise(
    fn: Maximisable,
    dim: int,
    cfg: MaximiserConfig,
    rng: np.random.Generator,
    incumbent: Optional[np.ndarray] = None,
    length_scale: float = 1.0,
) -> np.ndarray:
    """Best point found by projected gradient ascent from every start."""
    starts = rng.uniform(0.0, 1.0, size=(cfg.num_starts, dim))
    if incumbent is not None:
        incumbent = np.asarray(incumbent, dtype=np.float64).reshape(1, -1)
        if incumbent.shape[1] != dim:
            raise ShapeMismatchError(f"incumbent has d={incumbent.shape[1]}, expected {dim}")
        starts = np.vstack([starts, incumbent])
    step = cfg.step_size_for(length_scale, dim)

    x = starts.copy()
    for _ in range(cfg.grad_steps):
        x = np.clip(x + step * fn.gradient(x), 0.0, 1.0)

    candidates = np.vstack([starts, x])
    values = fn.value(candidates)
    return candidates[int(np.argmax(values))]


class ThompsonRow(NamedTuple):
    round: int
    n_observations: int
    best_value: float
    seconds: float


@dataclass
class ThompsonState:
    X: np.ndarray
    y: np.ndarray
    best_value: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def incumbent(self) -> np.ndarray:
        return self.X[int(np.argmax(self.y))]


def _observe(target: TargetFunction, points: np.ndarray, cfg: ThompsonConfig, round_index: int) -> Tuple[np.ndarray, np.ndarray]:
    clean = target.value(points)
    eps = make_rng(cfg.seed, Stream.OBSERVATION, round_index).standard_normal(len(points))
    return clean, clean + np.sqrt(cfg.observation_noise_var) * eps


def initial_state(cfg: ThompsonConfig, target: TargetFunction) -> ThompsonState:
    X = make_rng(cfg.seed, Stream.INPUTS, 0).uniform(0.0, 1.0, size=(cfg.init_points, cfg.dim))
    clean, y = _observe(target, X, cfg, 0)
    return ThompsonState(X=X, y=y, best_value=float(clean.max()))


async def _maximise_async(
    fn: Maximisable, cfg: ThompsonConfig, rng: np.random.Generator, incumbent: np.ndarray, sem: asyncio.Semaphore
) -> np.ndarray:
    async with sem:
        return await asyncio.to_thread(
            maximise, fn, cfg.dim, cfg.maximiser, rng, incumbent, cfg.length_scale
        )


async def _maximise_all(fns: List[Maximisable], cfg: ThompsonConfig, round_index: int, incumbent: np.ndarray):
    sem = asyncio.Semaphore(cfg.workers)
    tasks = [
        _maximise_async(fn, cfg, make_rng(cfg.seed, Stream.STARTS, round_index, k), incumbent, sem)
        for k, fn in enumerate(fns)
    ]
    return await asyncio.gather(*tasks)


def fit_batch(solver: SolverConfig, n: int) -> SolverConfig:
    """SDD never samples more coordinates than there are observations."""
    if isinstance(solver, SddConfig) and solver.batch_size > n:
        return replace(solver, batch_size=n)
    return solver


def acquire_batch(state: ThompsonState, cfg: ThompsonConfig, round_index: int = 1) -> np.ndarray:
    """One maximiser per pathwise posterior sample; rows lie in [0, 1]^d."""
    p = RegressionProblem(cfg.kernel, InputMatrix(state.X), state.y)
    samples = draw_pathwise_many(
        p,
        state.y,
        cfg.acquisition_batch,
        m_features=cfg.prior_features,
        solver_cfg=fit_batch(cfg.sample_solver, p.n),
        seed=cfg.seed,
        mean_solver_cfg=fit_batch(cfg.mean_solver, p.n),
        workers=cfg.workers,
        key=(round_index,),
    )
    fns = [SampleFunction(s, p) for s in samples]
    points = asyncio.run(_maximise_all(fns, cfg, round_index, state.incumbent))
    return np.stack(points)


def random_acquisition(cfg: ThompsonConfig, round_index: int) -> np.ndarray:
    """Uniform control with the same number of points per round."""
    return make_rng(cfg.seed, Stream.INPUTS, round_index).uniform(
        0.0, 1.0, size=(cfg.acquisition_batch, cfg.dim)
    )


def run(cfg: ThompsonConfig, acquisition: Union[Acquisition, str] = Acquisition.THOMPSON) -> List[ThompsonRow]:
    """Trace of best noiseless target value seen, one row per round (round 0 is the initial set)."""
    acquisition = Acquisition(acquisition)
    start = perf_counter()
    target = synth_target(cfg)
    state = initial_state(cfg, target)
    trace = [ThompsonRow(0, state.n, state.best_value, perf_counter() - start)]
    logger.info(f"🚀 {acquisition.value} run: d={cfg.dim} n0={state.n} best={state.best_value:.4f}")

    for r in range(1, cfg.rounds + 1):
        if acquisition is Acquisition.THOMPSON:
            points = acquire_batch(state, cfg, r)
        else:
            points = random_acquisition(cfg, r)
        clean, y_new = _observe(target, points, cfg, r)
        state.X = np.vstack([state.X, points])
        state.y = np.concatenate([state.y, y_new])
        state.best_value = max(state.best_value, float(clean.max()))
        trace.append(ThompsonRow(r, state.n, state.best_value, perf_counter() - start))
        logger.info(f"✅ round {r}: n={state.n} best={state.best_value:.4f}")

    return trace


def write_trace(rows: List[ThompsonRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(THOMPSON_HEADER)
        writer.writerows(rows)
    return path
