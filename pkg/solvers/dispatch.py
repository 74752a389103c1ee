"""One entry point over every solver config."""

from __future__ import annotations

from dataclasses import dataclass
from time import perf_counter
from typing import Optional, Union

from solvers.baselines import CgConfig, GdConfig, SgdConfig, cg_solve, gd_solve, pivoted_cholesky, sgd_solve
from solvers.objective import RegressionProblem, direct_solve
from solvers.sdd import Probes, SddConfig, SolveReport, Termination, _TraceRecorder, sdd_solve
from utils.errors import ConfigError


@dataclass(frozen=True)
class DirectConfig:
    cap: Optional[int] = None


SolverConfig = Union[SddConfig, SgdConfig, GdConfig, CgConfig, DirectConfig]


def solve(p: RegressionProblem, cfg: SolverConfig, probes: Optional[Probes] = None) -> SolveReport:
    if isinstance(cfg, SddConfig):
        return sdd_solve(p, cfg, probes)
    if isinstance(cfg, SgdConfig):
        return sgd_solve(p, cfg, probes)
    if isinstance(cfg, GdConfig):
        return gd_solve(p, cfg.objective, cfg.step_size_times_n, cfg.steps, cfg.momentum, probes, cfg.snapshot_every)
    if isinstance(cfg, CgConfig):
        precond = pivoted_cholesky(p, min(cfg.preconditioner_rank, p.n)) if cfg.preconditioner_rank else None
        return cg_solve(p, cfg.tol, cfg.max_iters, precond, probes, cfg.snapshot_every)
    if isinstance(cfg, DirectConfig):
        start = perf_counter()
        recorder = _TraceRecorder(p, probes)
        coefficients = direct_solve(p, cfg.cap)
        return SolveReport(
            coefficients=coefficients,
            trace=recorder.finish(0, coefficients),
            termination=Termination.COMPLETED,
            steps=0,
            seconds=perf_counter() - start,
        )
    raise ConfigError(f"no solver for config of type {type(cfg).__name__}")
