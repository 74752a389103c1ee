"""
Ablation grids over {objective} x {estimator} x {beta*n} x {B} x {averaging}.

Cells run concurrently (bounded by `workers`); each writes its own trace file,
and a failed or diverged cell is recorded in the summary without stopping the grid.
"""

from __future__ import annotations

import asyncio
import csv
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.pipeline import Prepared
from app.run_config import FULL_BATCH, AblationConfig, RunConfig, grid_cells
from solvers.baselines import GdConfig, SgdConfig
from solvers.dispatch import SolverConfig, solve
from solvers.sdd import SddConfig
from utils.log import get_logger

logger = get_logger(__name__)

SUMMARY_HEADER = (
    "cell",
    "objective",
    "estimator",
    "step_size_times_n",
    "batch_size",
    "averaging_mode",
    "status",
    "steps",
    "seconds",
    "final_knorm_sq",
    "final_k2norm_sq",
    "final_rmse",
    "trace_file",
)


def cell_config(cell: Dict[str, Any], ab: AblationConfig, seed: int) -> Optional[SolverConfig]:
    """
    Solver for one grid cell, or None for combinations with no solver:
    full-batch cells run gradient descent (last iterate only), dual stochastic
    cells run SDD with the chosen estimator, primal stochastic cells run SGD
    with the mixed coordinate estimator.
    """
    objective, estimator = cell["objective"], cell["estimator"]
    if estimator == FULL_BATCH:
        if cell["averaging_mode"] != "last":
            return None
        return GdConfig(
            objective=objective,
            step_size_times_n=cell["step_size_times_n"],
            steps=ab.steps,
            momentum=ab.momentum,
            snapshot_every=ab.snapshot_every,
        )
    if objective == "dual":
        return SddConfig(
            steps=ab.steps,
            batch_size=cell["batch_size"],
            step_size_times_n=cell["step_size_times_n"],
            momentum=ab.momentum,
            averaging=ab.averaging,
            averaging_mode=cell["averaging_mode"],
            estimator=estimator,
            seed=seed,
            snapshot_every=ab.snapshot_every,
        )
    if estimator == "coordinates":
        return SgdConfig(
            steps=ab.steps,
            batch_size=cell["batch_size"],
            step_size_times_n=cell["step_size_times_n"],
            momentum=ab.momentum,
            averaging=ab.averaging,
            averaging_mode=cell["averaging_mode"],
            regulariser_features=ab.regulariser_features,
            seed=seed,
            snapshot_every=ab.snapshot_every,
        )
    return None


def run_cell(k: int, cell: Dict[str, Any], cfg: RunConfig, prepared: Prepared, out: Path) -> Dict[str, Any]:
    row: Dict[str, Any] = {"cell": k, **cell, "status": "", "steps": "", "seconds": "",
                           "final_knorm_sq": "", "final_k2norm_sq": "", "final_rmse": "", "trace_file": ""}
    solver_cfg = cell_config(cell, cfg.ablate, cfg.seed)
    if solver_cfg is None:
        row["status"] = "skipped"
        return row
    report = solve(prepared.problem, solver_cfg, prepared.probes)
    trace_path = report.to_csv(out / "cells" / f"cell_{k:03d}.csv")
    final = report.final
    row.update(
        status=report.termination.value,
        steps=report.steps,
        seconds=report.seconds,
        final_knorm_sq="" if final.knorm_sq is None else final.knorm_sq,
        final_k2norm_sq="" if final.k2norm_sq is None else final.k2norm_sq,
        final_rmse="" if final.rmse is None else final.rmse,
        trace_file=trace_path.relative_to(out).as_posix(),
    )
    return row


async def run_cell_async(k, cell, cfg, prepared, out, sem: asyncio.Semaphore) -> Dict[str, Any]:
    """Run one cell in a worker thread; failures are logged and recorded."""
    async with sem:
        try:
            row = await asyncio.to_thread(run_cell, k, cell, cfg, prepared, out)
            logger.info(f"✅ cell {k} {cell} → {row['status']}")
            return row
        except Exception as e:
            logger.warning(f"⚠️ cell {k} failed: {e}")
            return {"cell": k, **cell, "status": f"failed: {type(e).__name__}: {e}"}


async def run_grid(cfg: RunConfig, prepared: Prepared, out: Path) -> List[Dict[str, Any]]:
    cells = grid_cells(cfg)
    logger.info(f"🚀 Running {len(cells)} ablation cells on {cfg.workers} worker(s)...")
    sem = asyncio.Semaphore(cfg.workers)
    tasks = [run_cell_async(k, cell, cfg, prepared, out, sem) for k, cell in enumerate(cells)]
    return await asyncio.gather(*tasks)


def write_summary(rows: List[Dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_HEADER, restval="")
        writer.writeheader()
        writer.writerows(rows)
    return path
