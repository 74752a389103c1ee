# main.py: command-line entry point for fit, sample, ablate and thompson
import argparse
import asyncio
import json
import sys
from pathlib import Path
from time import perf_counter
from typing import List, Optional

import numpy as np

from app.ablation import run_grid, write_summary
from app.pipeline import prepare, save_stats, write_manifest, write_vector
from app.run_config import COMMANDS, RunConfig, load_run_config
from bayesopt.thompson import run as run_thompson
from bayesopt.thompson import write_trace
from posterior.pathwise import (
    draw_pathwise_many,
    evaluate_many,
    exact_posterior,
    gaussian_nll,
    mean_predict,
    predictive_nll,
)
from solvers.dispatch import solve
from utils.config import settings
from utils.errors import DivergenceError, NumericalError, SddGpError
from utils.log import get_logger
from utils.metrics import r2, rmse

logger = get_logger("app.main")

# -------- Config --------
EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


# -------- Commands --------
def cmd_fit(cfg: RunConfig, out: Path) -> int:
    """Solve for the representer weights; write coefficients, trace and metrics."""
    start = perf_counter()
    prepared = prepare(cfg)
    report = solve(prepared.problem, cfg.solver, prepared.probes)

    outputs = [
        write_vector(report.coefficients, out / "coefficients.csv"),
        report.to_csv(out / "trace.csv"),
        *save_stats(prepared, out),
    ]
    results = {"termination": report.termination.value, "steps": report.steps}
    final = report.final
    if final is not None:
        results.update(final_knorm_sq=final.knorm_sq, final_k2norm_sq=final.k2norm_sq)
    if prepared.test is not None:
        pred = mean_predict(report.coefficients, prepared.problem, prepared.test.X)
        results["test_rmse"] = rmse(pred, prepared.test.y)
        results["test_r2"] = r2(pred, prepared.test.y) if np.ptp(prepared.test.y) > 0 else None
        outputs.append(write_vector(pred, out / "predictions.csv"))

    write_manifest(cfg, out, outputs, results, {"seconds": perf_counter() - start})
    if report.diverged:
        logger.error(f"❌ {type(cfg.solver).__name__} diverged after {report.steps} steps")
        return EXIT_NUMERICAL
    logger.info(f"💾 Fit artifacts saved → {out}")
    return EXIT_OK


def cmd_sample(cfg: RunConfig, out: Path) -> int:
    """Draw pathwise posterior samples; write them and the test NLL."""
    start = perf_counter()
    prepared = prepare(cfg)
    p = prepared.problem
    y = prepared.train.y
    sc = cfg.sample
    samples = draw_pathwise_many(
        p,
        y,
        sc.count,
        m_features=sc.m_features,
        solver_cfg=cfg.solver,
        seed=cfg.seed,
        zero_draw=sc.zero_draw,
        mean_solver_cfg=sc.mean_solver,
        workers=cfg.workers,
    )
    outputs = [s.to_json(out / "samples" / f"sample_{s.index:03d}.json") for s in samples]
    outputs += save_stats(prepared, out)

    results = {"count": len(samples)}
    test = prepared.test
    if test is not None:
        F = evaluate_many(samples, p, test.X)
        outputs.append(write_vector(F.mean(axis=1), out / "predictions.csv"))
        if len(samples) >= 2:
            results["nll"] = predictive_nll(samples, p, test.X, test.y)
        if p.n <= settings.oracle_cap and test.n <= settings.oracle_cap:
            mean, cov = exact_posterior(p, y, test.X)
            results["oracle_nll"] = gaussian_nll(mean, np.diag(cov), test.y, p.noise)

    outputs.append(out / "nll.json")
    (out / "nll.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(cfg, out, outputs, results, {"seconds": perf_counter() - start})
    logger.info(f"💾 {len(samples)} samples saved → {out / 'samples'}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, out: Path) -> int:
    """Run every grid cell; one trace per cell plus a summary CSV."""
    start = perf_counter()
    prepared = prepare(cfg)
    rows = asyncio.run(run_grid(cfg, prepared, out))
    outputs = [write_summary(rows, out / "summary.csv"), *save_stats(prepared, out)]
    outputs += [out / row["trace_file"] for row in rows if row.get("trace_file")]
    statuses = {}
    for row in rows:
        key = str(row["status"]).split(":")[0]
        statuses[key] = statuses.get(key, 0) + 1
    write_manifest(cfg, out, outputs, {"cells": len(rows), "statuses": statuses},
                   {"seconds": perf_counter() - start})
    logger.info(f"✅ Completed {len(rows)} cells → {out / 'summary.csv'}")
    return EXIT_OK


def cmd_thompson(cfg: RunConfig, out: Path) -> int:
    """Parallel Thompson sampling benchmark; writes the best-so-far trace."""
    start = perf_counter()
    rows = run_thompson(cfg.thompson, cfg.acquisition)
    trace = write_trace(rows, out / "thompson.csv")
    results = {
        "rounds": len(rows) - 1,
        "n_observations": rows[-1].n_observations,
        "best_value": rows[-1].best_value,
    }
    write_manifest(cfg, out, [trace], results, {"seconds": perf_counter() - start})
    logger.info(f"🏁 Best value {rows[-1].best_value:.4f} after {len(rows) - 1} rounds → {trace}")
    return EXIT_OK


COMMAND_HANDLERS = {
    "fit": cmd_fit,
    "sample": cmd_sample,
    "ablate": cmd_ablate,
    "thompson": cmd_thompson,
}


# -------- Entry Point --------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sddgp",
        description="Gaussian process regression with stochastic dual descent.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=COMMAND_HANDLERS[name].__doc__)
        cmd.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        cmd.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        cmd.add_argument("--out", type=Path, default=Path("runs") / name, help="output directory")
        cmd.add_argument("--workers", type=int, default=None, help="concurrent cells / solves")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        cfg = load_run_config(args.config, args.command, args.seed, args.workers)
        args.out.mkdir(parents=True, exist_ok=True)
        logger.info(f"🚀 {args.command}: config {args.config} (sha256 {cfg.sha256[:12]})")
        return COMMAND_HANDLERS[args.command](cfg, args.out)
    except (DivergenceError, NumericalError) as e:
        logger.error(f"❌ Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (SddGpError, OSError, ValueError) as e:
        logger.error(f"❌ Error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
