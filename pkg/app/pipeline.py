"""
Shared steps of the fit / sample / ablate commands: load and preprocess the
data, build the regression problem, and write run artifacts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app import __version__
from app.run_config import RunConfig, to_jsonable
from solvers.objective import RegressionProblem, direct_solve
from solvers.sdd import Probes
from utils.config import settings
from utils.dataset_loader import (
    Dataset,
    NormalisationStats,
    apply_target_normalisation,
    cap_targets,
    load_dense_csv,
    load_fingerprints,
    normalise_targets,
    split,
    standardise_features,
    synth_regression,
)
from utils.log import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class Prepared:
    train: Dataset
    test: Optional[Dataset]
    problem: RegressionProblem
    reference: Optional[np.ndarray]
    stats: Optional[NormalisationStats]

    @property
    def probes(self) -> Probes:
        if self.test is None:
            return Probes(reference=self.reference)
        return Probes(reference=self.reference, test_X=self.test.X, test_y=self.test.y)


def load_dataset(cfg: RunConfig) -> Dataset:
    data = cfg.data
    if data.kind == "synthetic":
        seed = data.seed if data.seed is not None else cfg.seed
        ds = synth_regression(data.n, data.d, cfg.kernel, seed)
    elif data.kind == "csv":
        ds = load_dense_csv(data.path, data.target_column)
    else:
        ds = load_fingerprints(data.path, data.targets_path, data.dim)
    if data.cap_targets is not None:
        ds = cap_targets(ds, data.cap_targets)
    return ds


def prepare(cfg: RunConfig) -> Prepared:
    """Dataset -> (split) -> standardised / normalised train fold -> problem with b = y - mu0."""
    ds = load_dataset(cfg)
    if cfg.split is not None:
        train, test = split(ds, cfg.split)
    else:
        train, test = ds, None
    if test is not None and test.n == 0:
        test = None

    stats = None
    feature_mean = feature_std = None
    if cfg.data.kind == "csv" and cfg.data.standardise:
        train, test, feature_mean, feature_std = standardise_features(train, test)
    normalise = cfg.data.normalise_targets
    if normalise is None:
        normalise = cfg.data.kind == "csv"
    if normalise:
        train, mean, std = normalise_targets(train)
        if test is not None:
            test = apply_target_normalisation(test, mean, std)
        stats = NormalisationStats(
            target_mean=mean,
            target_std=std,
            feature_mean=None if feature_mean is None else feature_mean.tolist(),
            feature_std=None if feature_std is None else feature_std.tolist(),
        )

    problem = RegressionProblem(cfg.kernel, train.X, train.y - cfg.kernel.prior_mean)
    reference = None
    if cfg.reference and problem.n <= settings.oracle_cap:
        reference = direct_solve(problem)
    elif cfg.reference:
        logger.warning(f"⚠️ n={problem.n} exceeds the oracle cap; trace K-norm columns stay empty")
    logger.info(f"📦 Prepared {train.name}: n_train={train.n} n_test={0 if test is None else test.n}")
    return Prepared(train, test, problem, reference, stats)


def write_vector(values: np.ndarray, path: Path) -> Path:
    """One float per line (columns comma-separated for a matrix)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for row in np.atleast_1d(values):
            writer.writerow([repr(float(v)) for v in np.atleast_1d(row)])
    return path


def write_manifest(
    cfg: RunConfig,
    out: Path,
    outputs: Sequence[Path],
    extra: Optional[Dict[str, Any]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Run manifest; wall-clock values live under `metadata` only."""
    manifest = {
        "command": cfg.command,
        "version": __version__,
        "config_sha256": cfg.sha256,
        "config": cfg.raw,
        "seeds": cfg.seeds(),
        "outputs": sorted(p.relative_to(out).as_posix() for p in outputs),
        "metadata": {"created_at": datetime.now(timezone.utc).isoformat(), **(metadata or {})},
    }
    if extra:
        manifest["results"] = to_jsonable(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def save_stats(prepared: Prepared, out: Path) -> List[Path]:
    if prepared.stats is None:
        return []
    return [prepared.stats.save(out / "normalisation.json")]

