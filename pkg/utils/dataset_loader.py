"""
Dataset ingestion and preprocessing: dense CSV tables, sparse count
fingerprints, target normalisation, feature standardisation, train/test
splits and synthetic GP-prior regression problems.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from kernels.features import DEFAULT_PRIOR_FEATURES, sample_rff
from kernels.kernel import InputMatrix, KernelFamily, KernelSpec
from utils.errors import ConfigError, DataFormatError, ShapeMismatchError
from utils.log import get_logger
from utils.rng import Stream, make_rng

logger = get_logger(__name__)

PathLike = Union[str, Path]

FINGERPRINT_DIM = 1024
DOCKING_SCORE_CAP = 5.0

# A, lambda, mu0 per docking target (Tanimoto kernel on count fingerprints)
MOLECULE_PRESETS: Dict[str, Tuple[float, float, float]] = {
    "ESR2": (0.497, 0.373, -6.79),
    "F2": (0.385, 0.049, -6.33),
    "KIT": (0.679, 0.112, -6.39),
    "PARP1": (0.560, 0.024, -6.95),
    "PGR": (0.630, 0.332, -7.08),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    X: InputMatrix
    y: np.ndarray
    name: str = ""

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64)
        if y.shape != (self.X.n,):
            raise ShapeMismatchError(f"{self.X.n} inputs but targets of shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise DataFormatError("targets must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.n

    @property
    def d(self) -> int:
        return self.X.d

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.X.take(indices), self.y[indices], self.name)

    def with_targets(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.X, y, self.name)

    def with_inputs(self, X: InputMatrix) -> "Dataset":
        return Dataset(X, self.y, self.name)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0
    fold: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.seed < 0 or self.fold < 0:
            raise ConfigError("seed and fold must be non-negative")


# -------- Dense CSV --------
def _parse_float(token: str, path: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataFormatError(f"not a number: {token!r}", path, line) from None
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite value {token!r}", path, line)
    return value


def _is_header(row: List[str]) -> bool:
    try:
        [float(t) for t in row]
    except ValueError:
        return True
    return False


def load_dense_csv(path: PathLike, target_column: int = -1) -> Dataset:
    """
    Load a dense regression table.

    Args:
        path: CSV file, one observation per row; a header row is optional.
        target_column: Column holding the target (default: last).

    Returns:
        Dataset with dense inputs (all other columns) and targets.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    rows: List[List[float]] = []
    width: Optional[int] = None
    with path.open(newline="", encoding="utf-8") as f:
        for line_no, row in enumerate(csv.reader(f), 1):
            if not row or all(not t.strip() for t in row):
                continue
            if line_no == 1 and _is_header(row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataFormatError("need at least one input column and a target", str(path), line_no)
            elif len(row) != width:
                raise DataFormatError(f"ragged row: {len(row)} fields, expected {width}", str(path), line_no)
            rows.append([_parse_float(t.strip(), str(path), line_no) for t in row])
    if not rows:
        raise DataFormatError("no observations", str(path))

    table = np.asarray(rows, dtype=np.float64)
    y = table[:, target_column]
    X = np.delete(table, target_column % table.shape[1], axis=1)
    logger.info(f"📄 Loaded {X.shape[0]} rows x {X.shape[1]} features from {path.name}")
    return Dataset(InputMatrix(X), y, path.stem)


def save_dense_csv(ds: Dataset, path: PathLike) -> Path:
    """Write inputs then target per row, with a header; floats round-trip exactly."""
    if ds.X.is_sparse:
        raise ConfigError("save_dense_csv needs dense inputs; use save_fingerprints")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{j}" for j in range(ds.d)] + ["y"])
        for x, y in zip(ds.X.values, ds.y):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    return path


# -------- Sparse fingerprints --------
def _read_targets(path: Path) -> np.ndarray:
    values = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            token = line.strip()
            if token:
                values.append(_parse_float(token, str(path), line_no))
    if not values:
        raise DataFormatError("no targets", str(path))
    return np.asarray(values)


def load_fingerprints(path: PathLike, targets_path: PathLike, dim: int = FINGERPRINT_DIM) -> Dataset:
    """
    One molecule per line as whitespace-separated `index:count` tokens (0-based
    indices, positive integer counts); targets one per line in a second file.
    """
    path, targets_path = Path(path), Path(targets_path)
    for p in (path, targets_path):
        if not p.exists():
            raise FileNotFoundError(f"dataset not found: {p}")

    indptr, indices, data = [0], [], []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            tokens = line.split()
            if not tokens:
                continue
            seen = set()
            for token in tokens:
                index, sep, count = token.partition(":")
                if not sep:
                    raise DataFormatError(f"expected index:count, got {token!r}", str(path), line_no)
                try:
                    i, c = int(index), int(count)
                except ValueError:
                    raise DataFormatError(f"non-integer token {token!r}", str(path), line_no) from None
                if not 0 <= i < dim:
                    raise DataFormatError(f"index {i} outside [0, {dim})", str(path), line_no)
                if c <= 0:
                    raise DataFormatError(f"count must be positive, got {c}", str(path), line_no)
                if i in seen:
                    raise DataFormatError(f"duplicate index {i}", str(path), line_no)
                seen.add(i)
                indices.append(i)
                data.append(c)
            indptr.append(len(indices))
    n = len(indptr) - 1
    if n == 0:
        raise DataFormatError("no fingerprints", str(path))

    y = _read_targets(targets_path)
    if y.size != n:
        raise DataFormatError(f"{n} fingerprints but {y.size} targets", str(targets_path))
    X = sp.csr_matrix((np.asarray(data, dtype=np.float64), indices, indptr), shape=(n, dim))
    logger.info(f"🧪 Loaded {n} fingerprints (d={dim}) from {path.name}")
    return Dataset(InputMatrix(X), y, path.stem)


def save_fingerprints(ds: Dataset, path: PathLike, targets_path: PathLike) -> Tuple[Path, Path]:
    if not ds.X.is_sparse:
        raise ConfigError("save_fingerprints needs sparse count inputs")
    path, targets_path = Path(path), Path(targets_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    targets_path.parent.mkdir(parents=True, exist_ok=True)
    X = ds.X.values
    with path.open("w", encoding="utf-8") as f:
        for i in range(ds.n):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            f.write(" ".join(f"{j}:{int(c)}" for j, c in zip(X.indices[lo:hi], X.data[lo:hi])) + "\n")
    targets_path.write_text("".join(f"{float(v)!r}\n" for v in ds.y), encoding="utf-8")
    return path, targets_path


# -------- Preprocessing --------
@dataclass(frozen=True)
class NormalisationStats:
    """Training-fold statistics, kept for the inverse map (JSON sidecar)."""

    target_mean: float
    target_std: float
    feature_mean: Optional[List[float]] = None
    feature_std: Optional[List[float]] = None

    def save(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: PathLike) -> "NormalisationStats":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(**data)
        except TypeError as e:
            raise DataFormatError(f"bad normalisation sidecar: {e}", str(path)) from e


def normalise_targets(ds: Dataset) -> Tuple[Dataset, float, float]:
    """Zero mean, unit (population) variance targets; returns (ds', mean, std)."""
    mean = float(np.mean(ds.y))
    std = float(np.std(ds.y))
    if std == 0.0:
        raise DataFormatError(f"targets of {ds.name or 'dataset'} have zero variance")
    return apply_target_normalisation(ds, mean, std), mean, std


def apply_target_normalisation(ds: Dataset, mean: float, std: float) -> Dataset:
    return ds.with_targets((ds.y - mean) / std)


def denormalise_targets(y: np.ndarray, mean: float, std: float) -> np.ndarray:
    return np.asarray(y) * std + mean


def standardise_features(
    train: Dataset, test: Optional[Dataset] = None
) -> Tuple[Dataset, Optional[Dataset], np.ndarray, np.ndarray]:
    """Per-dimension zero mean / unit variance from the training fold; constant columns kept as is."""
    if train.X.is_sparse:
        raise ConfigError("feature standardisation applies to dense inputs only")
    mean = train.X.values.mean(axis=0)
    std = train.X.values.std(axis=0)
    std = np.where(std > 0, std, 1.0)

    def _apply(ds: Dataset) -> Dataset:
        return ds.with_inputs(InputMatrix((ds.X.values - mean) / std))

    return _apply(train), (_apply(test) if test is not None else None), mean, std


def cap_targets(ds: Dataset, maximum: float = DOCKING_SCORE_CAP) -> Dataset:
    """Clip targets from above (docking scores are limited to 5)."""
    return ds.with_targets(np.minimum(ds.y, maximum))


def split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """
    Seeded permutation split; fold f takes the f-th contiguous block of the
    permutation as its test set, so folds of an evenly divisible n are disjoint.
    """
    n = ds.n
    n_train = int(math.floor(round(spec.train_fraction * n, 9)))
    n_test = n - n_train
    perm = make_rng(spec.seed, Stream.SPLIT).permutation(n)
    if n_test == 0:
        return ds.take(perm), ds.take(perm[:0])
    positions = (spec.fold * n_test + np.arange(n_test)) % n
    mask = np.zeros(n, dtype=bool)
    mask[positions] = True
    return ds.take(perm[~mask]), ds.take(perm[positions])


def synth_regression(
    n: int, d: int, spec: KernelSpec, seed: int, m_features: int = DEFAULT_PRIOR_FEATURES
) -> Dataset:
    """X ~ U[0, 1]^d and y = mu0 + f0(X) + eps with f0 a random-feature prior draw, eps ~ N(0, lambda)."""
    if n < 0 or d < 1:
        raise ConfigError(f"need n >= 0 and d >= 1, got n={n}, d={d}")
    X = make_rng(seed, Stream.INPUTS).uniform(0.0, 1.0, size=(n, d))
    fmap = sample_rff(spec, m_features, seed, d)
    weights = make_rng(seed, Stream.WEIGHTS).standard_normal(m_features)
    eps = np.sqrt(spec.noise) * make_rng(seed, Stream.NOISE).standard_normal(n)
    y = spec.prior_mean + fmap.function(X, weights) + eps
    return Dataset(InputMatrix(X), y, f"synth-n{n}-d{d}-s{seed}")


def molecule_kernel(target: str) -> KernelSpec:
    """Tanimoto kernel with the fixed hyperparameters of a docking target."""
    try:
        amplitude, noise, prior_mean = MOLECULE_PRESETS[target.upper()]
    except KeyError:
        raise ConfigError(f"unknown docking target {target!r}; choose from {sorted(MOLECULE_PRESETS)}") from None
    return KernelSpec(KernelFamily.TANIMOTO, amplitude=amplitude, noise=noise, prior_mean=prior_mean)
