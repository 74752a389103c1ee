"""
JSON run configuration for the command-line entry point.

Documents are validated into the dataclasses below before any compute; every
section falls back to the top-level `seed` when it does not set its own.
The thompson section takes `workers` from the top level the same way, and
`--workers` overrides both.
See README.md for the schema.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from bayesopt.thompson import Acquisition, MaximiserConfig, ThompsonConfig
from kernels.kernel import KernelSpec
from solvers.baselines import CgConfig, GdConfig, SgdConfig
from solvers.dispatch import DirectConfig, SolverConfig
from solvers.sdd import Averaging, Estimator, SddConfig
from utils.dataset_loader import FINGERPRINT_DIM, SplitSpec, molecule_kernel
from utils.errors import ConfigError

COMMANDS = ("fit", "sample", "ablate", "thompson")

SOLVER_KINDS = {
    "sdd": SddConfig,
    "sgd": SgdConfig,
    "gd": GdConfig,
    "cg": CgConfig,
    "direct": DirectConfig,
}
_SEEDED = (SddConfig, SgdConfig)

OBJECTIVES = ("primal", "dual")
FULL_BATCH = "full"
ESTIMATORS = (FULL_BATCH,) + tuple(e.value for e in Estimator)


def _build(cls, data: Dict[str, Any], section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {section} fields: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from e


def solver_from_dict(data: Dict[str, Any], seed: int, section: str = "solver") -> SolverConfig:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in SOLVER_KINDS:
        raise ConfigError(f"{section}.kind must be one of {sorted(SOLVER_KINDS)}, got {kind!r}")
    cls = SOLVER_KINDS[kind]
    if cls in _SEEDED:
        data.setdefault("seed", seed)
    return _build(cls, data, section)


def solver_kind(cfg: SolverConfig) -> str:
    for kind, cls in SOLVER_KINDS.items():
        if isinstance(cfg, cls):
            return kind
    raise ConfigError(f"unknown solver config {type(cfg).__name__}")


def to_jsonable(value: Any) -> Any:
    if is_dataclass(value):
        out = {k: to_jsonable(v) for k, v in asdict(value).items()}
        if isinstance(value, tuple(SOLVER_KINDS.values())):
            out = {"kind": solver_kind(value), **out}
        return out
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"
    path: Optional[str] = None
    targets_path: Optional[str] = None
    target_column: int = -1
    dim: int = FINGERPRINT_DIM
    n: int = 1000
    d: int = 8
    seed: Optional[int] = None
    standardise: bool = True
    normalise_targets: Optional[bool] = None
    cap_targets: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv", "fingerprints"):
            raise ConfigError(f"data.kind must be synthetic, csv or fingerprints, got {self.kind!r}")
        if self.kind in ("csv", "fingerprints") and not self.path:
            raise ConfigError(f"data.path is required for {self.kind} data")
        if self.kind == "fingerprints" and not self.targets_path:
            raise ConfigError("data.targets_path is required for fingerprints")
        if self.kind == "synthetic" and (self.n < 1 or self.d < 1):
            raise ConfigError("synthetic data needs n >= 1 and d >= 1")


@dataclass(frozen=True)
class SampleConfig:
    count: int = 64
    m_features: int = 2000
    zero_draw: bool = False
    mean_solver: Optional[SolverConfig] = None

    def __post_init__(self):
        if self.count < 1 or self.m_features < 1:
            raise ConfigError("sample.count and sample.m_features must be positive")


@dataclass(frozen=True)
class AblationGrid:
    objective: Tuple[str, ...] = ("dual",)
    estimator: Tuple[str, ...] = ("coordinates",)
    step_size_times_n: Tuple[float, ...] = (50.0,)
    batch_size: Tuple[int, ...] = (128,)
    averaging_mode: Tuple[str, ...] = ("geometric",)

    def __post_init__(self):
        for f in fields(self):
            values = getattr(self, f.name)
            if isinstance(values, (str, int, float)):
                values = (values,)
            values = tuple(values)
            if not values:
                raise ConfigError(f"ablate.grid.{f.name} must not be empty")
            object.__setattr__(self, f.name, values)
        allowed = {
            "objective": OBJECTIVES,
            "estimator": ESTIMATORS,
            "averaging_mode": tuple(a.value for a in Averaging),
        }
        for name, options in allowed.items():
            bad = [v for v in getattr(self, name) if v not in options]
            if bad:
                raise ConfigError(f"ablate.grid.{name}: {bad} not in {list(options)}")

    @property
    def size(self) -> int:
        total = 1
        for f in fields(self):
            total *= len(getattr(self, f.name))
        return total


@dataclass(frozen=True)
class AblationConfig:
    grid: AblationGrid = field(default_factory=AblationGrid)
    steps: int = 1000
    momentum: float = 0.9
    averaging: Optional[float] = None
    regulariser_features: int = 100
    snapshot_every: int = 0


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    split: Optional[SplitSpec] = None
    kernel: Optional[KernelSpec] = None
    solver: Optional[SolverConfig] = None
    reference: bool = True
    sample: SampleConfig = field(default_factory=SampleConfig)
    ablate: AblationConfig = field(default_factory=AblationConfig)
    thompson: Optional[ThompsonConfig] = None
    acquisition: Acquisition = Acquisition.THOMPSON
    workers: int = 1
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def sha256(self) -> str:
        return config_hash(self.raw)

    def seeds(self) -> Dict[str, int]:
        out = {"seed": self.seed}
        if self.data.kind == "synthetic":
            out["data"] = self.data.seed if self.data.seed is not None else self.seed
        if self.split is not None:
            out["split"] = self.split.seed
        if isinstance(self.solver, _SEEDED):
            out["solver"] = self.solver.seed
        if self.thompson is not None:
            out["thompson"] = self.thompson.seed
        return out


def config_hash(raw: Dict[str, Any]) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _kernel(data: Any) -> KernelSpec:
    if not isinstance(data, dict):
        raise ConfigError("kernel must be a JSON object")
    if "preset" in data:
        if set(data) != {"preset"}:
            raise ConfigError("kernel.preset cannot be combined with other kernel fields")
        return molecule_kernel(data["preset"])
    return KernelSpec.from_dict(data)


def _thompson(data: Dict[str, Any], seed: int, workers: int, cli_workers: Optional[int] = None) -> ThompsonConfig:
    data = dict(data)
    data.setdefault("seed", seed)
    data.setdefault("workers", workers)
    if cli_workers is not None:
        data["workers"] = cli_workers
    for key in ("mean_solver", "sample_solver"):
        if key in data:
            data[key] = solver_from_dict(data[key], data["seed"], f"thompson.{key}")
    if "maximiser" in data:
        data["maximiser"] = _build(MaximiserConfig, data["maximiser"], "thompson.maximiser")
    return _build(ThompsonConfig, data, "thompson")


def parse_run_config(raw: Dict[str, Any], command: str, seed: Optional[int] = None,
                     workers: Optional[int] = None) -> RunConfig:
    """Validate a config document for `command`; CLI seed/workers override the document."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    if workers is not None:
        raw["workers"] = workers
    allowed = {"command", "seed", "data", "split", "kernel", "solver", "reference",
               "sample", "ablate", "thompson", "acquisition", "workers"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for {raw['command']!r}, not {command!r}")

    top_seed = raw.get("seed", 0)
    if not isinstance(top_seed, int) or top_seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {top_seed!r}")
    n_workers = raw.get("workers", 1)
    if not isinstance(n_workers, int) or n_workers < 1:
        raise ConfigError(f"workers must be a positive integer, got {n_workers!r}")

    kwargs: Dict[str, Any] = {"command": command, "seed": top_seed, "workers": n_workers, "raw": raw}
    if "data" in raw:
        kwargs["data"] = _build(DataConfig, raw["data"], "data")
    if raw.get("split") is not None:
        split = dict(raw["split"])
        split.setdefault("seed", top_seed)
        kwargs["split"] = _build(SplitSpec, split, "split")
    if "reference" in raw:
        kwargs["reference"] = bool(raw["reference"])

    if command == "thompson":
        kwargs["thompson"] = _thompson(raw.get("thompson", {}), top_seed, n_workers, workers)
        try:
            kwargs["acquisition"] = Acquisition(raw.get("acquisition", "thompson"))
        except ValueError as e:
            raise ConfigError(f"acquisition must be thompson or random: {e}") from e
        return RunConfig(**kwargs)

    if "kernel" not in raw:
        raise ConfigError(f"{command} needs a kernel section")
    kwargs["kernel"] = _kernel(raw["kernel"])
    if command in ("fit", "sample"):
        kwargs["solver"] = solver_from_dict(raw.get("solver", {"kind": "direct"}), top_seed)
    if command == "sample" and "sample" in raw:
        sample = dict(raw["sample"])
        if sample.get("mean_solver") is not None:
            sample["mean_solver"] = solver_from_dict(sample["mean_solver"], top_seed, "sample.mean_solver")
        kwargs["sample"] = _build(SampleConfig, sample, "sample")
    if command == "ablate":
        ablate = dict(raw.get("ablate", {}))
        ablate["grid"] = _build(AblationGrid, ablate.get("grid", {}), "ablate.grid")
        kwargs["ablate"] = _build(AblationConfig, ablate, "ablate")
    return RunConfig(**kwargs)


def load_run_config(path: Union[str, Path], command: str, seed: Optional[int] = None,
                    workers: Optional[int] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return parse_run_config(raw, command, seed, workers)


def grid_cells(cfg: RunConfig) -> List[Dict[str, Any]]:
    """Cartesian product of the ablation grid in a fixed order."""
    grid = cfg.ablate.grid
    cells = []
    for objective in grid.objective:
        for estimator in grid.estimator:
            for step in grid.step_size_times_n:
                for batch in grid.batch_size:
                    for averaging in grid.averaging_mode:
                        cells.append({
                            "objective": objective,
                            "estimator": estimator,
                            "step_size_times_n": step,
                            "batch_size": batch,
                            "averaging_mode": averaging,
                        })
    return cells
