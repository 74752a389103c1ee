"""
Runtime settings, read once from the environment (and a local .env file).

Every cap or threshold used by the library defaults to the value held here;
functions that consult one also take an explicit override.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Callable, TypeVar

import numpy as np
from dotenv import load_dotenv

from utils.errors import ConfigError

load_dotenv()

T = TypeVar("T")

_DTYPES = {"float64": np.float64, "float32": np.float32}


def _env(name: str, default: T, cast: Callable[[str], T]) -> T:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{name}={raw!r} is not valid: {e}") from e


@dataclass(frozen=True)
class Settings:
    oracle_cap: int = 5_000
    gram_cap: int = 25_000_000
    row_cache_threshold: int = 40_000
    block_size: int = 1024
    dtype: str = "float64"
    workers: int = 1
    log_level: str = "INFO"

    def __post_init__(self):
        for name in ("oracle_cap", "gram_cap", "row_cache_threshold", "block_size", "workers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")

    @property
    def np_dtype(self) -> type:
        return _DTYPES[self.dtype]

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            oracle_cap=_env("SDDGP_ORACLE_CAP", cls.oracle_cap, int),
            gram_cap=_env("SDDGP_GRAM_CAP", cls.gram_cap, int),
            row_cache_threshold=_env("SDDGP_ROW_CACHE_THRESHOLD", cls.row_cache_threshold, int),
            block_size=_env("SDDGP_BLOCK_SIZE", cls.block_size, int),
            dtype=_env("SDDGP_DTYPE", cls.dtype, str),
            workers=_env("SDDGP_WORKERS", cls.workers, int),
            log_level=_env("SDDGP_LOG_LEVEL", cls.log_level, str).upper(),
        )

    def with_overrides(self, **changes) -> "Settings":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


settings = Settings.from_env()
