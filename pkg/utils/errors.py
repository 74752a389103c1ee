"""Exception hierarchy shared by every package."""

from __future__ import annotations

from typing import Optional


class SddGpError(Exception):
    """Base class for all errors raised by this project."""


class ConfigError(SddGpError, ValueError):
    """Invalid configuration value or schema violation."""


class ShapeMismatchError(SddGpError, ValueError):
    pass


class KernelInputError(SddGpError, ValueError):
    """Inputs the kernel cannot evaluate (e.g. all-zero Tanimoto rows)."""


class CapExceededError(SddGpError):
    """A dense oracle was asked to materialise more than the configured cap."""


class UnsupportedFamilyError(SddGpError):
    """The kernel family has no implementation for the requested operation."""


class NumericalError(SddGpError):
    """Internal numerical failure that should be impossible for valid inputs."""


class DivergenceError(SddGpError):
    """Raised by callers that escalate a diverged solve into a failure."""


class DataFormatError(SddGpError, ValueError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")
