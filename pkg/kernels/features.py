"""Random Fourier features for the stationary kernels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from kernels.kernel import InputMatrix, KernelFamily, KernelSpec
from utils.config import settings
from utils.errors import ConfigError, ShapeMismatchError, UnsupportedFamilyError
from utils.rng import Stream, make_rng

DEFAULT_PRIOR_FEATURES = 2000


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """phi_j(x) = scale * cos(frequencies[j] . x + phases[j]), j = 0..m-1."""

    frequencies: np.ndarray
    phases: np.ndarray
    scale: float

    def __post_init__(self):
        if self.frequencies.ndim != 2 or self.phases.shape != (self.frequencies.shape[0],):
            raise ShapeMismatchError(
                f"frequencies {self.frequencies.shape} and phases {self.phases.shape} disagree"
            )

    @property
    def m(self) -> int:
        return self.frequencies.shape[0]

    @property
    def d(self) -> int:
        return self.frequencies.shape[1]

    def _points(self, X: Union[InputMatrix, np.ndarray]) -> np.ndarray:
        if isinstance(X, InputMatrix):
            if X.is_sparse:
                raise UnsupportedFamilyError("random Fourier features need dense inputs")
            X = X.values
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise ShapeMismatchError(f"feature map expects d={self.d}, got {X.shape[1]}")
        return X

    def __call__(self, X: Union[InputMatrix, np.ndarray]) -> np.ndarray:
        """Feature matrix Z of shape (n, m)."""
        return self.scale * np.cos(self._points(X) @ self.frequencies.T + self.phases)

    def column(self, X: Union[InputMatrix, np.ndarray], j) -> np.ndarray:
        """Z[:, j] without evaluating the other features; `j` may be an index array."""
        j = np.asarray(j)
        if np.any(j < 0) or np.any(j >= self.m):
            raise IndexError(f"feature index out of range for m={self.m}")
        return self.scale * np.cos(self._points(X) @ self.frequencies[j].T + self.phases[j])

    def function(self, X: Union[InputMatrix, np.ndarray], weights: np.ndarray) -> np.ndarray:
        """sum_j w_j phi_j(x); `weights` may be (m,) or (m, k). Evaluated in row blocks."""
        points = self._points(X)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape[0] != self.m:
            raise ShapeMismatchError(f"expected {self.m} weights, got shape {weights.shape}")
        out = np.empty((points.shape[0],) + weights.shape[1:])
        for start in range(0, points.shape[0], settings.block_size):
            stop = start + settings.block_size
            out[start:stop] = self(points[start:stop]) @ weights
        return out

    def gradient(self, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Gradient of sum_j w_j phi_j at each point, shape (s, d)."""
        points = self._points(points)
        sines = np.sin(points @ self.frequencies.T + self.phases)
        return -self.scale * (sines * weights[None, :]) @ self.frequencies

    def to_dict(self) -> dict:
        return {
            "frequencies": self.frequencies.tolist(),
            "phases": self.phases.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureMap":
        return cls(
            frequencies=np.atleast_2d(np.asarray(data["frequencies"], dtype=np.float64)),
            phases=np.asarray(data["phases"], dtype=np.float64),
            scale=float(data["scale"]),
        )


def sample_frequencies(spec: KernelSpec, m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m frequencies from the kernel's spectral density."""
    scales = spec.scales_for(d)
    z = rng.standard_normal((m, d))
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        return z / scales
    if spec.family is KernelFamily.MATERN32:
        # multivariate Student-t, 3 degrees of freedom, scale sqrt(3)/l
        chi2 = rng.chisquare(3.0, size=(m, 1))
        return (np.sqrt(3.0) / scales) * z / np.sqrt(chi2)
    raise UnsupportedFamilyError(f"{spec.family.value} kernel has no stationary spectral density")


def sample_rff(spec: KernelSpec, m: int, seed: int, d: int, *index: int) -> FeatureMap:
    """
    m random Fourier features for `spec` on d-dimensional inputs.

    `index` extends the seed so that several independent maps can share one seed.
    """
    if not spec.is_stationary:
        raise UnsupportedFamilyError(f"{spec.family.value} kernel has no random Fourier features")
    if m <= 0 or d <= 0:
        raise ConfigError(f"need m > 0 and d > 0, got m={m}, d={d}")
    rng = make_rng(seed, Stream.FEATURES, *index)
    frequencies = sample_frequencies(spec, m, d, rng)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=m)
    return FeatureMap(frequencies=frequencies, phases=phases, scale=float(np.sqrt(2.0 * spec.amplitude / m)))
