import numpy as np
import pytest

from kernels.kernel import InputMatrix, KernelFamily, KernelSpec
from solvers.objective import RegressionProblem
from utils.dataset_loader import synth_regression


def make_problem(n=100, d=3, seed=0, family=KernelFamily.MATERN32, length_scale=0.5,
                 amplitude=1.0, noise=0.1, prior_mean=0.0):
    """Synthetic GP-prior regression problem with b = y - mu0."""
    spec = KernelSpec(family, length_scale=length_scale, amplitude=amplitude, noise=noise, prior_mean=prior_mean)
    ds = synth_regression(n, d, spec, seed)
    return RegressionProblem(spec, ds.X, ds.y - prior_mean)


def identity_problem(n=20, noise=0.5, seed=0):
    """Far-apart points under a tiny length scale, so K = I to machine precision."""
    spec = KernelSpec(KernelFamily.SQUARED_EXPONENTIAL, length_scale=0.01, amplitude=1.0, noise=noise)
    X = InputMatrix(np.arange(n, dtype=np.float64)[:, None])
    b = np.random.default_rng(seed).standard_normal(n)
    return RegressionProblem(spec, X, b)


@pytest.fixture
def problem():
    return make_problem()


@pytest.fixture
def small_problem():
    return make_problem(n=50, d=2, seed=1, noise=0.05)


@pytest.fixture
def eye_problem():
    return identity_problem()


@pytest.fixture
def fingerprints():
    rng = np.random.default_rng(3)
    counts = rng.integers(0, 4, size=(12, 30))
    counts[:, 0] = np.maximum(counts[:, 0], 1)
    return counts
