import csv

import numpy as np
import pytest
import scipy.sparse as sp

from kernels.kernel import InputMatrix, KernelFamily, KernelOperator, KernelSpec
from solvers.baselines import Objective, gd_solve
from solvers.objective import RegressionProblem, direct_solve, gram_eigenvalues
from solvers.sdd import (
    TRACE_HEADER,
    Averaging,
    DualState,
    Estimator,
    Probes,
    Sampling,
    SddConfig,
    Termination,
    averaging_update,
    default_averaging,
    sdd_solve,
)
from tests.conftest import make_problem
from utils.dataset_loader import synth_regression
from utils.errors import ConfigError, UnsupportedFamilyError


@pytest.fixture
def easy():
    """Well-conditioned instance: short length scale, large noise."""
    return make_problem(n=100, d=3, seed=2, length_scale=0.2, noise=0.5)


def easy_config(**overrides):
    cfg = dict(steps=3000, batch_size=50, step_size_times_n=2.0, momentum=0.9, seed=0)
    cfg.update(overrides)
    return SddConfig(**cfg)


def test_default_averaging():
    assert default_averaging(30_000) == pytest.approx(100 / 30_000)
    assert default_averaging(50) == 1.0
    assert SddConfig(steps=1000).r == pytest.approx(0.1)
    assert SddConfig(steps=1000).tail == 700


def test_converges_to_direct_solution(easy):
    reference = direct_solve(easy)
    report = sdd_solve(easy, easy_config(snapshot_every=500), Probes(reference=reference))
    assert report.termination is Termination.COMPLETED
    assert report.steps == 3000
    assert report.final.knorm_sq <= 1e-4
    steps = [row.step for row in report.trace]
    assert steps == [500, 1000, 1500, 2000, 2500, 3000]


@pytest.mark.parametrize("sampling", list(Sampling))
def test_sampling_modes_converge(easy, sampling):
    reference = direct_solve(easy)
    report = sdd_solve(easy, easy_config(sampling=sampling), Probes(reference=reference))
    assert report.final.knorm_sq <= 1e-4


def test_identical_seed_is_bitwise_reproducible(easy):
    cfg = easy_config(steps=200)
    a = sdd_solve(easy, cfg)
    b = sdd_solve(easy, cfg)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    c = sdd_solve(easy, easy_config(steps=200, seed=1))
    assert not np.array_equal(a.coefficients, c.coefficients)


def test_zero_steps_returns_zero(easy):
    report = sdd_solve(easy, easy_config(steps=0))
    np.testing.assert_array_equal(report.coefficients, np.zeros(easy.n))
    assert report.steps == 0


def test_zero_targets_stay_zero(easy):
    report = sdd_solve(easy.with_targets(np.zeros(easy.n)), easy_config(steps=100))
    np.testing.assert_array_equal(report.coefficients, np.zeros(easy.n))


def test_divergence_is_reported(easy):
    report = sdd_solve(easy, easy_config(steps=500, step_size_times_n=1e6, batch_size=easy.n))
    assert report.diverged
    assert report.termination is Termination.DIVERGED
    assert report.steps < 500
    assert report.trace[-1].step == report.steps


def test_multiple_right_hand_sides(easy):
    B = np.stack([easy.b, -2.0 * easy.b + 1.0], axis=1)
    cfg = easy_config(steps=300)
    joint = sdd_solve(easy.with_targets(B), cfg).coefficients
    for k in range(2):
        single = sdd_solve(easy.with_targets(B[:, k]), cfg).coefficients
        np.testing.assert_allclose(joint[:, k], single, rtol=1e-9, atol=1e-12)


def test_rb_estimator_is_worse(easy):
    reference = direct_solve(easy)
    rc = sdd_solve(easy, easy_config(), Probes(reference=reference))
    rb = sdd_solve(easy, easy_config(estimator=Estimator.RB_COORDINATES), Probes(reference=reference))
    assert rc.final.knorm_sq < rb.final.knorm_sq


def test_features_estimator_runs(easy):
    report = sdd_solve(easy, easy_config(steps=50, estimator="features", step_size_times_n=1e-3))
    assert report.termination is Termination.COMPLETED
    assert np.all(np.isfinite(report.coefficients))


def test_features_estimator_needs_stationary_kernel(fingerprints):
    spec = KernelSpec(KernelFamily.TANIMOTO, noise=0.1)
    p = RegressionProblem(spec, InputMatrix(sp.csr_matrix(fingerprints)), np.ones(len(fingerprints)))
    with pytest.raises(UnsupportedFamilyError):
        sdd_solve(p, SddConfig(steps=10, batch_size=4, estimator=Estimator.FEATURES))
    report = sdd_solve(p, SddConfig(steps=10, batch_size=4, step_size_times_n=0.1))
    assert report.termination is Termination.COMPLETED


@pytest.mark.parametrize(
    "kwargs",
    [
        {"momentum": 1.0},
        {"momentum": -0.1},
        {"step_size_times_n": 0.0},
        {"batch_size": 0},
        {"steps": -1},
        {"averaging": 0.0},
        {"averaging": 1.5},
        {"estimator": "exact"},
        {"averaging_mode": "median"},
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        SddConfig(**{"steps": 10, **kwargs})


def test_batch_larger_than_n(easy):
    with pytest.raises(ConfigError):
        sdd_solve(easy, SddConfig(steps=10, batch_size=easy.n + 1))


def test_geometric_r_one_is_last_iterate():
    state = DualState.zeros(3)
    for t, value in enumerate([1.0, 4.0, -2.0], 1):
        state.alpha[:] = value
        state.t = t
        averaging_update(Averaging.GEOMETRIC, state, r=1.0)
        np.testing.assert_array_equal(state.averaged, state.alpha)


@pytest.mark.parametrize("mode", list(Averaging))
def test_constant_iterates_are_a_fixed_point(mode):
    c = np.array([0.5, -1.0])
    state = DualState(alpha=c.copy(), velocity=np.zeros(2), averaged=c.copy(), t=0)
    for t in range(1, 6):
        state.t = t
        averaging_update(mode, state, r=0.3, tail_start=2)
        np.testing.assert_allclose(state.averaged, c, rtol=1e-13)


def test_arithmetic_tail_average():
    state = DualState.zeros(1)
    for t in range(1, 7):
        state.alpha[:] = float(t)
        state.t = t
        averaging_update(Averaging.ARITHMETIC_TAIL, state, tail_start=3)
        if t < 3:
            assert state.averaged[0] == t
    assert state.averaged[0] == pytest.approx(np.mean([3, 4, 5, 6]))


def test_trace_csv(tmp_path, easy):
    report = sdd_solve(easy, easy_config(steps=200, snapshot_every=100), Probes(reference=direct_solve(easy)))
    path = report.to_csv(tmp_path / "trace.csv")
    with path.open() as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == TRACE_HEADER
    assert [r[0] for r in rows[1:]] == ["100", "200"]
    assert rows[1][-1] == "running" and rows[-1][-1] == "completed"
    assert rows[-1][4] == ""


def test_snapshot_rmse_and_callback(easy):
    seen = []
    test = synth_regression(10, 3, easy.kernel, seed=99)
    probes = Probes(test_X=test.X, test_y=test.y, callback=lambda step, a: seen.append(step))
    report = sdd_solve(easy, easy_config(steps=20, snapshot_every=10), probes)
    assert seen == [10, 20]
    assert report.final.rmse is not None and report.final.knorm_sq is None


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_oracle_equivalence(seed):
    spec = KernelSpec(KernelFamily.MATERN32, length_scale=0.5, amplitude=1.0, noise=0.01 * 1000)
    ds = synth_regression(1000, 8, spec, seed)
    operator = KernelOperator(spec, ds.X, cache_rows=True)
    operator.warm()
    p = RegressionProblem(spec, ds.X, ds.y, operator=operator)
    reference = direct_solve(p)
    cfg = SddConfig(steps=30_000, batch_size=128, step_size_times_n=1.0, momentum=0.9, seed=seed)
    report = sdd_solve(p, cfg, Probes(reference=reference))
    assert report.final.knorm_sq <= 1e-3


def test_full_enumerated_batch_reproduces_dual_gd(easy):
    seen = {"sdd": [], "gd": []}

    def recorder(name):
        return Probes(callback=lambda step, a: seen[name].append(a.copy()))

    cfg = SddConfig(steps=20, batch_size=easy.n, step_size_times_n=1.0, momentum=0.0, averaging=1.0,
                    sampling=Sampling.WITHOUT_REPLACEMENT, snapshot_every=1)
    sdd = sdd_solve(easy, cfg, recorder("sdd"))
    gd = gd_solve(easy, Objective.DUAL, 1.0, 20, momentum=0.0, probes=recorder("gd"), snapshot_every=1)
    assert len(seen["sdd"]) == len(seen["gd"]) == 20
    for a, b in zip(seen["sdd"], seen["gd"]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    np.testing.assert_allclose(sdd.coefficients, gd.coefficients, rtol=0, atol=1e-12)


def cached_problem(n, d, seed, noise):
    spec = KernelSpec(KernelFamily.MATERN32, length_scale=0.5, amplitude=1.0, noise=noise)
    ds = synth_regression(n, d, spec, seed)
    operator = KernelOperator(spec, ds.X, cache_rows=True)
    operator.warm()
    return RegressionProblem(spec, ds.X, ds.y, operator=operator)


def half_stable_step_size_times_n(p, batch_size, momentum):
    """
    Half the smaller of two limits on beta*n: the Nesterov full-batch bound
    (2 + 2 rho) / (1 + 2 rho) * n / (lambda_1 + lambda) and the coordinate-noise
    bound 2 B (1 - rho) / (A + lambda).
    """
    lam1 = gram_eigenvalues(p)[-1]
    full_batch = (2 + 2 * momentum) / (1 + 2 * momentum) * p.n / (lam1 + p.noise)
    coordinate_noise = 2 * batch_size * (1 - momentum) / (p.kernel.amplitude + p.noise)
    return 0.5 * min(full_batch, coordinate_noise)


@pytest.mark.slow
def test_coordinates_beat_rb_at_scale():
    wins = 0
    for seed in range(5):
        p = cached_problem(2000, 8, seed, noise=0.01 * 2000)
        reference = direct_solve(p)
        step = half_stable_step_size_times_n(p, 128, 0.9)
        cfg = dict(steps=5000, batch_size=128, step_size_times_n=step, momentum=0.9, seed=seed)
        rc = sdd_solve(p, SddConfig(**cfg), Probes(reference=reference))
        rb = sdd_solve(p, SddConfig(estimator=Estimator.RB_COORDINATES, **cfg), Probes(reference=reference))
        assert not rc.diverged and not rb.diverged
        wins += rc.final.knorm_sq < rb.final.knorm_sq
    assert wins >= 4


@pytest.mark.slow
def test_geometric_averaging_at_scale():
    noise, momentum = 0.03, 0.9
    wins = 0
    for seed in range(5):
        p = cached_problem(2000, 8, seed, noise=noise)
        reference = direct_solve(p)
        step = half_stable_step_size_times_n(p, 128, momentum)
        # modes at the noise level are one e-fold from converged after `steps`
        steps = int(np.ceil((1 - momentum) * p.n / (step * noise)))
        errors = {}
        for mode in Averaging:
            cfg = SddConfig(steps=steps, batch_size=128, step_size_times_n=step, momentum=momentum,
                            averaging_mode=mode, seed=seed)
            report = sdd_solve(p, cfg, Probes(reference=reference))
            assert not report.diverged
            errors[mode] = report.final.knorm_sq
        geometric = errors[Averaging.GEOMETRIC]
        wins += geometric < errors[Averaging.ARITHMETIC_TAIL] and geometric <= 1.05 * errors[Averaging.LAST]
    assert wins >= 4
