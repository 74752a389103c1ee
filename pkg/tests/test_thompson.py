import csv

import numpy as np
import pytest

from bayesopt.thompson import (
    THOMPSON_HEADER,
    Acquisition,
    MaximiserConfig,
    ThompsonConfig,
    acquire_batch,
    fit_batch,
    initial_state,
    maximise,
    random_acquisition,
    run,
    synth_target,
    write_trace,
)
from solvers.dispatch import DirectConfig
from solvers.sdd import SddConfig
from utils.errors import ConfigError


def small_config(**overrides):
    cfg = dict(
        dim=2,
        length_scale=0.3,
        init_points=30,
        acquisition_batch=3,
        rounds=2,
        target_features=200,
        prior_features=100,
        mean_solver=DirectConfig(),
        sample_solver=DirectConfig(),
        maximiser=MaximiserConfig(num_starts=8, grad_steps=10),
        seed=0,
    )
    cfg.update(overrides)
    return ThompsonConfig(**cfg)


class Quadratic:
    """Concave bowl with its peak inside the unit cube."""

    def __init__(self, centre):
        self.centre = np.asarray(centre)

    def value(self, points):
        return -np.sum((np.atleast_2d(points) - self.centre) ** 2, axis=1)

    def gradient(self, points):
        return -2.0 * (np.atleast_2d(points) - self.centre)


def test_target_is_deterministic():
    cfg = small_config()
    points = np.random.default_rng(0).uniform(size=(5, 2))
    np.testing.assert_array_equal(synth_target(cfg).value(points), synth_target(cfg).value(points))
    other = synth_target(small_config(seed=1)).value(points)
    assert not np.array_equal(synth_target(cfg).value(points), other)


def test_target_variance_matches_amplitude():
    cfg = ThompsonConfig(dim=8, length_scale=0.1, init_points=1, acquisition_batch=1, rounds=0)
    target = synth_target(cfg)
    rng = np.random.default_rng(1)
    values = np.concatenate([target.value(rng.uniform(size=(5000, 8))) for _ in range(4)])
    assert values.var() == pytest.approx(cfg.amplitude, rel=0.1)


def test_maximise_concave_quadratic():
    centre = np.array([0.3, 0.6, 0.45])
    cfg = MaximiserConfig(num_starts=5, grad_steps=60, grad_step_size=0.25)
    best = maximise(Quadratic(centre), 3, cfg, np.random.default_rng(2))
    np.testing.assert_allclose(best, centre, atol=1e-4)


def test_maximise_projects_onto_cube():
    cfg = MaximiserConfig(num_starts=4, grad_steps=20, grad_step_size=0.5)
    best = maximise(Quadratic([1.5, -0.5]), 2, cfg, np.random.default_rng(3))
    np.testing.assert_allclose(best, [1.0, 0.0])


def test_maximise_keeps_incumbent_when_better():
    centre = np.array([0.2, 0.8])
    cfg = MaximiserConfig(num_starts=3, grad_steps=0)
    best = maximise(Quadratic(centre), 2, cfg, np.random.default_rng(4), incumbent=centre)
    np.testing.assert_array_equal(best, centre)


def test_acquired_points_in_unit_cube():
    cfg = small_config()
    state = initial_state(cfg, synth_target(cfg))
    points = acquire_batch(state, cfg, round_index=1)
    assert points.shape == (cfg.acquisition_batch, cfg.dim)
    assert np.all((points >= 0.0) & (points <= 1.0))


def test_zero_rounds_gives_initial_row():
    rows = run(small_config(rounds=0))
    assert len(rows) == 1
    assert rows[0].round == 0 and rows[0].n_observations == 30


def test_run_observation_count_and_monotone_best():
    cfg = small_config(rounds=3)
    rows = run(cfg)
    assert [r.round for r in rows] == [0, 1, 2, 3]
    assert rows[-1].n_observations == cfg.total_evaluations == 30 + 3 * 3
    best = [r.best_value for r in rows]
    assert all(b >= a for a, b in zip(best, best[1:]))


def test_run_is_reproducible():
    a = run(small_config())
    b = run(small_config())
    assert [(r.round, r.n_observations, r.best_value) for r in a] == [
        (r.round, r.n_observations, r.best_value) for r in b
    ]


def test_random_acquisition(tmp_path):
    cfg = small_config()
    points = random_acquisition(cfg, 1)
    assert points.shape == (3, 2) and np.all((points >= 0) & (points <= 1))
    rows = run(cfg, Acquisition.RANDOM)
    path = write_trace(rows, tmp_path / "trace.csv")
    with path.open() as f:
        lines = list(csv.reader(f))
    assert tuple(lines[0]) == THOMPSON_HEADER
    assert len(lines) == cfg.rounds + 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dim": 0},
        {"acquisition_batch": 0},
        {"rounds": -1},
        {"observation_noise_var": 0.0},
        {"length_scale": -0.1},
        {"family": "tanimoto"},
        {"family": "rbf"},
    ],
)
def test_invalid_thompson_config(kwargs):
    with pytest.raises(ConfigError):
        small_config(**kwargs)


def test_maximiser_config_validation():
    with pytest.raises(ConfigError):
        MaximiserConfig(num_starts=0)
    with pytest.raises(ConfigError):
        MaximiserConfig(grad_step_size=0.0)
    assert MaximiserConfig().step_size_for(0.3, 8) == pytest.approx(10 * 0.09 / 8)


def test_full_scale_defaults_are_valid():
    cfg = ThompsonConfig()
    assert cfg.init_points == 50_000 and cfg.acquisition_batch == 1000 and cfg.rounds == 30
    assert cfg.total_evaluations == 80_000
    assert cfg.kernel.noise == 1e-6


@pytest.mark.slow
def test_thompson_beats_random_search():
    wins = 0
    for seed in range(10):
        cfg = ThompsonConfig(
            dim=4,
            length_scale=0.3,
            init_points=1000,
            acquisition_batch=100,
            rounds=10,
            mean_solver=DirectConfig(),
            sample_solver=DirectConfig(),
            maximiser=MaximiserConfig(num_starts=20, grad_steps=50),
            seed=seed,
        )
        thompson = run(cfg, Acquisition.THOMPSON)[-1].best_value
        random = run(cfg, Acquisition.RANDOM)[-1].best_value
        wins += thompson >= random
    assert wins >= 8


def test_default_solvers_follow_run_seed():
    cfg = ThompsonConfig(seed=5)
    assert isinstance(cfg.mean_solver, SddConfig) and isinstance(cfg.sample_solver, SddConfig)
    assert cfg.mean_solver.seed == 5 and cfg.sample_solver.seed == 5
    assert cfg.mean_solver.step_size_times_n == 3.0
    assert cfg.sample_solver.step_size_times_n == 0.003
    assert ThompsonConfig().mean_solver.seed == 0


def test_fit_batch_clamps_to_observations():
    solver = SddConfig(steps=10, batch_size=128)
    assert fit_batch(solver, 30).batch_size == 30
    assert fit_batch(solver, 500) is solver
    assert fit_batch(DirectConfig(), 30) == DirectConfig()


def test_sdd_round_with_fewer_points_than_batch():
    cfg = small_config(
        rounds=1,
        mean_solver=SddConfig(steps=50, batch_size=128, step_size_times_n=1.0),
        sample_solver=SddConfig(steps=50, batch_size=128, step_size_times_n=0.01),
    )
    rows = run(cfg)
    assert rows[-1].n_observations == 33


@pytest.mark.slow
def test_sdd_thompson_improves_on_initial_best():
    improved = 0
    for seed in range(10):
        cfg = ThompsonConfig(dim=4, init_points=200, acquisition_batch=20, rounds=3, seed=seed)
        rows = run(cfg)
        improved += rows[-1].best_value > rows[0].best_value
    assert improved >= 9
