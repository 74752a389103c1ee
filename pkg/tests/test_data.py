import numpy as np
import pytest
import scipy.sparse as sp

from kernels.kernel import InputMatrix, KernelFamily, KernelSpec
from utils.dataset_loader import (
    Dataset,
    NormalisationStats,
    SplitSpec,
    apply_target_normalisation,
    cap_targets,
    denormalise_targets,
    load_dense_csv,
    load_fingerprints,
    molecule_kernel,
    normalise_targets,
    save_dense_csv,
    save_fingerprints,
    split,
    standardise_features,
    synth_regression,
)
from utils.errors import ConfigError, DataFormatError, ShapeMismatchError
from utils.metrics import r2, rmse


def dense_dataset(n=12, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(InputMatrix(rng.standard_normal((n, d))), rng.standard_normal(n), "toy")


# -------- dense CSV --------
def test_dense_csv_roundtrip(tmp_path):
    ds = dense_dataset()
    path = save_dense_csv(ds, tmp_path / "toy.csv")
    again = load_dense_csv(path)
    np.testing.assert_array_equal(again.X.values, ds.X.values)
    np.testing.assert_array_equal(again.y, ds.y)
    assert again.name == "toy"


def test_dense_csv_without_header(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("1.0,2.0,3.0\n4.0,5.0,6.0\n\n")
    ds = load_dense_csv(path)
    np.testing.assert_array_equal(ds.X.values, [[1.0, 2.0], [4.0, 5.0]])
    np.testing.assert_array_equal(ds.y, [3.0, 6.0])


def test_dense_csv_target_column(tmp_path):
    path = tmp_path / "first.csv"
    path.write_text("y,a,b\n9,1,2\n8,3,4\n")
    ds = load_dense_csv(path, target_column=0)
    np.testing.assert_array_equal(ds.y, [9.0, 8.0])
    np.testing.assert_array_equal(ds.X.values, [[1.0, 2.0], [3.0, 4.0]])


@pytest.mark.parametrize(
    "body, line",
    [
        ("a,b,y\n1,2,3\n4,oops,6\n", 3),
        ("1,2,3\n4,5\n", 2),
        ("1,2,3\n4,5,inf\n", 2),
        ("1\n", 1),
    ],
)
def test_dense_csv_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataFormatError) as info:
        load_dense_csv(path)
    assert info.value.line == line
    assert f"{path}:{line}:" in str(info.value)


def test_dense_csv_empty_and_missing(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("x0,y\n")
    with pytest.raises(DataFormatError):
        load_dense_csv(path)
    with pytest.raises(FileNotFoundError):
        load_dense_csv(tmp_path / "absent.csv")


# -------- fingerprints --------
def test_fingerprints_roundtrip(tmp_path, fingerprints):
    ds = Dataset(InputMatrix(sp.csr_matrix(fingerprints)), np.arange(12, dtype=float) - 6.5, "fp")
    fp_path, y_path = save_fingerprints(ds, tmp_path / "fp.txt", tmp_path / "y.txt")
    again = load_fingerprints(fp_path, y_path, dim=30)
    assert again.X.is_sparse
    np.testing.assert_array_equal(again.X.values.toarray(), fingerprints)
    np.testing.assert_array_equal(again.y, ds.y)


def test_fingerprint_tokens(tmp_path):
    fp = tmp_path / "fp.txt"
    fp.write_text("0:2 5:1\n\n3:4\n")
    y = tmp_path / "y.txt"
    y.write_text("-7.1\n-6.0\n")
    ds = load_fingerprints(fp, y, dim=8)
    np.testing.assert_array_equal(ds.X.values.toarray()[0], [2, 0, 0, 0, 0, 1, 0, 0])
    assert ds.n == 2


@pytest.mark.parametrize(
    "line",
    ["0:2 5", "0:2 a:1", "9:1", "1:0", "1:2 1:3"],
)
def test_fingerprint_errors(tmp_path, line):
    fp = tmp_path / "fp.txt"
    fp.write_text("2:1\n" + line + "\n")
    y = tmp_path / "y.txt"
    y.write_text("1\n2\n")
    with pytest.raises(DataFormatError) as info:
        load_fingerprints(fp, y, dim=8)
    assert info.value.line == 2


def test_fingerprint_target_count_mismatch(tmp_path):
    fp = tmp_path / "fp.txt"
    fp.write_text("1:1\n2:1\n")
    y = tmp_path / "y.txt"
    y.write_text("1\n")
    with pytest.raises(DataFormatError):
        load_fingerprints(fp, y, dim=8)


def test_save_format_checks(tmp_path, fingerprints):
    sparse = Dataset(InputMatrix(sp.csr_matrix(fingerprints)), np.zeros(12))
    with pytest.raises(ConfigError):
        save_dense_csv(sparse, tmp_path / "x.csv")
    with pytest.raises(ConfigError):
        save_fingerprints(dense_dataset(), tmp_path / "fp.txt", tmp_path / "y.txt")


def test_dataset_validation():
    with pytest.raises(ShapeMismatchError):
        Dataset(InputMatrix(np.zeros((3, 2))), np.zeros(2))
    with pytest.raises(DataFormatError):
        Dataset(InputMatrix(np.zeros((2, 2))), np.array([0.0, np.nan]))


# -------- preprocessing --------
def test_cap_targets():
    ds = dense_dataset().with_targets(np.array([-8.0, 4.0, 5.0, 7.5] * 3))
    np.testing.assert_array_equal(cap_targets(ds).y, [-8.0, 4.0, 5.0, 5.0] * 3)


def test_normalise_and_invert():
    ds = dense_dataset()
    normed, mean, std = normalise_targets(ds)
    assert normed.y.mean() == pytest.approx(0.0, abs=1e-12)
    assert normed.y.std() == pytest.approx(1.0)
    np.testing.assert_allclose(denormalise_targets(normed.y, mean, std), ds.y, rtol=1e-12)
    np.testing.assert_allclose(apply_target_normalisation(ds, mean, std).y, normed.y)


def test_normalise_constant_targets():
    ds = dense_dataset().with_targets(np.full(12, 3.0))
    with pytest.raises(DataFormatError):
        normalise_targets(ds)


def test_standardise_uses_training_statistics():
    train, test = dense_dataset(seed=1), dense_dataset(n=5, seed=2)
    X = train.X.values.copy()
    X[:, 1] = 4.0
    train = train.with_inputs(InputMatrix(X))
    s_train, s_test, mean, std = standardise_features(train, test)
    np.testing.assert_allclose(s_train.X.values[:, [0, 2]].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(s_train.X.values[:, [0, 2]].std(axis=0), 1.0)
    np.testing.assert_array_equal(s_train.X.values[:, 1], 0.0)
    np.testing.assert_allclose(s_test.X.values, (test.X.values - mean) / std)


def test_standardise_rejects_sparse(fingerprints):
    ds = Dataset(InputMatrix(sp.csr_matrix(fingerprints)), np.zeros(12))
    with pytest.raises(ConfigError):
        standardise_features(ds)


def test_normalisation_stats_roundtrip(tmp_path):
    stats = NormalisationStats(1.5, 2.0, [0.1, 0.2], [1.0, 3.0])
    path = stats.save(tmp_path / "stats.json")
    assert NormalisationStats.load(path) == stats
    path.write_text('{"target_mean": 1.0}')
    with pytest.raises(DataFormatError):
        NormalisationStats.load(path)


# -------- splits --------
def test_split_sizes_and_disjoint():
    ds = dense_dataset(n=10)
    train, test = split(ds, SplitSpec(0.9, seed=0))
    assert (train.n, test.n) == (9, 1)
    rows = {tuple(r) for r in train.X.values} | {tuple(r) for r in test.X.values}
    assert len(rows) == 10


def test_split_folds_partition():
    ds = dense_dataset(n=20)
    tests = [split(ds, SplitSpec(0.8, seed=3, fold=f))[1] for f in range(5)]
    targets = np.concatenate([t.y for t in tests])
    assert sorted(targets.tolist()) == sorted(ds.y.tolist())


def test_split_is_seeded():
    ds = dense_dataset(n=20)
    a = split(ds, SplitSpec(0.8, seed=1))[1].y
    b = split(ds, SplitSpec(0.8, seed=1))[1].y
    c = split(ds, SplitSpec(0.8, seed=2))[1].y
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("kwargs", [{"train_fraction": 1.0}, {"train_fraction": 0.0}, {"fold": -1}])
def test_split_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        SplitSpec(**kwargs)


# -------- synthetic data and presets --------
def test_synth_regression_is_deterministic():
    spec = KernelSpec(KernelFamily.MATERN32, length_scale=0.3, noise=0.1, prior_mean=2.0)
    a = synth_regression(50, 3, spec, seed=4)
    b = synth_regression(50, 3, spec, seed=4)
    np.testing.assert_array_equal(a.X.values, b.X.values)
    np.testing.assert_array_equal(a.y, b.y)
    assert np.all((a.X.values >= 0) & (a.X.values <= 1))
    assert synth_regression(0, 3, spec, seed=4).n == 0


def test_synth_regression_variance():
    spec = KernelSpec(KernelFamily.MATERN32, length_scale=0.05, amplitude=1.0, noise=0.5)
    ds = synth_regression(20_000, 5, spec, seed=5)
    assert ds.y.var() == pytest.approx(1.5, rel=0.1)


def test_molecule_kernel_presets():
    spec = molecule_kernel("esr2")
    assert spec.family is KernelFamily.TANIMOTO
    assert (spec.amplitude, spec.noise, spec.prior_mean) == (0.497, 0.373, -6.79)
    with pytest.raises(ConfigError):
        molecule_kernel("ABL1")


# -------- metrics --------
def test_metrics_hand_case():
    assert rmse([1.0, 1.0], [0.0, 2.0]) == pytest.approx(1.0)
    assert r2([1.0, 1.0], [0.0, 2.0]) == pytest.approx(0.0)
    assert r2([0.0, 2.0], [0.0, 2.0]) == 1.0


def test_metrics_errors():
    with pytest.raises(ShapeMismatchError):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(ShapeMismatchError):
        rmse([], [])
    with pytest.raises(ConfigError):
        r2([1.0, 2.0], [3.0, 3.0])
