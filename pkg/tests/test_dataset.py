import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from robust_boosting.dataset import RawDataset, load_dataset, normalize, prepare_task
from robust_boosting.errors import (BadFraction, EmptyDataset, InconsistentWidth, ParseError,
                                    UnknownClass)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_csv_example(tmp_path):
    raw = load_dataset(write(tmp_path, "a.csv", "x1,x2,label\n0,1,1\n2,3,0\n4,5,1\n"))
    np.testing.assert_array_equal(raw.features, [[0, 1], [2, 3], [4, 5]])
    np.testing.assert_array_equal(raw.labels, [1, 0, 1])
    assert list(raw.feature_names) == ["x1", "x2"]


def test_csv_label_column_anywhere(tmp_path):
    raw = load_dataset(write(tmp_path, "a.csv", "y,a,b\n1,0.5,0.25\n"), label_column="y")
    np.testing.assert_array_equal(raw.features, [[0.5, 0.25]])


def test_libsvm_example(tmp_path):
    raw = load_dataset(write(tmp_path, "a.libsvm", "1 2:0.5\n"))
    np.testing.assert_array_equal(raw.features, [[0.0, 0.5]])
    np.testing.assert_array_equal(raw.labels, [1])


def test_libsvm_fixed_width_and_gzip(tmp_path):
    p = tmp_path / "a.libsvm.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("# comment\n-1 1:1 3:2\n1\n")
    raw = load_dataset(p, n_features=4)
    np.testing.assert_array_equal(raw.features, [[1, 0, 2, 0], [0, 0, 0, 0]])
    np.testing.assert_array_equal(raw.labels, [-1, 1])


def test_csv_short_row(tmp_path):
    p = write(tmp_path, "a.csv", "a,b,label\n1,2,0\n3\n")
    with pytest.raises(InconsistentWidth) as err:
        load_dataset(p)
    assert err.value.line == 3


@pytest.mark.parametrize("text", ["a,label\n1,x\n", "a,label\nq,1\n", "a,label\n,1\n"])
def test_csv_malformed(tmp_path, text):
    with pytest.raises(ParseError) as err:
        load_dataset(write(tmp_path, "a.csv", text))
    assert err.value.line == 2


def test_libsvm_malformed(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(write(tmp_path, "a.libsvm", "1 0:3\n"))
    with pytest.raises(ParseError):
        load_dataset(write(tmp_path, "a.libsvm", "1 2-3\n"))


def test_empty_files(tmp_path):
    with pytest.raises(EmptyDataset):
        load_dataset(write(tmp_path, "a.csv", ""))
    with pytest.raises(EmptyDataset):
        load_dataset(write(tmp_path, "b.csv", "a,label\n"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope.csv")


def _raw(n=50, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return RawDataset(rng.normal(10, 5, (n, d)), rng.integers(0, 3, n))


def test_minmax_example():
    X = np.array([[2.0], [4.0], [6.0]])
    np.testing.assert_array_equal(normalize(X, np.array([[2.0], [6.0]]))[:, 0], [0, 0.5, 1])


def test_constant_feature_maps_to_zero():
    stats = np.array([[5.0], [5.0]])
    np.testing.assert_array_equal(normalize(np.array([[5.0], [7.0]]), stats), [[0.0], [0.0]])


def test_prepare_is_deterministic():
    raw = _raw()
    a, b = prepare_task(raw, 1, seed=4), prepare_task(raw, 1, seed=4)
    for name in ("train", "val", "test"):
        for u, v in zip(a.split(name), b.split(name)):
            assert u.tobytes() == v.tobytes()
    c = prepare_task(raw, 1, seed=5)
    assert a.X_train.tobytes() != c.X_train.tobytes()


def test_partition_sizes_and_cover():
    n = 101
    raw = RawDataset(np.arange(n, dtype=float)[:, None], np.arange(n) % 2)
    t = prepare_task(raw, 1, val_frac=0.2, seed=0, norm_stats=[0, n - 1])
    ids = [np.rint(X[:, 0] * (n - 1)).astype(int) for X in (t.X_train, t.X_val, t.X_test)]
    assert len(ids[2]) == 21
    assert abs(len(ids[1]) - int(80 * 0.2)) <= 1
    assert sorted(np.concatenate(ids).tolist()) == list(range(n))


def test_train_stats_only_and_unit_bounds():
    t = prepare_task(_raw(n=200), 0, seed=2)
    assert t.X_train.min(axis=0).tolist() == [0.0] * 3
    assert t.X_train.max(axis=0).tolist() == [1.0] * 3
    for name in ("train", "val", "test"):
        X, _ = t.split(name)
        assert X.min() >= 0 and X.max() <= 1


def test_labels_encoding():
    raw = _raw()
    t = prepare_task(raw, 2, seed=0)
    assert set(np.unique(t.y_train)) <= {-1.0, 1.0}
    np.testing.assert_array_equal(t.y_train == 1, t.labels_train == 2)
    o = prepare_task(raw, "one-vs-all", seed=0)
    assert o.one_vs_all and o.y_train.shape == (t.X_train.shape[0], 3)
    assert np.all((o.y_train == 1).sum(axis=1) == 1)


def test_explicit_test_set_and_max_train():
    raw, test = _raw(n=100), _raw(n=30, seed=1)
    t = prepare_task(raw, 1, test=test, max_train=50, val_frac=0.2)
    assert t.X_test.shape[0] == 30
    assert t.X_train.shape[0] == 40 and t.X_val.shape[0] == 10


def test_fixed_norm_bounds():
    raw = RawDataset(np.array([[0.0], [127.5], [255.0], [51.0]]), np.array([0, 1, 0, 1]))
    t = prepare_task(raw, 1, val_frac=0.0, test_frac=0.25, norm_stats=[0, 255])
    assert sorted(np.concatenate((t.X_train[:, 0], t.X_test[:, 0])).tolist()) == [0, 0.2, 0.5, 1]


def test_prepare_errors():
    raw = _raw()
    with pytest.raises(BadFraction):
        prepare_task(raw, 1, val_frac=1.0)
    with pytest.raises(BadFraction):
        prepare_task(raw, 1, val_frac=-0.1)
    with pytest.raises(UnknownClass):
        prepare_task(raw, 9)
    with pytest.raises(ValueError):
        prepare_task(raw, 1, eps=-1)
    with pytest.raises(EmptyDataset):
        RawDataset(np.zeros((0, 2)), np.zeros(0, dtype=int))


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 60), st.integers(1, 4), st.integers(0, 2 ** 31), st.floats(0, 0.9))
def test_outputs_in_unit_cube_and_idempotent(n, d, seed, val_frac):
    rng = np.random.default_rng(seed)
    raw = RawDataset(rng.normal(0, 100, (n, d)), rng.integers(0, 2, n))
    try:
        t = prepare_task(raw, int(raw.labels[0]), val_frac=val_frac, seed=seed)
    except EmptyDataset:
        return
    for name in ("train", "val", "test"):
        X, _ = t.split(name)
        assert np.all((X >= 0) & (X <= 1))
    unit = np.vstack((np.zeros(d), np.ones(d)))
    np.testing.assert_array_equal(normalize(t.X_train, unit), t.X_train)


def test_shipped_datasets_load():
    bc = load_dataset(DATA / "breast-cancer.csv")
    assert bc.features.shape == (683, 9)
    db = load_dataset(DATA / "diabetes.csv")
    assert db.features.shape == (768, 8)
    te = load_dataset(DATA / "mnist-2-6-test.libsvm.gz", n_features=784)
    assert te.features.shape == (1990, 784) and set(np.unique(te.labels)) == {2, 6}
