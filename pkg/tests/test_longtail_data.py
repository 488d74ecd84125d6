import numpy as np
import pytest

from balance_lab.longtail_data import (
    ANNOTATOR_STREAM,
    LabeledDataset,
    LongTailSpec,
    load_dataset,
    make_balanced,
    make_longtail,
    save_dataset,
)


def test_class_counts_follow_geometric_decay():
    spec = LongTailSpec(n_classes=8, rho=100.0, n_max=500)
    counts = spec.class_counts()
    assert counts.tolist() == [500, 259, 134, 69, 36, 19, 10, 5]
    assert np.all(np.diff(counts) <= 0)
    assert counts[0] == 500
    # head/tail ratio lands on rho up to rounding
    assert abs(counts[0] / counts[-1] - 100.0) <= 0.5 * 100.0 / counts[-1]


def test_class_counts_floor_at_one():
    spec = LongTailSpec(n_classes=12, rho=1000.0, n_max=1000)
    assert spec.class_counts().min() >= 1


def test_class_means_sit_on_the_circle():
    spec = LongTailSpec(n_classes=6, rho=10.0, n_max=100, radius=3.0, dim=4)
    means = spec.class_means()
    assert means.shape == (6, 4)
    assert np.allclose(np.linalg.norm(means[:, :2], axis=1), 3.0)
    assert np.all(means[:, 2:] == 0.0)
    assert np.allclose(means[0, :2], [3.0, 0.0])


def test_spec_validation():
    with pytest.raises(ValueError):
        LongTailSpec(n_classes=1, rho=10.0, n_max=100)
    with pytest.raises(ValueError):
        LongTailSpec(n_classes=4, rho=0.5, n_max=100)
    with pytest.raises(ValueError):
        LongTailSpec(n_classes=4, rho=200.0, n_max=100)
    with pytest.raises(ValueError):
        LongTailSpec(n_classes=4, rho=10.0, n_max=100, dim=1)
    with pytest.raises(ValueError):
        LongTailSpec(n_classes=4, rho=10.0, n_max=100, std=0.0)


def test_make_longtail_matches_spec_counts():
    spec = LongTailSpec(n_classes=5, rho=20.0, n_max=80, seed=3)
    data = make_longtail(spec)
    assert np.array_equal(data.counts(), spec.class_counts())
    assert data.dim == 2
    # well-populated classes cluster around their means (tail classes have
    # too few samples for a tight check)
    means = spec.class_means()
    counts = spec.class_counts()
    for k in range(5):
        if counts[k] < 10:
            continue
        cloud = data.samples[data.labels == k]
        assert np.linalg.norm(cloud.mean(axis=0) - means[k]) < 0.5


def test_streams_are_independent_and_deterministic():
    spec = LongTailSpec(n_classes=3, rho=5.0, n_max=40, seed=7)
    train_a, train_b = make_longtail(spec), make_longtail(spec)
    assert np.array_equal(train_a.samples, train_b.samples)
    test = make_balanced(spec, 10)
    annot = make_balanced(spec, 10, stream=ANNOTATOR_STREAM)
    assert not np.array_equal(test.samples, annot.samples)
    assert not np.array_equal(train_a.samples[:30], test.samples)
    assert np.array_equal(test.counts(), np.full(3, 10))


def test_enlarging_one_stream_preserves_the_others():
    spec = LongTailSpec(n_classes=3, rho=5.0, n_max=40, seed=7)
    small = make_balanced(spec, 10)
    make_balanced(spec, 50)  # drawing more later must not shift anything
    again = make_balanced(spec, 10)
    assert np.array_equal(small.samples, again.samples)


def test_labeled_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3,)), np.zeros(3, dtype=np.int64), 2)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), np.zeros(2, dtype=np.int64), 2)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), np.array([0, 1, 2]), 2)


def test_save_load_round_trip(tmp_path):
    spec = LongTailSpec(n_classes=4, rho=8.0, n_max=50, seed=1)
    data = make_longtail(spec)
    path = tmp_path / "set.csv"
    save_dataset(data, path, spec)
    loaded, meta = load_dataset(path)
    assert np.array_equal(loaded.samples, data.samples)
    assert np.array_equal(loaded.labels, data.labels)
    assert loaded.n_classes == 4
    assert meta["rho"] == "8.0"
    assert meta["counts"] == ",".join(str(c) for c in data.counts())


def test_load_rejects_malformed_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,x1,notlabel\n0.0,0.0,0\n")
    with pytest.raises(ValueError):
        load_dataset(path)
