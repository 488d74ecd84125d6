import numpy as np
import pytest

from balance_lab.longtail_data import LabeledDataset, LongTailSpec, make_balanced
from balance_lab.metrics import (
    classifier_accuracy_score,
    frechet_gaussian,
    kl_to_uniform,
    per_class_accuracy,
)


def test_kl_to_uniform_basics():
    assert kl_to_uniform([0, 1, 2, 3], 4) == 0.0
    assert abs(kl_to_uniform([2] * 10, 4) - np.log(4)) <= 1e-12
    # within (0, log K) for anything in between
    val = kl_to_uniform([0, 0, 0, 1], 2)
    assert 0.0 < val < np.log(2)


def test_kl_to_uniform_validation():
    with pytest.raises(ValueError):
        kl_to_uniform([], 3)
    with pytest.raises(ValueError):
        kl_to_uniform([3], 3)
    with pytest.raises(ValueError):
        kl_to_uniform([-1], 3)


def test_kl_matches_direct_formula_on_random_histograms():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(2, 10))
        labels = rng.integers(0, k, size=200)
        q = np.bincount(labels, minlength=k) / 200.0
        live = q > 0
        expected = float(np.sum(q[live] * np.log(q[live] * k)))
        assert abs(kl_to_uniform(labels, k) - expected) <= 1e-12


def test_frechet_identical_sets_is_zero():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 2))
    assert frechet_gaussian(x, x.copy()) == 0.0


def test_frechet_mean_shift_equals_squared_distance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5000, 2))
    shift = np.array([3.0, -1.0])
    value = frechet_gaussian(x, x + shift)
    assert abs(value - shift @ shift) <= 1e-9


def test_frechet_matches_univariate_closed_form():
    # 1-d Gaussians: (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2 on sample moments
    rng = np.random.default_rng(3)
    a = rng.normal(0.0, 1.0, size=(4000, 1))
    b = rng.normal(2.0, 3.0, size=(4000, 1))
    expected = (a.mean() - b.mean()) ** 2 + (a.std(ddof=1) - b.std(ddof=1)) ** 2
    assert abs(frechet_gaussian(a, b) - expected) <= 1e-8


def test_frechet_is_symmetric():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(500, 3))
    b = rng.normal(size=(400, 3)) * 2.0 + 1.0
    assert abs(frechet_gaussian(a, b) - frechet_gaussian(b, a)) <= 1e-9


def test_frechet_validation_and_singular_warning():
    with pytest.raises(ValueError):
        frechet_gaussian(np.zeros((2, 2)), np.ones((10, 2)))
    with pytest.raises(ValueError):
        frechet_gaussian(np.ones((10, 2)), np.ones((10, 3)))
    rng = np.random.default_rng(5)
    degenerate = np.tile(rng.normal(size=(1, 2)), (50, 1))  # rank-0 covariance
    with pytest.warns(RuntimeWarning, match="singular covariance"):
        frechet_gaussian(degenerate, rng.normal(size=(50, 2)))


class _StubModel:
    def __init__(self, n_classes):
        self.n_classes = n_classes

    def apply(self, x):
        # predicts by nearest axis-aligned sector: class = argmax coordinate
        out = np.zeros((x.shape[0], self.n_classes))
        out[np.arange(x.shape[0]), np.argmax(x, axis=1) % self.n_classes] = 1.0
        return out


def test_per_class_accuracy_counts_each_class():
    # stub predicts argmax coordinate: rows 0,1 -> class 0; rows 2,3 -> class 1
    samples = np.array([[1.0, 0.0], [1.0, 0.5], [0.0, 1.0], [1.0, 2.0]])
    labels = np.array([0, 1, 1, 1])
    overall, per_class = per_class_accuracy(_StubModel(2), LabeledDataset(samples, labels, 2))
    assert overall == 0.75
    assert per_class.tolist() == [1.0, 2.0 / 3.0]


def test_per_class_accuracy_missing_class_scores_zero():
    samples = np.array([[1.0, 0.0], [1.0, 0.5]])
    labels = np.array([0, 0])
    _, per_class = per_class_accuracy(_StubModel(2), LabeledDataset(samples, labels, 2))
    assert per_class[1] == 0.0


def test_classifier_accuracy_score_runs_and_validates():
    spec = LongTailSpec(n_classes=3, rho=2.0, n_max=20, seed=0)
    test = make_balanced(spec, 15)
    means = spec.class_means()
    rng = np.random.default_rng(6)

    def sample_fn(n):
        ks = rng.integers(0, 3, size=n)
        return means[ks] + 0.1 * rng.standard_normal((n, 2))

    class _Oracle:
        def apply(self, x):
            d = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
            out = np.zeros((x.shape[0], 3))
            out[np.arange(x.shape[0]), d.argmin(axis=1)] = 1.0
            return out

    score = classifier_accuracy_score(sample_fn, _Oracle(), test, 120,
                                      epochs=20, seed=[0, 22])
    assert score > 0.8  # clean separable mixture
    with pytest.raises(ValueError):
        classifier_accuracy_score(sample_fn, _Oracle(), test, 2)


@pytest.mark.filterwarnings("ignore:classifier cannot separate")
def test_classifier_accuracy_score_warns_on_missing_generated_class():
    spec = LongTailSpec(n_classes=3, rho=2.0, n_max=20, seed=0)
    test = make_balanced(spec, 15)
    means = spec.class_means()
    rng = np.random.default_rng(7)

    def sample_fn(n):  # only ever generates class 0
        return means[np.zeros(n, dtype=int)] + 0.05 * rng.standard_normal((n, 2))

    class _Oracle:
        def apply(self, x):
            d = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
            out = np.zeros((x.shape[0], 3))
            out[np.arange(x.shape[0]), d.argmin(axis=1)] = 1.0
            return out

    with pytest.warns(RuntimeWarning, match="lacks classes"):
        classifier_accuracy_score(sample_fn, _Oracle(), test, 60, epochs=5)
