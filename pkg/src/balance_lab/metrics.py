"""Evaluation metrics: label balance, sample quality, downstream utility.

- ``kl_to_uniform``: KL divergence (nats) of an annotated label histogram
  from the uniform distribution; the balance metric.
- ``frechet_gaussian``: 2-Wasserstein distance between Gaussian moment
  fits of two sample sets in raw data space; the quality proxy.  Not
  comparable with feature-space Frechet numbers from image models.
- ``classifier_accuracy_score``: accuracy on real held-out data of a fresh
  classifier trained purely on generated, machine-labeled samples.
"""

from __future__ import annotations

import warnings

import numpy as np

from .longtail_data import LabeledDataset


def kl_to_uniform(labels, n_classes):
    """``sum_k q_k log(q_k K)`` in nats, with ``0 log 0 = 0``.

    Zero iff the label counts are exactly equal; at most ``log K``.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ValueError("empty label set")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels out of range")
    q = np.bincount(labels, minlength=n_classes) / labels.size
    live = q > 0.0
    return float(np.sum(q[live] * np.log(q[live] * n_classes)))


def _psd_sqrt(mat):
    w, u = np.linalg.eigh(mat)
    return (u * np.sqrt(np.maximum(w, 0.0))) @ u.T


def _moments(samples, name):
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {x.shape}")
    if x.shape[0] < x.shape[1] + 1:
        raise ValueError(
            f"{name} needs at least dim+1={x.shape[1] + 1} points, got {x.shape[0]}")
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return mu, cov


def frechet_gaussian(set_a, set_b, jitter=1e-10):
    """Squared 2-Wasserstein distance between Gaussian fits of two sets.

    ``|mu_a - mu_b|^2 + tr(C_a + C_b - 2 (C_a^1/2 C_b C_a^1/2)^1/2)`` on
    sample moments.  Singular covariances get ``jitter * I`` added (with a
    warning) so the square roots stay real.
    """
    mu_a, cov_a = _moments(set_a, "set_a")
    mu_b, cov_b = _moments(set_b, "set_b")
    if mu_a.shape != mu_b.shape:
        raise ValueError(f"dimension mismatch: {mu_a.shape} vs {mu_b.shape}")
    eps = 1e-12 * max(1.0, abs(cov_a.trace()), abs(cov_b.trace()))
    if (np.linalg.eigvalsh(cov_a).min() < eps
            or np.linalg.eigvalsh(cov_b).min() < eps):
        warnings.warn(
            f"singular covariance; adding {jitter:g}*I jitter", RuntimeWarning)
        cov_a = cov_a + jitter * np.eye(cov_a.shape[0])
        cov_b = cov_b + jitter * np.eye(cov_b.shape[0])
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    cross = _psd_sqrt(0.5 * (inner + inner.T))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * cross))
    return max(value, 0.0)  # clamp float rounding on identical moments


def per_class_accuracy(model, dataset):
    """(overall accuracy, per-class accuracy vector) of argmax predictions."""
    preds = model.apply(dataset.samples).argmax(axis=1)
    correct = preds == dataset.labels
    per_class = np.zeros(dataset.n_classes)
    for k in range(dataset.n_classes):
        mask = dataset.labels == k
        per_class[k] = correct[mask].mean() if mask.any() else 0.0
    return float(correct.mean()), per_class


def classifier_accuracy_score(sample_fn, labeler, real_test, train_budget,
                              epochs=40, lr=2e-3, batch_size=64, seed=0):
    """Accuracy on ``real_test`` of a classifier trained on generated data.

    ``sample_fn(n)`` must return ``n`` generated samples; ``labeler`` (a
    frozen classifier) provides their argmax labels.  Generated classes
    that never appear are warned about; the score is computed regardless.
    """
    if train_budget < real_test.n_classes:
        raise ValueError(f"train_budget too small: {train_budget}")
    generated = np.asarray(sample_fn(int(train_budget)), dtype=np.float64)
    labels = labeler.apply(generated).argmax(axis=1)
    k = real_test.n_classes
    missing = np.setdiff1d(np.arange(k), np.unique(labels))
    if missing.size:
        warnings.warn(
            f"generated set lacks classes {missing.tolist()}; score will suffer",
            RuntimeWarning)
    train_set = LabeledDataset(generated, labels, k)
    # late import: the trainer depends on this module for its cycle metrics
    from .gan_trainer import pretrain_classifier

    fresh = pretrain_classifier(train_set, epochs, lr, batch_size=batch_size,
                                seed=seed)
    accuracy, _ = per_class_accuracy(fresh.model, real_test)
    return accuracy
