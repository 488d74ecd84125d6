import numpy as np
import pytest

from balance_lab.config import ExperimentConfig

# Small enough that a full pipeline-plus-training run takes ~1 s.
TINY = dict(
    n_classes=3,
    rho=10.0,
    n_max=30,
    test_per_class=20,
    annotator_per_class=20,
    clf_epochs=4,
    annotator_epochs=4,
    noise_dim=4,
    batch_size=16,
    iterations=40,
    cycle_len=20,
    eval_samples=60,
    cycle_eval_samples=64,
    cas_budget=0,
)


@pytest.fixture
def tiny_cfg():
    def make(**overrides):
        kwargs = dict(TINY)
        kwargs.update(overrides)
        kwargs.setdefault("kind", "train")
        return ExperimentConfig(**kwargs)

    return make


def central_difference(f, x, h=1e-6):
    """Gradient of scalar f at flat array x by central differences."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = f(x)
        xf[i] = orig - h
        down = f(x)
        xf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    return float(np.max(np.abs(a - n) / denom))
