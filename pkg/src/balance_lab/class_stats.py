"""Effective class frequencies with exponential forgetting.

The tracker accumulates per-class counts over a cycle of training
iterations.  At each cycle boundary the effective counts decay by
``1 - alpha`` and absorb ``beta`` times the counts collected during the
cycle:

    n_hat <- (1 - alpha) * n_hat + beta * cycle_counts

With a stationary count stream the normalized frequencies converge
geometrically at rate ``1 - alpha`` to the stream's distribution,
independent of ``beta`` (``beta`` only rescales the stationary total).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_HAT_FLOOR = 1e-8


@dataclass(frozen=True)
class ClassDistribution:
    """A point on the probability simplex."""

    p: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise ValueError("empty distribution")
        if np.any(arr < 0.0):
            raise ValueError("distribution has negative entries")
        total = arr.sum()
        if not np.isfinite(total) or abs(total - 1.0) > 1e-9:
            raise ValueError(f"distribution sums to {total!r}, not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "p", arr)

    @property
    def n_classes(self):
        return self.p.size


def as_weights(weights):
    """Coerce to a strictly positive 1-d float64 weight vector."""
    if isinstance(weights, ClassDistribution):
        arr = np.array(weights.p, dtype=np.float64)
    else:
        arr = np.asarray(weights, dtype=np.float64).reshape(-1).copy()
    if arr.size < 2:
        raise ValueError("need at least two classes")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("class weights must be finite and strictly positive")
    return arr


class EffectiveClassStats:
    """Cycle-scheduled tracker of effective class counts.

    ``record_batch``/``record_soft`` accumulate counts for the running
    cycle; ``end_cycle`` folds them into the effective counts.  Effective
    counts are floored at ``N_HAT_FLOOR`` after each update so downstream
    ``1 / n`` weights stay finite even for classes the counting source
    never sees.
    """

    def __init__(self, n_classes, alpha=0.5, beta=1.0, cycle_len=200, initial=1.0):
        if n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {n_classes}")
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {alpha}")
        if beta <= 0.0:
            raise ValueError(f"beta must be positive, got {beta}")
        if cycle_len < 1:
            raise ValueError(f"cycle_len must be >= 1, got {cycle_len}")
        if initial <= 0.0:
            raise ValueError(f"initial count must be positive, got {initial}")
        self.n_classes = int(n_classes)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.cycle_len = int(cycle_len)
        self.n_hat = np.full(self.n_classes, float(initial))
        self.pending = np.zeros(self.n_classes)
        self.cycle_index = 0

    def record_batch(self, labels):
        """Add hard label counts for the running cycle."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("labels out of range")
        self.pending += np.bincount(labels, minlength=self.n_classes)

    def record_soft(self, probs):
        """Add soft counts (column sums of a row-stochastic matrix)."""
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != self.n_classes:
            raise ValueError(f"expected (batch, {self.n_classes}) probabilities")
        if np.any(probs < 0.0):
            raise ValueError("probabilities must be non-negative")
        self.pending += probs.sum(axis=0)

    def end_cycle(self):
        """Fold pending counts into the effective counts; returns them."""
        consumed = self.pending
        self.n_hat = (1.0 - self.alpha) * self.n_hat + self.beta * consumed
        np.maximum(self.n_hat, N_HAT_FLOOR, out=self.n_hat)
        self.pending = np.zeros(self.n_classes)
        self.cycle_index += 1
        return consumed

    def distribution(self):
        """Normalized effective frequencies as a ClassDistribution."""
        total = self.n_hat.sum()
        return ClassDistribution(self.n_hat / total)
