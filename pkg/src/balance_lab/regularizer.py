"""Class-balancing generator penalty.

The penalty is ``sum_k p_k log(p_k) / w_k`` where ``p`` is the batch-mean
classifier softmax on generated samples and ``w`` are the normalized
effective class frequencies.  The weights enter as constants, never as
graph nodes, so gradients flow only through ``p`` (and from there through
the frozen classifier into the generator).  With uniform weights the
penalty is ``-K`` times the Shannon entropy of ``p``, so minimizing it
spreads generated samples across classes; non-uniform weights push hardest
on the classes with the smallest effective frequency.
"""

from __future__ import annotations

from dataclasses import dataclass

from .class_stats import as_weights
from .diffkernel import Node, ShapeError


@dataclass(frozen=True)
class MeanSoftmax:
    """Batch-mean softmax node plus the per-sample rows it averages."""

    node: Node
    probs: Node
    batch_size: int

    @property
    def p_hat(self):
        return self.node.value[0]


def mean_softmax(graph, classifier, generated):
    """Average the frozen classifier's softmax rows over a generated batch.

    ``classifier`` is bound non-trainable: the returned node's backward
    pass reaches the generator but deposits nothing on classifier weights.
    """
    bound = classifier.bind(graph, trainable=False)
    probs = bound(generated)
    return MeanSoftmax(graph.mean_over_batch(probs), probs, generated.value.shape[0])


def balance_loss(graph, p_hat, weights):
    """``sum_k p_k log(p_k) / w_k`` as a scalar node.

    ``p_hat`` is a :class:`MeanSoftmax` or a ``(1, K)`` node; ``weights``
    may be a ClassDistribution or any positive vector and is captured as
    a constant.
    """
    node = p_hat.node if isinstance(p_hat, MeanSoftmax) else p_hat
    w = as_weights(weights)
    if node.value.shape != (1, w.size):
        raise ShapeError(
            f"mean softmax shape {node.value.shape} does not match {w.size} weights"
        )
    inv = graph.constant((1.0 / w).reshape(1, -1))
    return graph.sum(graph.multiply(graph.multiply(node, graph.log(node)), inv))


def combined_generator_loss(graph, gan_term, reg_term, lam, n_classes):
    """``gan_term + (lam / n_classes) * reg_term`` as a scalar node.

    The coefficient is normalized by the class count so one ``lam`` value
    transfers across datasets with different K.  ``lam = 0`` leaves the
    generator objective bit-identical to the unregularized one.
    """
    if lam < 0.0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    for term in (gan_term, reg_term):
        if term.value.shape != (1, 1):
            raise ShapeError(f"loss terms must be scalar, got {term.value.shape}")
    return graph.add(gan_term, graph.scale(reg_term, lam / n_classes))
