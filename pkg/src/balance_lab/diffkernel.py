"""Reverse-mode differentiation kernel for small dense networks.

Values are float64 numpy matrices in row-major layout; scalars are
``(1, 1)`` matrices.  A :class:`Graph` owns a list of nodes in creation
order, which is automatically a topological order because every op only
consumes nodes that already exist.  ``Graph.backward`` walks that list in
reverse and accumulates gradients.

The kernel is deliberately tiny: define-by-run, float64 only, no
broadcasting beyond the bias row.  Everything downstream (trainer, theory
checks) relies on it being bitwise deterministic, so no op may use
threading or nondeterministic reductions.
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.1
LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested op."""


class Node:
    """One graph entry: value, gradient slot, parents, trainable flag."""

    __slots__ = ("op", "parents", "value", "grad", "trainable", "index", "extra")

    def __init__(self, op, parents, value, trainable=False, index=-1, extra=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self.trainable = trainable
        self.index = index
        self.extra = extra

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, index={self.index}, shape={self.value.shape})"


def _as_matrix(value):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Graph:
    """A single forward pass worth of nodes plus reverse-mode backprop."""

    def __init__(self):
        self.nodes = []

    def _append(self, op, parents, value, trainable=False, extra=None):
        node = Node(op, parents, value, trainable, index=len(self.nodes), extra=extra)
        self.nodes.append(node)
        return node

    # -- leaves ------------------------------------------------------------

    def leaf(self, value, trainable=False):
        arr = _as_matrix(value)
        if not np.all(np.isfinite(arr)):
            raise ValueError("leaf value contains non-finite entries")
        return self._append("leaf", (), arr, trainable=trainable)

    def constant(self, value):
        return self.leaf(value, trainable=False)

    # -- ops ---------------------------------------------------------------

    def matmul(self, a, b):
        if a.value.shape[1] != b.value.shape[0]:
            raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")
        return self._append("matmul", (a, b), a.value @ b.value)

    def add(self, a, b):
        if a.value.shape != b.value.shape:
            raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
        return self._append("add", (a, b), a.value + b.value)

    def subtract(self, a, b):
        if a.value.shape != b.value.shape:
            raise ShapeError(f"subtract: {a.value.shape} vs {b.value.shape}")
        return self._append("subtract", (a, b), a.value - b.value)

    def multiply(self, a, b):
        if a.value.shape != b.value.shape:
            raise ShapeError(f"multiply: {a.value.shape} vs {b.value.shape}")
        return self._append("multiply", (a, b), a.value * b.value)

    def add_bias(self, x, bias):
        if bias.value.shape != (1, x.value.shape[1]):
            raise ShapeError(f"add_bias: {x.value.shape} with bias {bias.value.shape}")
        return self._append("add_bias", (x, bias), x.value + bias.value)

    def scale(self, x, factor):
        return self._append("scale", (x,), x.value * float(factor), extra=float(factor))

    def relu(self, x):
        return self._append("relu", (x,), np.maximum(x.value, 0.0))

    def leaky_relu(self, x, slope=LEAKY_SLOPE):
        slope = float(slope)
        value = np.where(x.value > 0.0, x.value, slope * x.value)
        return self._append("leaky_relu", (x,), value, extra=slope)

    def tanh(self, x):
        return self._append("tanh", (x,), np.tanh(x.value))

    def sigmoid(self, x):
        # Split by sign so neither exp overflows.
        v = x.value
        out = np.empty_like(v)
        pos = v >= 0.0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return self._append("sigmoid", (x,), out)

    def softmax_rows(self, x):
        shifted = x.value - x.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return self._append("softmax_rows", (x,), e / e.sum(axis=1, keepdims=True))

    def log(self, x):
        # Arguments below LOG_FLOOR are clamped; the gradient there is zero,
        # consistent with the clamped forward value being constant.
        return self._append("log", (x,), np.log(np.maximum(x.value, LOG_FLOOR)))

    def mean_over_batch(self, x):
        return self._append(
            "mean_over_batch", (x,), x.value.mean(axis=0, keepdims=True)
        )

    def sum(self, x):
        return self._append("sum", (x,), np.array([[x.value.sum()]]))

    # -- backprop ----------------------------------------------------------

    def backward(self, root):
        """Fill ``node.grad`` with d(root)/d(node) for every node.

        ``root`` must be a scalar node of this graph.  Nodes that do not
        feed into ``root`` keep a zero gradient.  Gradients are not
        accumulated into non-trainable leaves (frozen parameters and data),
        which keeps frozen subnetworks cheap to backprop through.
        """
        if root.value.shape != (1, 1):
            raise ShapeError(f"backward root must be scalar, got {root.value.shape}")
        if root.index >= len(self.nodes) or self.nodes[root.index] is not root:
            raise ValueError("root does not belong to this graph")

        reachable = np.zeros(len(self.nodes), dtype=bool)
        reachable[root.index] = True
        for node in self.nodes:
            node.grad = np.zeros_like(node.value)
        for i in range(root.index, -1, -1):
            if reachable[i]:
                for parent in self.nodes[i].parents:
                    reachable[parent.index] = True
        root.grad = np.ones((1, 1))
        for i in range(root.index, -1, -1):
            if not reachable[i]:
                continue
            node = self.nodes[i]
            if node.op == "leaf":
                continue
            contributions = _BACKWARD[node.op](node, node.grad)
            for parent, contribution in zip(node.parents, contributions):
                if parent.op == "leaf" and not parent.trainable:
                    continue
                parent.grad += contribution


def _bw_matmul(node, g):
    a, b = node.parents
    return (g @ b.value.T, a.value.T @ g)


def _bw_add(node, g):
    return (g, g)


def _bw_subtract(node, g):
    return (g, -g)


def _bw_multiply(node, g):
    a, b = node.parents
    return (g * b.value, g * a.value)


def _bw_add_bias(node, g):
    return (g, g.sum(axis=0, keepdims=True))


def _bw_scale(node, g):
    return (g * node.extra,)


def _bw_relu(node, g):
    (x,) = node.parents
    return (g * (x.value > 0.0),)


def _bw_leaky_relu(node, g):
    (x,) = node.parents
    return (g * np.where(x.value > 0.0, 1.0, node.extra),)


def _bw_tanh(node, g):
    return (g * (1.0 - node.value**2),)


def _bw_sigmoid(node, g):
    return (g * node.value * (1.0 - node.value),)


def _bw_softmax_rows(node, g):
    y = node.value
    return (y * (g - (g * y).sum(axis=1, keepdims=True)),)


def _bw_log(node, g):
    (x,) = node.parents
    live = x.value >= LOG_FLOOR
    return (np.where(live, g / np.maximum(x.value, LOG_FLOOR), 0.0),)


def _bw_mean_over_batch(node, g):
    (x,) = node.parents
    m = x.value.shape[0]
    return (np.broadcast_to(g / m, x.value.shape),)


def _bw_sum(node, g):
    (x,) = node.parents
    return (np.broadcast_to(g, x.value.shape),)


_BACKWARD = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "subtract": _bw_subtract,
    "multiply": _bw_multiply,
    "add_bias": _bw_add_bias,
    "scale": _bw_scale,
    "relu": _bw_relu,
    "leaky_relu": _bw_leaky_relu,
    "tanh": _bw_tanh,
    "sigmoid": _bw_sigmoid,
    "softmax_rows": _bw_softmax_rows,
    "log": _bw_log,
    "mean_over_batch": _bw_mean_over_batch,
    "sum": _bw_sum,
}
