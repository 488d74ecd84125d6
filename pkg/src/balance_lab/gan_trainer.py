"""Desk-scale GAN training loop with classifier feedback.

Three tiny dense networks: a generator mapping Gaussian noise to data
space, a discriminator scoring samples, and a frozen pretrained
classifier whose mean softmax feeds the balance penalty.  Updates
alternate one discriminator step and one generator step per iteration
(relativistic pairwise losses); generated-batch argmax labels feed the
effective class statistics, whose snapshot from the last completed cycle
weights the penalty.

Determinism: every random stream is derived from ``(seed, stream tag)``,
so a (config, data) pair fully determines the trajectory.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as _metrics
from .class_stats import EffectiveClassStats
from .diffkernel import Graph, ShapeError
from .longtail_data import LabeledDataset
from .regularizer import balance_loss, combined_generator_loss, mean_softmax

HIDDEN = 32

# rng stream tags, combined with the run seed as default_rng([seed, tag])
G_INIT_STREAM = 10
D_INIT_STREAM = 11
SAMPLING_STREAM = 12
EVAL_STREAM = 13
OUTPUT_STREAM = 14
CLASSIFIER_STREAM = 20

_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "softmax", "identity")


class TrainingDiverged(RuntimeError):
    """A loss went non-finite during training."""


def _stable_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def _apply_activation_np(tag, v):
    if tag == "identity":
        return v
    if tag == "relu":
        return np.maximum(v, 0.0)
    if tag == "leaky_relu":
        return np.where(v > 0.0, v, 0.1 * v)
    if tag == "tanh":
        return np.tanh(v)
    if tag == "sigmoid":
        return _stable_sigmoid(v)
    if tag == "softmax":
        e = np.exp(v - v.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown activation {tag!r}")


class MLP:
    """Dense network: weights, biases, one activation tag per layer."""

    def __init__(self, sizes, activations, rng=None, weights=None, biases=None,
                 trainable=True):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if len(activations) != len(sizes) - 1:
            raise ValueError(
                f"{len(sizes) - 1} layers but {len(activations)} activation tags"
            )
        for tag in activations:
            if tag not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")
        self.sizes = sizes
        self.activations = list(activations)
        self.trainable = trainable
        if weights is None:
            if rng is None:
                raise ValueError("need rng to initialize weights")
            weights = [
                rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))
                for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
            ]
            biases = [np.zeros((1, fan_out)) for fan_out in sizes[1:]]
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (1, sizes[i + 1]):
                raise ShapeError(f"layer {i}: weight {w.shape}, bias {b.shape}")

    def parameters(self):
        """Flat parameter list (w0, b0, w1, b1, ...); live references."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_parameters(self, params):
        params = list(params)
        if len(params) != 2 * len(self.weights):
            raise ValueError("parameter count mismatch")
        for i in range(len(self.weights)):
            self.weights[i][...] = params[2 * i]
            self.biases[i][...] = params[2 * i + 1]

    def copy(self):
        return MLP(
            self.sizes, self.activations,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            trainable=self.trainable,
        )

    def bind(self, graph, trainable=None):
        """Create this net's parameter leaves in ``graph`` once."""
        if trainable is None:
            trainable = self.trainable
        return BoundMLP(graph, self, trainable)

    def apply(self, x, params=None):
        """Plain numpy forward pass (no graph); optional parameter override."""
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 1:
            h = h.reshape(1, -1)
        weights, biases = self.weights, self.biases
        if params is not None:
            params = list(params)
            weights = params[0::2]
            biases = params[1::2]
        for w, b, tag in zip(weights, biases, self.activations):
            h = _apply_activation_np(tag, h @ w + b)
        return h


class BoundMLP:
    """One graph's view of an MLP: parameter leaves plus forward builder."""

    def __init__(self, graph, mlp, trainable):
        self.graph = graph
        self.mlp = mlp
        self.param_nodes = []
        for w, b in zip(mlp.weights, mlp.biases):
            self.param_nodes.append(graph.leaf(w, trainable=trainable))
            self.param_nodes.append(graph.leaf(b, trainable=trainable))

    def __call__(self, x):
        g = self.graph
        h = x if hasattr(x, "value") else g.leaf(x)
        for i, tag in enumerate(self.mlp.activations):
            h = g.add_bias(g.matmul(h, self.param_nodes[2 * i]),
                           self.param_nodes[2 * i + 1])
            if tag == "relu":
                h = g.relu(h)
            elif tag == "leaky_relu":
                h = g.leaky_relu(h)
            elif tag == "tanh":
                h = g.tanh(h)
            elif tag == "sigmoid":
                h = g.sigmoid(h)
            elif tag == "softmax":
                h = g.softmax_rows(h)
        return h

    def gradients(self):
        return [node.grad for node in self.param_nodes]


def make_generator(noise_dim, data_dim, rng, hidden=HIDDEN):
    return MLP([noise_dim, hidden, hidden, data_dim], ["tanh", "tanh", "identity"],
               rng=rng)


def make_discriminator(data_dim, rng, hidden=HIDDEN):
    return MLP([data_dim, hidden, hidden, 1],
               ["leaky_relu", "leaky_relu", "identity"], rng=rng)


def make_classifier(data_dim, n_classes, rng, hidden=HIDDEN):
    return MLP([data_dim, hidden, n_classes], ["relu", "softmax"], rng=rng)


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.step_count = 0

    def step(self, grads):
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError("gradient count mismatch")
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class EMA:
    """Exponential moving average of parameter arrays.

    Inactive before ``start_step``; the first update takes a snapshot.
    ``decay = 1.0`` keeps that snapshot frozen.
    """

    def __init__(self, decay, start_step):
        if not 0.0 < decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {decay}")
        self.decay = float(decay)
        self.start_step = int(start_step)
        self.shadow = None

    def update(self, step, params):
        if step < self.start_step:
            return
        if self.shadow is None:
            self.shadow = [p.copy() for p in params]
            return
        for s, p in zip(self.shadow, params):
            s *= self.decay
            s += (1.0 - self.decay) * p

    def parameters_or(self, params):
        return self.shadow if self.shadow is not None else params


def relativistic_losses(graph, d_real, d_fake):
    """Pairwise relativistic losses as scalar nodes.

    ``loss_d = -mean log sigmoid(d_real - d_fake)`` and ``loss_g`` with the
    roles swapped; expectations are batch means over aligned pairs.
    """
    if d_real.value.shape != d_fake.value.shape:
        raise ShapeError(
            f"real/fake score shapes differ: {d_real.value.shape} vs {d_fake.value.shape}"
        )
    if d_real.value.shape[1] != 1:
        raise ShapeError(f"scores must be (n, 1), got {d_real.value.shape}")

    def _loss(a, b):
        s = graph.sigmoid(graph.subtract(a, b))
        return graph.scale(graph.mean_over_batch(graph.log(s)), -1.0)

    return _loss(d_real, d_fake), _loss(d_fake, d_real)


@dataclass
class TrainerConfig:
    """Knobs of one GAN run; data/classifier are passed separately."""

    n_classes: int
    noise_dim: int = 8
    data_dim: int = 2
    batch_size: int = 64
    iterations: int = 4000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lam: float = 5.0
    alpha: float = 0.5
    beta: float | None = 1.0  # None tracks alpha
    cycle_len: int = 200
    ema_decay: float = 0.999
    ema_start: int = -1  # -1: starts at 20% of iterations
    seed: int = 0
    label_proposal: str = "uniform"
    stat_counting: str = "argmax"
    eval_samples: int = 512

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        for name in ("noise_dim", "data_dim", "batch_size", "iterations",
                     "cycle_len", "eval_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("lr_g", "lr_d"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.beta is not None and self.beta <= 0.0:
            raise ValueError(f"beta must be positive or None, got {self.beta}")
        if not 0.0 < self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must be in (0, 1], got {self.ema_decay}")
        if self.label_proposal not in ("uniform", "inverse-frequency"):
            raise ValueError(f"unknown label_proposal {self.label_proposal!r}")
        if self.stat_counting not in ("argmax", "soft"):
            raise ValueError(f"unknown stat_counting {self.stat_counting!r}")

    @property
    def beta_value(self):
        return self.alpha if self.beta is None else self.beta

    def resolved_ema_start(self):
        return self.ema_start if self.ema_start >= 0 else self.iterations // 5


@dataclass
class CycleMetrics:
    """One metrics row, written at each cycle boundary."""

    cycle: int
    iteration: int
    loss_d: float
    loss_g: float
    loss_reg: float
    kl_uniform: float
    frechet: float
    n_dist: np.ndarray
    class_fracs: np.ndarray


@dataclass
class TrainResult:
    generator: MLP
    ema_generator: MLP
    discriminator: MLP
    history: list[CycleMetrics]
    stats: EffectiveClassStats
    config: TrainerConfig
    eval_fractions: np.ndarray = field(default=None, repr=False)

    def sample(self, n, seed=0, use_ema=True):
        """Generate ``n`` samples from the (EMA by default) generator."""
        rng = np.random.default_rng([int(seed), OUTPUT_STREAM])
        z = rng.standard_normal((int(n), self.config.noise_dim))
        g = self.ema_generator if use_ema else self.generator
        return g.apply(z)


def _eval_fractions(generator, params, classifier, rng, n, noise_dim, n_classes):
    z = rng.standard_normal((n, noise_dim))
    labels = classifier.apply(generator.apply(z, params=params)).argmax(axis=1)
    return np.bincount(labels, minlength=n_classes) / float(n)


def _run_loop(config, train_data, classifier, annotator=None, eval_real=None,
              fixed_dist=None):
    """Shared training loop; ``fixed_dist`` freezes the penalty weights."""
    if not isinstance(train_data, LabeledDataset):
        raise TypeError("train_data must be a LabeledDataset")
    if train_data.dim != config.data_dim:
        raise ValueError(
            f"data dim {train_data.dim} does not match config.data_dim={config.data_dim}"
        )
    k = config.n_classes
    if config.label_proposal == "inverse-frequency":
        warnings.warn(
            "label_proposal='inverse-frequency' requires a conditional generator; "
            "ignored for the unconditional one", RuntimeWarning)

    rng_sample = np.random.default_rng([config.seed, SAMPLING_STREAM])
    rng_eval = np.random.default_rng([config.seed, EVAL_STREAM])
    generator = make_generator(
        config.noise_dim, config.data_dim,
        np.random.default_rng([config.seed, G_INIT_STREAM]))
    discriminator = make_discriminator(
        config.data_dim, np.random.default_rng([config.seed, D_INIT_STREAM]))
    adam_g = Adam(generator.parameters(), config.lr_g, config.adam_beta1,
                  config.adam_beta2)
    adam_d = Adam(discriminator.parameters(), config.lr_d, config.adam_beta1,
                  config.adam_beta2)
    ema = EMA(config.ema_decay, config.resolved_ema_start())
    stats = EffectiveClassStats(k, config.alpha, config.beta_value,
                                config.cycle_len)
    labeler = annotator if annotator is not None else classifier

    snapshot = np.asarray(fixed_dist, dtype=np.float64) if fixed_dist is not None \
        else stats.distribution().p
    eval_fracs = [_eval_fractions(generator, None, classifier, rng_eval,
                                  config.eval_samples, config.noise_dim, k)]
    history = []
    cycle_counts = np.zeros(k)
    loss_acc = np.zeros(3)
    n_train = len(train_data)

    for it in range(config.iterations):
        real = train_data.samples[rng_sample.integers(0, n_train, config.batch_size)]

        # discriminator step (generator frozen)
        graph = Graph()
        fake = generator.bind(graph, trainable=False)(
            graph.leaf(rng_sample.standard_normal((config.batch_size, config.noise_dim))))
        d_bound = discriminator.bind(graph, trainable=True)
        loss_d, _ = relativistic_losses(graph, d_bound(graph.leaf(real)), d_bound(fake))
        graph.backward(loss_d)
        adam_d.step(d_bound.gradients())

        # generator step (discriminator and classifier frozen)
        graph = Graph()
        g_bound = generator.bind(graph, trainable=True)
        fake = g_bound(graph.leaf(
            rng_sample.standard_normal((config.batch_size, config.noise_dim))))
        d_bound = discriminator.bind(graph, trainable=False)
        _, loss_g = relativistic_losses(graph, d_bound(graph.leaf(real)), d_bound(fake))
        p_hat = mean_softmax(graph, classifier, fake)
        loss_reg = balance_loss(graph, p_hat, snapshot)
        total = combined_generator_loss(graph, loss_g, loss_reg, config.lam, k)
        graph.backward(total)
        adam_g.step(g_bound.gradients())
        ema.update(it, generator.parameters())

        values = (float(loss_d.value[0, 0]), float(loss_g.value[0, 0]),
                  float(loss_reg.value[0, 0]))
        if not all(np.isfinite(values)):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: "
                f"loss_d={values[0]!r}, loss_g={values[1]!r}, loss_reg={values[2]!r}")
        loss_acc += values

        if config.stat_counting == "soft":
            soft = p_hat.probs.value
            cycle_counts += soft.sum(axis=0)
            if fixed_dist is None:
                stats.record_soft(soft)
        else:
            labels = p_hat.probs.value.argmax(axis=1)
            cycle_counts += np.bincount(labels, minlength=k)
            if fixed_dist is None:
                stats.record_batch(labels)

        if (it + 1) % config.cycle_len == 0:
            if fixed_dist is None:
                stats.end_cycle()
                snapshot = stats.distribution().p
            eval_params = ema.parameters_or(generator.parameters())
            gen_eval = generator.apply(
                rng_eval.standard_normal((config.eval_samples, config.noise_dim)),
                params=eval_params)
            kl = _metrics.kl_to_uniform(labeler.apply(gen_eval).argmax(axis=1), k)
            frechet = (_metrics.frechet_gaussian(eval_real, gen_eval)
                       if eval_real is not None else float("nan"))
            eval_fracs.append(_eval_fractions(
                generator, eval_params, classifier, rng_eval,
                config.eval_samples, config.noise_dim, k))
            mean_losses = loss_acc / config.cycle_len
            history.append(CycleMetrics(
                cycle=len(history) + 1,
                iteration=it + 1,
                loss_d=mean_losses[0],
                loss_g=mean_losses[1],
                loss_reg=mean_losses[2],
                kl_uniform=kl,
                frechet=frechet,
                n_dist=snapshot.copy(),
                class_fracs=cycle_counts / cycle_counts.sum(),
            ))
            cycle_counts = np.zeros(k)
            loss_acc = np.zeros(3)

    ema_generator = generator.copy()
    ema_generator.set_parameters(ema.parameters_or(generator.parameters()))
    return TrainResult(
        generator=generator,
        ema_generator=ema_generator,
        discriminator=discriminator,
        history=history,
        stats=stats,
        config=config,
        eval_fractions=np.asarray(eval_fracs),
    )


def train(config, train_data, classifier, annotator=None, eval_real=None):
    """Run the full loop; returns the trained nets and per-cycle metrics.

    ``classifier`` drives the balance penalty and the class statistics;
    ``annotator`` (if given) labels evaluation samples for the KL metric;
    ``eval_real`` (if given) is the real reference set for the Fréchet
    proxy.
    """
    return _run_loop(config, train_data, classifier, annotator, eval_real)


@dataclass
class FixedStatsResult:
    """Trajectory of generated class fractions under frozen penalty weights."""

    fractions: np.ndarray  # (cycles + 1, K); row 0 is measured before training
    result: TrainResult

    @property
    def class0(self):
        return self.fractions[:, 0]


def train_fixed_stats(config, train_data, classifier, n_hat_fixed,
                      annotator=None, eval_real=None):
    """Train with the penalty weights frozen at normalized ``n_hat_fixed``.

    The statistics tracker never updates, so the generator chases a fixed
    target for the whole run.  EMA is disabled: the trajectory should
    reflect the live generator, not a lagged average.  Returns the
    per-cycle evaluation fractions (row 0 from the untrained generator).
    """
    n_hat = np.asarray(n_hat_fixed, dtype=np.float64).reshape(-1)
    if n_hat.size != config.n_classes:
        raise ValueError(
            f"n_hat_fixed has {n_hat.size} entries, config has {config.n_classes} classes")
    if np.any(n_hat <= 0.0) or not np.all(np.isfinite(n_hat)):
        raise ValueError("n_hat_fixed must be strictly positive and finite")
    config = replace(config, ema_start=config.iterations + 1)
    result = _run_loop(config, train_data, classifier, annotator, eval_real,
                       fixed_dist=n_hat / n_hat.sum())
    return FixedStatsResult(fractions=result.eval_fractions, result=result)


@dataclass
class PretrainedClassifier:
    """Frozen classifier plus its balanced-set accuracy report."""

    model: MLP
    accuracy: float | None
    per_class_accuracy: np.ndarray | None
    missing_classes: np.ndarray
    flagged: bool

    @property
    def tail_accuracy(self):
        if self.per_class_accuracy is None:
            return None
        return float(self.per_class_accuracy[-1])


def pretrain_classifier(train_data, epochs, lr, batch_size=64, seed=0,
                        eval_data=None):
    """Train a softmax classifier with cross-entropy; returns it frozen.

    ``seed`` may be an int or a seed sequence/list.  If ``eval_data`` is
    given (a balanced set), per-class accuracies are measured on it.  A
    class absent from training data, or any per-class accuracy of zero,
    sets ``flagged``: balancing feedback from such a classifier is
    unreliable for the affected classes and training on it may diverge.
    """
    if len(train_data) == 0:
        raise ValueError("empty training set")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    k = train_data.n_classes
    rng = np.random.default_rng(seed)
    model = make_classifier(train_data.dim, k, rng)
    adam = Adam(model.parameters(), lr)
    n = len(train_data)
    eye = np.eye(k)
    batch_size = min(int(batch_size), n)

    for _ in range(int(epochs)):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            graph = Graph()
            bound = model.bind(graph, trainable=True)
            probs = bound(graph.leaf(train_data.samples[idx]))
            # cross-entropy: -mean over batch of log prob of the true class
            loss = graph.scale(
                graph.sum(graph.multiply(graph.log(probs),
                                         graph.constant(eye[train_data.labels[idx]]))),
                -1.0 / idx.size)
            graph.backward(loss)
            adam.step(bound.gradients())

    model.trainable = False
    missing = np.setdiff1d(np.arange(k), np.unique(train_data.labels))
    accuracy = None
    per_class = None
    flagged = missing.size > 0
    if eval_data is not None:
        accuracy, per_class = _metrics.per_class_accuracy(model, eval_data)
        flagged = flagged or bool(np.any(per_class == 0.0))
    if flagged:
        warnings.warn(
            f"classifier cannot separate some classes (missing={missing.tolist()}, "
            f"per-class accuracy={None if per_class is None else np.round(per_class, 3).tolist()}); "
            "balancing feedback may diverge", RuntimeWarning)
    return PretrainedClassifier(
        model=model,
        accuracy=accuracy,
        per_class_accuracy=per_class,
        missing_classes=missing,
        flagged=flagged,
    )


def save_checkpoint(npz_path, manifest_path, result, extra=None):
    """Write parameter tensors (npz) plus a JSON manifest."""
    arrays = {}
    nets = {"g": result.generator, "ema": result.ema_generator,
            "d": result.discriminator}
    manifest = {
        "iteration": result.config.iterations,
        "seed": result.config.seed,
        "nets": {},
    }
    for prefix, net in nets.items():
        manifest["nets"][prefix] = {
            "sizes": net.sizes, "activations": net.activations,
        }
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{prefix}_w{i}"] = w
            arrays[f"{prefix}_b{i}"] = b
    if extra:
        manifest.update(extra)
    np.savez(npz_path, **arrays)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(npz_path, manifest_path):
    """Rebuild the three nets from a checkpoint; returns (nets, manifest)."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    data = np.load(npz_path)
    nets = {}
    for prefix, desc in manifest["nets"].items():
        n_layers = len(desc["sizes"]) - 1
        nets[prefix] = MLP(
            desc["sizes"], desc["activations"],
            weights=[data[f"{prefix}_w{i}"] for i in range(n_layers)],
            biases=[data[f"{prefix}_b{i}"] for i in range(n_layers)],
        )
    return nets, manifest
