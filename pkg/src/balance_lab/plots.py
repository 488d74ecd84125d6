"""SVG figures for run artifacts.

Single self-contained files with axes and legends, rendered headless.
Output is deterministic for a given (data, config hash): the hash seeds
matplotlib's id salt, the creation date is stripped, and the hash itself
is appended as a trailing comment so every figure names the exact
configuration that produced it.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PROVENANCE_PREFIX = "<!-- balance-lab config_hash="


def _save(fig, path, digest):
    with matplotlib.rc_context({"svg.hashsalt": digest}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"{PROVENANCE_PREFIX}{digest} -->\n")


def read_provenance(path):
    """The config hash embedded in a figure, or None."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith(PROVENANCE_PREFIX):
                return line[len(PROVENANCE_PREFIX):].split(" ", 1)[0]
    return None


def fraction_trajectories(path, fractions, cycle_len, digest, highlight=None):
    """Per-class generated fractions against training iteration."""
    fractions = np.asarray(fractions, dtype=np.float64)
    cycles, k = fractions.shape
    x = np.arange(cycles) * cycle_len
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for c in range(k):
        wide = highlight is not None and c == highlight
        ax.plot(
            x,
            fractions[:, c],
            linewidth=2.2 if wide else 1.1,
            label=f"class {c}",
        )
    ax.axhline(1.0 / k, color="gray", linestyle="--", linewidth=0.8,
               label=f"uniform 1/{k}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("generated fraction")
    ax.set_title("Generated class fractions")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    _save(fig, path, digest)


def training_curves(path, history, digest):
    """Cycle-mean losses plus the KL and Frechet evaluation curves."""
    iters = [m.iteration for m in history]
    fig, (ax_loss, ax_kl) = plt.subplots(2, 1, figsize=(6.4, 6.4), sharex=True)
    ax_loss.plot(iters, [m.loss_d for m in history], label="loss_d")
    ax_loss.plot(iters, [m.loss_g for m in history], label="loss_g")
    ax_loss.plot(iters, [m.loss_reg for m in history], label="loss_reg")
    ax_loss.set_ylabel("cycle-mean loss")
    ax_loss.set_title("Training curves")
    ax_loss.legend(fontsize=8)
    ax_kl.plot(iters, [m.kl_uniform for m in history], color="tab:blue",
               label="kl_uniform")
    ax_kl.set_xlabel("iteration")
    ax_kl.set_ylabel("KL to uniform (nats)", color="tab:blue")
    frechet = [m.frechet for m in history]
    if any(np.isfinite(v) for v in frechet):
        ax_fr = ax_kl.twinx()
        ax_fr.plot(iters, frechet, color="tab:red", label="frechet")
        ax_fr.set_ylabel("Frechet distance", color="tab:red")
    ax_kl.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    _save(fig, path, digest)


def sweep_summary(path, kind, rows, digest):
    """Aggregate sweep metrics against the swept value (categorical x)."""
    values = [str(r[0]) for r in rows]
    x = np.arange(len(rows))
    fig, (ax_kl, ax_tail) = plt.subplots(2, 1, figsize=(6.4, 6.4), sharex=True)
    ax_kl.plot(x, [r[2] for r in rows], marker="o", label="kl_uniform")
    ax_kl.plot(x, [r[3] for r in rows], marker="s", label="frechet")
    ax_kl.set_ylabel("final metric")
    ax_kl.set_title(f"Sweep: {kind}")
    ax_kl.legend(fontsize=8)
    ax_tail.plot(x, [r[1] for r in rows], marker="o", color="tab:green",
                 label="tail accuracy")
    ax_tail.set_ylabel("classifier tail accuracy")
    ax_tail.set_xlabel("sweep value")
    ax_tail.set_xticks(x)
    ax_tail.set_xticklabels(values)
    ax_tail.set_ylim(-0.05, 1.05)
    ax_tail.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, digest)


def report_overlay(path, named_curves, digest):
    """KL-to-uniform curves of several runs on shared axes."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, (iters, kls) in named_curves:
        ax.plot(iters, kls, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("KL to uniform (nats)")
    ax.set_title("Run comparison")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, digest)
