"""Experiment orchestration: a validated config in, a run directory out.

Every runner writes a fixed set of files into its output directory so
reruns with the same config and seed are byte-identical:

  config.txt     resolved configuration (canonical key=value text)
  metrics.csv    one row per training cycle
  stats.csv      effective class distribution snapshot per cycle
  fractions.csv  generated class fractions measured per cycle (row 0 is
                 the untrained generator)
  summary.json   final metrics, classifier reports, config hash
  checkpoint.npz / manifest.json   generator, EMA generator, discriminator
  *.svg          fraction trajectories, loss and metric curves

Sweeps nest one such directory per member and add sweep.csv / sweep.svg;
theory verification writes theory.csv plus its own summary.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import plots
from .config import (
    SWEEP_DEFAULTS,
    ConfigError,
    canonical_text,
    config_hash,
    save_config,
    with_overrides,
)
from .gan_trainer import (
    CLASSIFIER_STREAM,
    TrainerConfig,
    pretrain_classifier,
    save_checkpoint,
    train,
    train_fixed_stats,
)
from .longtail_data import (
    ANNOTATOR_STREAM,
    LongTailSpec,
    make_balanced,
    make_longtail,
    save_dataset,
)
from .metrics import classifier_accuracy_score, frechet_gaussian, kl_to_uniform
from .theory_oracle import run_verification

ANNOTATOR_SEED_STREAM = 21
CAS_SEED_STREAM = 22

SWEEP_KINDS = ("classifier-sweep", "beta-ablation", "cycle-sweep")


def _fmt(value):
    # repr of the builtin float: shortest round-trip text, and numpy
    # scalars never leak their np.float64(...) wrapper into the file
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    """CSV with LF endings and repr-formatted floats (stable re-parsing)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Pipeline:
    """Datasets and frozen classifiers shared by one experiment run."""

    spec: LongTailSpec
    train_data: object
    test_data: object
    classifier: object  # in-loop feedback classifier (PretrainedClassifier)
    annotator: object  # balanced-data annotator for evaluation


def build_pipeline(cfg):
    """Draw the datasets and pretrain both classifiers for ``cfg``."""
    spec = LongTailSpec(
        n_classes=cfg.n_classes,
        rho=cfg.rho,
        n_max=cfg.n_max,
        dim=cfg.dim,
        radius=cfg.radius,
        std=cfg.std,
        seed=cfg.seed,
    )
    train_data = make_longtail(spec)
    test_data = make_balanced(spec, cfg.test_per_class)
    annotator_data = make_balanced(
        spec, cfg.annotator_per_class, stream=ANNOTATOR_STREAM
    )
    if cfg.clf_rho > 0.0:
        clf_train = make_longtail(replace(spec, rho=cfg.clf_rho))
    else:
        clf_train = train_data
    classifier = pretrain_classifier(
        clf_train,
        cfg.clf_epochs,
        cfg.clf_lr,
        batch_size=cfg.clf_batch,
        seed=[cfg.seed, CLASSIFIER_STREAM],
        eval_data=test_data,
    )
    annotator = pretrain_classifier(
        annotator_data,
        cfg.annotator_epochs,
        cfg.clf_lr,
        batch_size=cfg.clf_batch,
        seed=[cfg.seed, ANNOTATOR_SEED_STREAM],
        eval_data=test_data,
    )
    return Pipeline(
        spec=spec,
        train_data=train_data,
        test_data=test_data,
        classifier=classifier,
        annotator=annotator,
    )


def trainer_config(cfg, lam=None):
    """The TrainerConfig slice of an experiment config."""
    return TrainerConfig(
        n_classes=cfg.n_classes,
        noise_dim=cfg.noise_dim,
        data_dim=cfg.dim,
        batch_size=cfg.batch_size,
        iterations=cfg.iterations,
        lr_g=cfg.lr_g,
        lr_d=cfg.lr_d,
        adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2,
        lam=cfg.lam if lam is None else lam,
        alpha=cfg.alpha,
        beta=cfg.beta,
        cycle_len=cfg.cycle_len,
        ema_decay=cfg.ema_decay,
        ema_start=cfg.ema_start,
        seed=cfg.seed,
        label_proposal=cfg.label_proposal,
        stat_counting=cfg.stat_counting,
        eval_samples=cfg.cycle_eval_samples,
    )


def run_name(cfg):
    parts = [cfg.kind]
    if cfg.name:
        parts.append(cfg.name)
    parts.append(f"seed{cfg.seed}")
    return "-".join(parts)


def _classifier_report(pretrained):
    report = {
        "accuracy": pretrained.accuracy,
        "flagged": bool(pretrained.flagged),
        "missing_classes": pretrained.missing_classes.tolist(),
        "tail_accuracy": pretrained.tail_accuracy,
    }
    if pretrained.per_class_accuracy is not None:
        report["per_class_accuracy"] = [
            float(a) for a in pretrained.per_class_accuracy
        ]
    return report


def _write_history(out, history, n_classes):
    k = n_classes
    frac_cols = [f"frac_{i}" for i in range(k)]
    write_csv(
        out / "metrics.csv",
        ["cycle", "iter", "loss_d", "loss_g", "loss_reg", "kl_uniform", "frechet"]
        + frac_cols,
        [
            [m.cycle, m.iteration, m.loss_d, m.loss_g, m.loss_reg, m.kl_uniform,
             m.frechet] + [float(v) for v in m.class_fracs]
            for m in history
        ],
    )
    write_csv(
        out / "stats.csv",
        ["cycle", "iter"] + [f"N_{i}" for i in range(k)],
        [
            [m.cycle, m.iteration] + [float(v) for v in m.n_dist]
            for m in history
        ],
    )


def _write_fractions(out, fractions, cycle_len, n_classes):
    write_csv(
        out / "fractions.csv",
        ["cycle", "iter"] + [f"frac_{i}" for i in range(n_classes)],
        [
            [c, c * cycle_len] + [float(v) for v in row]
            for c, row in enumerate(fractions)
        ],
    )


def _final_evaluation(cfg, pipeline, result):
    samples = result.sample(cfg.eval_samples, seed=cfg.seed)
    labels = pipeline.annotator.model.apply(samples).argmax(axis=1)
    evaluation = {
        "kl_uniform": kl_to_uniform(labels, cfg.n_classes),
        "frechet": frechet_gaussian(pipeline.test_data.samples, samples),
        "class_fractions": [
            float(v)
            for v in np.bincount(labels, minlength=cfg.n_classes) / labels.size
        ],
    }
    if cfg.cas_budget > 0:
        if cfg.cas_budget < cfg.n_classes:
            raise ConfigError(
                f"cas_budget: need >= {cfg.n_classes} samples (one per class), "
                f"got {cfg.cas_budget}"
            )
        evaluation["clf_accuracy"] = classifier_accuracy_score(
            lambda n: result.sample(n, seed=cfg.seed),
            pipeline.classifier.model,
            pipeline.test_data,
            cfg.cas_budget,
            seed=[cfg.seed, CAS_SEED_STREAM],
        )
    return evaluation


def _base_summary(cfg, pipeline):
    return {
        "kind": cfg.kind,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "n_classes": cfg.n_classes,
        "lambda": cfg.lam,
        "classifier": _classifier_report(pipeline.classifier),
        "annotator": _classifier_report(pipeline.annotator),
    }


def run_train(cfg, out_dir, lam=None):
    """Full training run; returns the summary dict written to disk."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg if lam is None else with_overrides(cfg, lam=lam)
    if resolved.kind == "baseline" and resolved.lam != 0.0:
        resolved = with_overrides(resolved, lam=0.0)
    save_config(resolved, out / "config.txt")
    pipeline = build_pipeline(resolved)
    if resolved.save_data:
        save_dataset(pipeline.train_data, out / "train_data.csv", pipeline.spec)
    result = train(
        trainer_config(resolved),
        pipeline.train_data,
        pipeline.classifier.model,
        annotator=pipeline.annotator.model,
        eval_real=pipeline.test_data.samples,
    )
    _write_history(out, result.history, resolved.n_classes)
    _write_fractions(
        out, result.eval_fractions, resolved.cycle_len, resolved.n_classes
    )
    save_checkpoint(
        out / "checkpoint.npz",
        out / "manifest.json",
        result,
        extra={"config_hash": config_hash(resolved)},
    )
    summary = _base_summary(resolved, pipeline)
    summary["evaluation"] = _final_evaluation(resolved, pipeline, result)
    if result.history:
        last = result.history[-1]
        summary["last_cycle"] = {
            "cycle": last.cycle,
            "iter": last.iteration,
            "kl_uniform": last.kl_uniform,
            "frechet": last.frechet,
        }
    write_json(out / "summary.json", summary)
    digest = config_hash(resolved)
    plots.fraction_trajectories(
        out / "fractions.svg", result.eval_fractions, resolved.cycle_len, digest
    )
    plots.training_curves(out / "curves.svg", result.history, digest)
    return summary


def run_fixed_stats(cfg, out_dir):
    """Frozen-penalty run; records the class-fraction trajectory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.txt")
    pipeline = build_pipeline(cfg)
    fixed = train_fixed_stats(
        trainer_config(cfg),
        pipeline.train_data,
        pipeline.classifier.model,
        np.asarray(cfg.fixed_n_hat, dtype=np.float64),
        annotator=pipeline.annotator.model,
        eval_real=pipeline.test_data.samples,
    )
    result = fixed.result
    _write_history(out, result.history, cfg.n_classes)
    _write_fractions(out, fixed.fractions, cfg.cycle_len, cfg.n_classes)
    summary = _base_summary(cfg, pipeline)
    summary["fixed_n_hat"] = [float(v) for v in cfg.fixed_n_hat]
    summary["class0"] = {
        "start": float(fixed.class0[0]),
        "end": float(fixed.class0[-1]),
        "delta": float(fixed.class0[-1] - fixed.class0[0]),
    }
    write_json(out / "summary.json", summary)
    digest = config_hash(cfg)
    plots.fraction_trajectories(
        out / "fractions.svg", fixed.fractions, cfg.cycle_len, digest, highlight=0
    )
    plots.training_curves(out / "curves.svg", result.history, digest)
    return summary


def run_theory(cfg, out_dir, bound_tol=None, value_tol=None, oracle_tol=None):
    """Randomized closed-form verification; returns the summary object."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.txt")
    tols = {}
    if bound_tol is not None:
        tols["bound_tol"] = bound_tol
    if value_tol is not None:
        tols["value_tol"] = value_tol
    if oracle_tol is not None:
        tols["oracle_tol"] = oracle_tol
    summary = run_verification(
        trials=cfg.trials,
        k_min=cfg.k_min,
        k_max=cfg.k_max,
        seed=cfg.seed,
        probes=cfg.probes,
        **tols,
    )
    write_csv(
        out / "theory.csv",
        ["trial", "K", "max_bound_violation", "prop2_residual", "oracle_linf"],
        [
            [r.trial, r.k, r.max_bound_violation, r.prop2_residual, r.oracle_linf]
            for r in summary.reports
        ],
    )
    payload = {
        "kind": cfg.kind,
        "config_hash": config_hash(cfg),
        "trials": summary.n_trials,
        "max_bound_violation": summary.max_bound_violation,
        "max_prop2_residual": summary.max_prop2_residual,
        "max_oracle_linf": summary.max_oracle_linf,
        "min_domination_margin": summary.min_domination_margin,
        "uniform_tightness_gap": summary.uniform_tightness_gap,
        "all_ok": summary.all_ok,
        "elapsed_seconds": summary.elapsed_seconds,
        "failures": [
            {
                "trial": r.trial,
                "K": r.k,
                "n_values": [float(v) for v in r.n_values],
                "max_bound_violation": r.max_bound_violation,
                "prop2_residual": r.prop2_residual,
                "oracle_linf": r.oracle_linf,
                "domination_margin": r.domination_margin,
                "balancing_ok": r.balancing_ok,
            }
            for r in summary.failures()
        ],
    }
    write_json(out / "summary.json", payload)
    return summary


def sweep_member_config(cfg, value):
    """Derive one sweep member's training config from the sweep value."""
    if cfg.kind == "classifier-sweep":
        return with_overrides(
            cfg, kind="train", name=f"clf-rho-{value}", clf_rho=float(value)
        )
    if cfg.kind == "beta-ablation":
        beta = None if value.strip().lower() == "alpha" else float(value)
        return with_overrides(cfg, kind="train", name=f"beta-{value}", beta=beta)
    if cfg.kind == "cycle-sweep":
        return with_overrides(
            cfg, kind="train", name=f"cycle-{value}", cycle_len=int(value)
        )
    raise ConfigError(f"kind: {cfg.kind!r} is not a sweep kind")


def _sweep_member(args):
    cfg, value, out_dir = args
    member = sweep_member_config(cfg, value)
    summary = run_train(member, out_dir)
    tail = summary["classifier"]["tail_accuracy"]
    return [
        value,
        float("nan") if tail is None else float(tail),
        summary["evaluation"]["kl_uniform"],
        summary["evaluation"]["frechet"],
    ]


def run_sweep(cfg, out_dir, jobs=1):
    """One training run per sweep value plus an aggregate table and plot.

    A member failure is recorded in failures.json and the sweep carries
    on; its aggregate row is dropped.  Returns (rows, failures).
    """
    if cfg.kind not in SWEEP_KINDS:
        raise ConfigError(
            f"kind: expected one of {', '.join(SWEEP_KINDS)}, got {cfg.kind!r}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.txt")
    values = cfg.sweep_values or SWEEP_DEFAULTS[cfg.kind]
    tasks = [
        (cfg, value, out / sweep_member_config(cfg, value).name)
        for value in values
    ]
    rows = []
    failures = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_member_guarded, tasks))
        for value, row, error in outcomes:
            if error is not None:
                failures[value] = error
            else:
                rows.append(row)
    else:
        for task in tasks:
            value, row, error = _sweep_member_guarded(task)
            if error is not None:
                failures[value] = error
            else:
                rows.append(row)
    write_csv(
        out / "sweep.csv", ["value", "tail_accuracy", "kl_uniform", "frechet"], rows
    )
    if failures:
        write_json(out / "failures.json", failures)
    digest = config_hash(cfg)
    plots.sweep_summary(out / "sweep.svg", cfg.kind, rows, digest)
    return rows, failures


def _sweep_member_guarded(task):
    value = task[1]
    try:
        return value, _sweep_member(task), None
    except Exception as exc:  # recorded, sweep continues
        return value, None, f"{type(exc).__name__}: {exc}"


def run_report(run_dirs, out_dir):
    """Cross-run comparison: rank by final KL and overlay the curves."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for run_dir in run_dirs:
        run = Path(run_dir)
        summary_path = run / "summary.json"
        if not summary_path.is_file():
            raise FileNotFoundError(f"no summary.json under {run}")
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        evaluation = summary.get("evaluation")
        if evaluation is None:
            raise ValueError(f"{summary_path} has no evaluation block")
        curve = _read_metric_curve(run / "metrics.csv")
        entries.append(
            {
                "name": run.name,
                "lambda": summary.get("lambda"),
                "kl_uniform": evaluation["kl_uniform"],
                "frechet": evaluation["frechet"],
                "clf_accuracy": evaluation.get("clf_accuracy"),
                "config_hash": summary.get("config_hash", ""),
                "curve": curve,
            }
        )
    entries.sort(key=lambda e: e["kl_uniform"])
    write_csv(
        out / "report.csv",
        ["rank", "run", "lambda", "kl_uniform", "frechet", "clf_accuracy"],
        [
            [
                rank + 1,
                e["name"],
                e["lambda"],
                e["kl_uniform"],
                e["frechet"],
                float("nan") if e["clf_accuracy"] is None else e["clf_accuracy"],
            ]
            for rank, e in enumerate(entries)
        ],
    )
    digest = entries[0]["config_hash"] if entries else "none"
    plots.report_overlay(
        out / "report.svg",
        [(e["name"], e["curve"]) for e in entries],
        digest,
    )
    return entries


def _read_metric_curve(path):
    iters, kls = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            iters.append(int(row["iter"]))
            kls.append(float(row["kl_uniform"]))
    return iters, kls
