"""Command-line entry point: config-driven experiment runs.

Subcommands: ``train``, ``baseline`` (same pipeline with the balance
penalty switched off), ``fixed-stats``, ``verify-theory``, ``sweep``,
``report``.  Each run writes CSV tables and SVG figures into a
deterministic directory under the output root (``--out``, else the
config's ``out``, else ``$BALANCE_LAB_OUT``, else ``./runs``).

Exit codes: 0 success, 1 invalid configuration or input, 2 verification
failure or diverged run.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import experiments
from .config import ConfigError, ExperimentConfig, load_config, with_overrides
from .gan_trainer import TrainingDiverged

SWEEP_ALIASES = {
    "classifier-quality": "classifier-sweep",
    "beta": "beta-ablation",
    "cycle-length": "cycle-sweep",
}


def _output_root(args, cfg=None):
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    env = os.environ.get("BALANCE_LAB_OUT")
    if env:
        return Path(env)
    return Path("runs")


def _load(args, kinds):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    if kinds and cfg.kind not in kinds:
        raise ConfigError(
            f"kind: config has {cfg.kind!r}; this command expects "
            f"one of {', '.join(kinds)}"
        )
    return cfg


def _run_dir(args, cfg):
    return _output_root(args, cfg) / experiments.run_name(cfg)


def cmd_train(args):
    cfg = _load(args, ("train", "baseline"))
    out = _run_dir(args, cfg)
    summary = experiments.run_train(cfg, out)
    evaluation = summary["evaluation"]
    print(f"wrote {out}")
    print(
        f"kl_uniform={evaluation['kl_uniform']:.4f} "
        f"frechet={evaluation['frechet']:.4f}"
    )
    return 0


def cmd_baseline(args):
    cfg = _load(args, ("train", "baseline"))
    cfg = with_overrides(cfg, kind="baseline", lam=0.0)
    out = _run_dir(args, cfg)
    summary = experiments.run_train(cfg, out)
    evaluation = summary["evaluation"]
    print(f"wrote {out}")
    print(
        f"kl_uniform={evaluation['kl_uniform']:.4f} "
        f"frechet={evaluation['frechet']:.4f}"
    )
    return 0


def cmd_fixed_stats(args):
    cfg = _load(args, ("fixed-stats",))
    out = _run_dir(args, cfg)
    summary = experiments.run_fixed_stats(cfg, out)
    class0 = summary["class0"]
    print(f"wrote {out}")
    print(
        f"class0 fraction: start={class0['start']:.4f} "
        f"end={class0['end']:.4f} delta={class0['delta']:+.4f}"
    )
    return 0


def cmd_verify_theory(args):
    if args.config:
        cfg = _load(args, ("theory",))
    else:
        cfg = ExperimentConfig(kind="theory", seed=args.seed or 0)
    overrides = {}
    for attr in ("trials", "k_min", "k_max", "probes"):
        value = getattr(args, attr)
        if value is not None:
            overrides[attr] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = with_overrides(cfg, **overrides)
    out = _run_dir(args, cfg)
    summary = experiments.run_theory(
        cfg,
        out,
        bound_tol=args.bound_tol,
        value_tol=args.value_tol,
        oracle_tol=args.oracle_tol,
    )
    print(f"wrote {out}")
    print(
        f"trials={summary.n_trials} "
        f"max_bound_violation={summary.max_bound_violation:.3e} "
        f"max_prop2_residual={summary.max_prop2_residual:.3e} "
        f"max_oracle_linf={summary.max_oracle_linf:.3e} "
        f"uniform_tightness_gap={summary.uniform_tightness_gap:.3e}"
    )
    if not summary.all_ok:
        for report in summary.failures()[:10]:
            print(
                f"FAIL trial={report.trial} K={report.k} "
                f"n={[round(float(v), 6) for v in report.n_values]}",
                file=sys.stderr,
            )
        print(f"{len(summary.failures())} trial(s) failed", file=sys.stderr)
        return 2
    print("all checks passed")
    return 0


def cmd_sweep(args):
    cfg = _load(args, ())
    if args.kind is not None:
        cfg = with_overrides(cfg, kind=SWEEP_ALIASES[args.kind])
    if cfg.kind not in experiments.SWEEP_KINDS:
        raise ConfigError(
            f"kind: config has {cfg.kind!r}; sweep expects one of "
            f"{', '.join(experiments.SWEEP_KINDS)} (or pass --kind)"
        )
    out = _run_dir(args, cfg)
    rows, failures = experiments.run_sweep(cfg, out, jobs=args.jobs)
    print(f"wrote {out}")
    for row in rows:
        print(
            f"value={row[0]} tail_accuracy={row[1]:.3f} "
            f"kl_uniform={row[2]:.4f} frechet={row[3]:.4f}"
        )
    for value, error in failures.items():
        print(f"value={value} failed: {error}", file=sys.stderr)
    return 0


def cmd_report(args):
    out = Path(args.out) if args.out else _output_root(args) / "report"
    entries = experiments.run_report(args.run_dirs, out)
    print(f"wrote {out}")
    for rank, entry in enumerate(entries, start=1):
        print(
            f"{rank}. {entry['name']} kl_uniform={entry['kl_uniform']:.4f} "
            f"frechet={entry['frechet']:.4f}"
        )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="balance-lab",
        description="Class-balancing GAN regularizer experiments on "
        "long-tailed Gaussian mixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="output root directory")

    p = sub.add_parser("train", help="regularized training run")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("baseline", help="identical run with lambda=0")
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("fixed-stats", help="frozen penalty-weight run")
    common(p)
    p.set_defaults(func=cmd_fixed_stats)

    p = sub.add_parser("verify-theory", help="randomized optimality checks")
    common(p, config_required=False)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--k-min", dest="k_min", type=int, default=None)
    p.add_argument("--k-max", dest="k_max", type=int, default=None)
    p.add_argument("--probes", type=int, default=None,
                   help="random simplex points per domination check")
    p.add_argument("--bound-tol", type=float, default=None)
    p.add_argument("--value-tol", type=float, default=None)
    p.add_argument("--oracle-tol", type=float, default=None)
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("sweep", help="one training run per sweep value")
    common(p)
    p.add_argument("--kind", choices=sorted(SWEEP_ALIASES), default=None,
                   help="sweep kind (overrides the config)")
    p.add_argument("--jobs", type=int, default=1,
                   help="concurrent member runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="compare finished run directories")
    p.add_argument("run_dirs", nargs="+", help="run directories to compare")
    p.add_argument("--out", default=None, help="report output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
