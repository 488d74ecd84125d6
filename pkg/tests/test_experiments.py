import csv
import json

import numpy as np
import pytest

from balance_lab import experiments
from balance_lab.config import ConfigError, ExperimentConfig, with_overrides
from balance_lab.experiments import (
    build_pipeline,
    run_fixed_stats,
    run_name,
    run_report,
    run_sweep,
    run_theory,
    run_train,
    sweep_member_config,
    trainer_config,
    write_csv,
    write_json,
)

from conftest import TINY

# tiny classifiers are deliberately under-trained; the separation warning
# itself is covered by the trainer tests
pytestmark = pytest.mark.filterwarnings("ignore:classifier cannot separate")


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_run_name():
    assert run_name(ExperimentConfig(kind="train")) == "train-seed0"
    assert (
        run_name(ExperimentConfig(kind="baseline", name="ctrl", seed=3))
        == "baseline-ctrl-seed3"
    )


def test_trainer_config_slice(tiny_cfg):
    cfg = tiny_cfg(lam=2.0, alpha=0.25, beta=None, seed=5)
    tc = trainer_config(cfg)
    assert tc.n_classes == 3
    assert tc.batch_size == 16
    assert tc.lam == 2.0
    assert tc.alpha == 0.25
    assert tc.beta is None
    assert tc.seed == 5
    assert tc.eval_samples == cfg.cycle_eval_samples
    assert trainer_config(cfg, lam=0.0).lam == 0.0


def test_build_pipeline_shapes(tiny_cfg):
    cfg = tiny_cfg(annotator_epochs=40)
    pipe = build_pipeline(cfg)
    assert pipe.train_data.n_classes == 3
    assert pipe.test_data.samples.shape == (60, 2)  # 20 per class, balanced
    counts = np.bincount(pipe.test_data.labels, minlength=3)
    assert counts.tolist() == [20, 20, 20]
    assert pipe.classifier.accuracy is not None
    assert not pipe.annotator.flagged


def test_run_train_artifacts(tiny_cfg, tmp_path):
    summary = run_train(tiny_cfg(), tmp_path)
    for name in (
        "config.txt",
        "metrics.csv",
        "stats.csv",
        "fractions.csv",
        "checkpoint.npz",
        "manifest.json",
        "summary.json",
        "fractions.svg",
        "curves.svg",
    ):
        assert (tmp_path / name).is_file(), name
    rows = read_rows(tmp_path / "metrics.csv")
    assert rows[0] == [
        "cycle", "iter", "loss_d", "loss_g", "loss_reg", "kl_uniform",
        "frechet", "frac_0", "frac_1", "frac_2",
    ]
    assert len(rows) - 1 == 2  # 40 iterations / cycle_len 20
    assert read_rows(tmp_path / "stats.csv")[0] == [
        "cycle", "iter", "N_0", "N_1", "N_2",
    ]
    assert summary["lambda"] == 5.0
    assert summary["evaluation"]["kl_uniform"] >= 0.0
    assert np.isfinite(summary["evaluation"]["frechet"])
    assert summary["last_cycle"]["iter"] == 40
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk == summary


def test_baseline_kind_forces_lam_zero(tiny_cfg, tmp_path):
    summary = run_train(tiny_cfg(kind="baseline", lam=5.0), tmp_path)
    assert summary["lambda"] == 0.0
    assert "lambda=0.0" in (tmp_path / "config.txt").read_text()


def test_run_train_lam_override(tiny_cfg, tmp_path):
    summary = run_train(tiny_cfg(), tmp_path, lam=0.5)
    assert summary["lambda"] == 0.5


def test_run_fixed_stats_reports_class0(tiny_cfg, tmp_path):
    cfg = tiny_cfg(kind="fixed-stats", fixed_n_hat=(100.0, 1.0, 1.0))
    summary = run_fixed_stats(cfg, tmp_path)
    c0 = summary["class0"]
    assert c0["delta"] == pytest.approx(c0["end"] - c0["start"])
    assert summary["fixed_n_hat"] == [100.0, 1.0, 1.0]
    rows = read_rows(tmp_path / "fractions.csv")
    assert rows[0] == ["cycle", "iter", "frac_0", "frac_1", "frac_2"]
    assert len(rows) - 1 == 3  # initial snapshot plus one per cycle
    assert (tmp_path / "fractions.svg").is_file()


def test_run_theory_writes_per_trial_table(tmp_path):
    cfg = ExperimentConfig(kind="theory", trials=5, k_min=3, k_max=6, probes=30)
    summary = run_theory(cfg, tmp_path)
    assert summary.all_ok
    rows = read_rows(tmp_path / "theory.csv")
    assert rows[0] == [
        "trial", "K", "max_bound_violation", "prop2_residual", "oracle_linf",
    ]
    assert len(rows) - 1 == 5
    payload = json.loads((tmp_path / "summary.json").read_text())
    assert payload["all_ok"] is True
    assert payload["failures"] == []


def test_sweep_member_config():
    base = ExperimentConfig(kind="classifier-sweep")
    member = sweep_member_config(base, "10")
    assert member.kind == "train"
    assert member.name == "clf-rho-10"
    assert member.clf_rho == 10.0
    beta = sweep_member_config(ExperimentConfig(kind="beta-ablation"), "alpha")
    assert beta.beta is None
    cyc = sweep_member_config(ExperimentConfig(kind="cycle-sweep"), "50")
    assert cyc.cycle_len == 50
    with pytest.raises(ConfigError, match="not a sweep kind"):
        sweep_member_config(ExperimentConfig(kind="train"), "1")


def test_run_sweep_members_and_table(tiny_cfg, tmp_path):
    cfg = tiny_cfg(kind="cycle-sweep", sweep_values=("10", "20"))
    rows, failures = run_sweep(cfg, tmp_path)
    assert failures == {}
    assert [r[0] for r in rows] == ["10", "20"]
    for name in ("cycle-10", "cycle-20"):
        assert (tmp_path / name / "summary.json").is_file()
    table = read_rows(tmp_path / "sweep.csv")
    assert table[0] == ["value", "tail_accuracy", "kl_uniform", "frechet"]
    assert len(table) - 1 == 2
    assert (tmp_path / "sweep.svg").is_file()
    assert not (tmp_path / "failures.json").exists()


def test_run_sweep_records_failures_and_continues(tiny_cfg, tmp_path, monkeypatch):
    real_run_train = experiments.run_train

    def flaky(member, out_dir, lam=None):
        if member.name == "cycle-10":
            raise RuntimeError("boom")
        return real_run_train(member, out_dir, lam=lam)

    monkeypatch.setattr(experiments, "run_train", flaky)
    cfg = tiny_cfg(kind="cycle-sweep", sweep_values=("10", "20"))
    rows, failures = run_sweep(cfg, tmp_path)
    assert failures == {"10": "RuntimeError: boom"}
    assert [r[0] for r in rows] == ["20"]
    recorded = json.loads((tmp_path / "failures.json").read_text())
    assert recorded == failures
    assert len(read_rows(tmp_path / "sweep.csv")) - 1 == 1


def test_run_sweep_rejects_non_sweep_kind(tiny_cfg, tmp_path):
    with pytest.raises(ConfigError, match="kind"):
        run_sweep(tiny_cfg(), tmp_path)


def fake_run_dir(root, name, kl, frechet=1.0, lam=5.0):
    run = root / name
    run.mkdir()
    write_json(
        run / "summary.json",
        {
            "lambda": lam,
            "config_hash": "feedc0de",
            "evaluation": {"kl_uniform": kl, "frechet": frechet,
                           "clf_accuracy": None},
        },
    )
    write_csv(
        run / "metrics.csv",
        ["cycle", "iter", "kl_uniform"],
        [[1, 10, kl + 0.1], [2, 20, kl]],
    )
    return run


def test_run_report_ranks_by_kl(tmp_path):
    a = fake_run_dir(tmp_path, "reg", kl=0.05)
    b = fake_run_dir(tmp_path, "base", kl=0.40, lam=0.0)
    out = tmp_path / "report"
    entries = run_report([b, a], out)
    assert [e["name"] for e in entries] == ["reg", "base"]
    table = read_rows(out / "report.csv")
    assert table[0] == ["rank", "run", "lambda", "kl_uniform", "frechet",
                        "clf_accuracy"]
    assert table[1][:4] == ["1", "reg", "5.0", "0.05"]
    assert table[2][:4] == ["2", "base", "0.0", "0.4"]
    assert (out / "report.svg").is_file()


def test_run_report_requires_complete_runs(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(FileNotFoundError, match="summary.json"):
        run_report([empty], tmp_path / "r1")
    bare = tmp_path / "bare"
    bare.mkdir()
    write_json(bare / "summary.json", {"lambda": 1.0})
    with pytest.raises(ValueError, match="evaluation"):
        run_report([bare], tmp_path / "r2")


def test_write_csv_bytes_are_stable(tmp_path):
    header = ["a", "b"]
    rows = [[np.float64(0.1), 1], [float("nan"), "x"]]
    p1, p2 = tmp_path / "one.csv", tmp_path / "two.csv"
    write_csv(p1, header, rows)
    write_csv(p2, header, rows)
    data = p1.read_bytes()
    assert data == p2.read_bytes()
    assert data == b"a,b\n0.1,1\nnan,x\n"


def test_write_json_sorted_and_newline(tmp_path):
    path = tmp_path / "payload.json"
    write_json(path, {"b": 1, "a": [1, 2]})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
    assert json.loads(text) == {"b": 1, "a": [1, 2]}
