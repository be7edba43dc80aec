import csv
import json

import pytest

from qsattack.cli import main
from qsattack.data import read_epochs
from qsattack.models import load_checkpoint


def write_config(tmp_path, **overrides):
    cfg = {
        "data": {
            "generator": "blobs", "classes": 2, "channels": 2, "samples": 8,
            "train_per_class": 30, "test_per_class": 20, "pool_per_class": 30,
            "separation": 6.0, "noise_sigma": 1.0,
        },
        "target": {"architecture": "mlp", "hidden": [6],
                   "train": {"max_epochs": 40, "patience": 5, "batch_size": 16}},
        "substitute": {"architecture": "mlp", "hidden": [6],
                       "train": {"max_epochs": 5, "patience": 2, "batch_size": 16}},
        "balance": {"per_class": 10},
        "synthesis": {"n_iterations": 1, "per_iteration": 20, "bisection_steps": 4,
                      "offset_norm": 3.0},
        "jacobian": {"step_size": 0.5, "n_iterations": 1},
        "attack": {"epsilon": 0.4, "method": "ufgsm"},
        "method": "active",
        "runs": 1,
        "master_seed": 5,
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_gen_data_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("train.epo", "test.epo", "pool.epo"):
        bytes_a = (tmp_path / "a" / name).read_bytes()
        bytes_b = (tmp_path / "b" / name).read_bytes()
        assert bytes_a == bytes_b
        dataset = read_epochs(tmp_path / "a" / name)
        assert dataset.shape == (2, 8)
    out = capsys.readouterr().out
    assert "train.epo" in out and "classes=2" in out
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["status"] == "ok"


def test_train_target_writes_checkpoint(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "target"
    assert main(["train-target", "--config", str(cfg), "--out", str(out)]) == 0
    model = load_checkpoint(out / "target.ckpt")
    assert model.spec.classes == 2


def test_attack_noise_only_trace(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "noise"
    assert main(["attack", "--config", str(cfg), "--out", str(out), "--method", "noise"]) == 0
    rows = read_rows(out / "run-000" / "trace.csv")
    assert len(rows) == 1
    assert rows[0]["stage"] == "balance"
    assert rows[0]["target_queries"] == "60"  # the whole pool, labeled once
    results = read_rows(out / "results.csv")
    assert results[0]["method"] == "noise"
    assert results[0]["rca"] == results[0]["noisy_rca"]


def test_attack_equal_budgets_between_methods(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["attack", "--config", str(cfg), "--out", str(tmp_path / "act"),
                 "--method", "active"]) == 0
    assert main(["attack", "--config", str(cfg), "--out", str(tmp_path / "jac"),
                 "--method", "jacobian"]) == 0
    trace_a = read_rows(tmp_path / "act" / "run-000" / "trace.csv")
    trace_j = read_rows(tmp_path / "jac" / "run-000" / "trace.csv")
    assert trace_a[-1]["target_queries"] == trace_j[-1]["target_queries"]
    # paired: same run seed recorded for both methods
    res_a = read_rows(tmp_path / "act" / "results.csv")
    res_j = read_rows(tmp_path / "jac" / "results.csv")
    assert res_a[0]["seed"] == res_j[0]["seed"]
    adv = tmp_path / "act" / "run-000" / "adversarial"
    assert (adv / "originals.epo").exists() and (adv / "perturbed.epo").exists()
    manifest = json.loads((adv / "manifest.json").read_text())
    assert manifest["gradient_source"] == "substitute"


def test_attack_bad_config_fails_with_manifest(tmp_path, capsys):
    cfg = write_config(tmp_path, balance={"per_class": 100})  # pool holds only 60 epochs
    out = tmp_path / "fail"
    code = main(["attack", "--config", str(cfg), "--out", str(out)])
    assert code == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert capsys.readouterr().err


def test_unknown_config_key_fails(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"attacc": {}}), encoding="utf-8")
    assert main(["attack", "--config", str(path)]) == 1


def test_sweep_csv_and_determinism(tmp_path):
    cfg = write_config(tmp_path, runs=2, budgets=[20, 40])
    out_a = tmp_path / "s1"
    out_b = tmp_path / "s2"
    assert main(["sweep", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(out_b)]) == 0
    sweep_a = (out_a / "sweep.csv").read_text()
    assert sweep_a == (out_b / "sweep.csv").read_text()
    rows = read_rows(out_a / "sweep.csv")
    assert [r["budget"] for r in rows] == ["20", "40"]
    assert all(r["runs"] == "2" for r in rows)
    results = read_rows(out_a / "results.csv")
    assert len(results) == 4


def test_report_aggregates(tmp_path, capsys):
    cfg = write_config(tmp_path, runs=2)
    out = tmp_path / "r"
    assert main(["attack", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["report", "--results", str(out / "results.csv"),
                 "--out", str(tmp_path / "rep")]) == 0
    printed = capsys.readouterr().out
    assert "active" in printed
    report_rows = read_rows(tmp_path / "rep" / "report.csv")
    assert report_rows[0]["runs"] == "2"


def test_version_flag():
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0


def test_gen_data_without_pool_writes_two_files(tmp_path):
    cfg = write_config(tmp_path)
    raw = json.loads(cfg.read_text())
    raw["data"]["pool_per_class"] = 0
    cfg.write_text(json.dumps(raw))
    out = tmp_path / "two"
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.glob("*.epo"))
    assert files == ["test.epo", "train.epo"]
