"""Command-line front end.

Subcommands::

    qsattack gen-data     --config cfg.json --out DIR [--seed N]
    qsattack train-target --config cfg.json --out DIR [--seed N]
    qsattack attack       --config cfg.json --out DIR [--seed N] [--method M] [--budget N]
    qsattack sweep        --config cfg.json --out DIR [--seed N] [--method M]
    qsattack report       --results results.csv [results.csv ...] [--out DIR]

Every run writes into a run-scoped subdirectory of the output directory
and leaves a ``manifest.json`` holding the flattened config, the derived
per-stage seeds and library versions; failed runs leave a manifest with
``status: failed`` and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attack import save_adversarial_batch
from .data import write_epochs
from .errors import ConfigError
from .metrics import run_sweep, write_results_csv
from .models import save_checkpoint
from .pipeline import (
    ExperimentConfig,
    _generate,
    _model_name,
    config_to_dict,
    dataset_name,
    load_config,
    run_attack_experiment,
    stage_seeds,
    write_run_trace,
)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    if getattr(args, "method", None) is not None:
        cfg = replace(cfg, method=args.method)
    if getattr(args, "budget", None) is not None:
        cfg = replace(cfg, budgets=(args.budget,))
    return cfg


def _write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig | None, status: str,
                    stage: str = "", extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "status": status,
        "stage": stage,
        "config": config_to_dict(cfg) if cfg is not None else None,
        "versions": {
            "qsattack": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def cmd_gen_data(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = stage_seeds(cfg.master_seed, 0)
    splits = {
        "train": (cfg.data.train_per_class, seeds["data-train"]),
        "test": (cfg.data.test_per_class, seeds["data-test"]),
        "pool": (cfg.data.pool_per_class, seeds["data-pool"]),
    }
    written = {}
    for name, (n_per_class, seed) in splits.items():
        if n_per_class == 0:
            continue
        dataset = _generate(cfg.data, n_per_class, seed, seeds["data-structure"])
        path = out / f"{name}.epo"
        write_epochs(path, dataset)
        written[name] = {"path": path.name, "n": len(dataset), "seed": seed}
        c, t = dataset.shape
        print(f"wrote {path}: n={len(dataset)} C={c} T={t} classes={cfg.data.classes}")
    _write_manifest(out, "gen-data", cfg, "ok", extra={"files": written})
    return 0


def cmd_train_target(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = stage_seeds(cfg.master_seed, 0)
    from .metrics import metric_report
    from .pipeline import _build_spec
    from .models import SoftmaxClassifier

    structure = seeds["data-structure"]
    train_set = _generate(cfg.data, cfg.data.train_per_class, seeds["data-train"], structure)
    test_set = _generate(cfg.data, cfg.data.test_per_class, seeds["data-test"], structure)
    target = SoftmaxClassifier(_build_spec(cfg.target, cfg.data, seeds["target-init"]))
    history = target.fit(train_set, replace(cfg.target.train, shuffle_seed=seeds["target-train"]))
    report = metric_report(target.predict_batch(test_set.epochs), test_set.labels, cfg.data.classes)
    ckpt = out / "target.ckpt"
    save_checkpoint(target, ckpt)
    print(
        f"trained {_model_name(cfg.target)} on {dataset_name(cfg.data)}: "
        f"epochs={history.n_epochs} test rca={report.rca:.4f} bca={report.bca:.4f}"
    )
    print(f"checkpoint: {ckpt}")
    _write_manifest(
        out, "train-target", cfg, "ok",
        extra={"seeds": seeds, "test_rca": report.rca, "test_bca": report.bca},
    )
    return 0


def cmd_attack(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    budget = cfg.budgets[0] if cfg.budgets else None
    rows, seeds_by_run = [], {}
    for run in range(cfg.runs):
        result = run_attack_experiment(cfg, run, budget=budget)
        run_dir = out / f"run-{run:03d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_run_trace(run_dir / "trace.csv", result)
        if result.examples is not None:
            source = "substitute" if result.method != "noise" else "noise-generator"
            save_adversarial_batch(run_dir / "adversarial", result.examples, cfg.attack, source)
        if result.substitute is not None:
            save_checkpoint(result.substitute, run_dir / "substitute.ckpt")
        if result.target is not None:
            save_checkpoint(result.target, run_dir / "target.ckpt")
        rows.append(result.results_row(cfg))
        seeds_by_run[run] = result.seeds
        print(
            f"run {run}: method={result.method} queries={result.total_queries} "
            f"baseline_rca={result.baseline.rca:.4f} noisy_rca={result.noisy.rca:.4f} "
            f"attacked_rca={result.attacked.rca:.4f}"
        )
    write_results_csv(out / "results.csv", rows)
    _write_manifest(out, "attack", cfg, "ok", extra={"seeds": seeds_by_run, "budget": budget})
    print(f"results: {out / 'results.csv'}")
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.budgets:
        raise ConfigError("sweep needs a non-empty budgets list")
    rows = []

    def closure(budget, run):
        result = run_attack_experiment(cfg, run, budget=budget)
        rows.append(result.results_row(cfg))
        return result.attacked

    curve = run_sweep(cfg.budgets, cfg.runs, closure)
    curve.to_csv(out / "sweep.csv")
    write_results_csv(out / "results.csv", rows)
    seeds_by_run = {run: stage_seeds(cfg.master_seed, run) for run in range(cfg.runs)}
    _write_manifest(out, "sweep", cfg, "ok", extra={"seeds": seeds_by_run})
    for point in curve.points:
        print(
            f"budget {point.budget}: attacked rca {point.rca_mean:.4f} (+-{point.rca_std:.4f}) "
            f"bca {point.bca_mean:.4f} over {point.runs} runs"
        )
    print(f"sweep curve: {out / 'sweep.csv'}")
    return 0


def cmd_report(result_paths, out_dir: str | None) -> int:
    rows = []
    for path in result_paths:
        with open(path, newline="", encoding="utf-8") as fh:
            rows.extend(csv.DictReader(fh))
    if not rows:
        print("no result rows found", file=sys.stderr)
        return 1
    groups = {}
    for row in rows:
        key = (row["dataset"], row["target_model"], row["substitute_model"], row["method"], row["budget"])
        groups.setdefault(key, []).append(row)
    header = (
        f"{'dataset':<20} {'target':<10} {'substitute':<10} {'method':<9} "
        f"{'budget':>7} {'runs':>4} {'rca':>7} {'bca':>7} {'base':>7} {'noisy':>7}"
    )
    print(header)
    report_rows = []
    for key in sorted(groups):
        bucket = groups[key]
        mean = lambda col: float(np.mean([float(r[col]) for r in bucket]))
        line = {
            "dataset": key[0], "target_model": key[1], "substitute_model": key[2],
            "method": key[3], "budget": key[4], "runs": len(bucket),
            "rca": mean("rca"), "bca": mean("bca"),
            "baseline_rca": mean("baseline_rca"), "noisy_rca": mean("noisy_rca"),
        }
        report_rows.append(line)
        print(
            f"{key[0]:<20} {key[1]:<10} {key[2]:<10} {key[3]:<9} {key[4]:>7} "
            f"{len(bucket):>4} {line['rca']:>7.4f} {line['bca']:>7.4f} "
            f"{line['baseline_rca']:>7.4f} {line['noisy_rca']:>7.4f}"
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(report_rows[0]))
            writer.writeheader()
            writer.writerows(report_rows)
        print(f"report: {out / 'report.csv'}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsattack",
        description="Query-synthesis black-box adversarial attack experiments",
    )
    parser.add_argument("--version", action="version", version=f"qsattack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, budget=False):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("gen-data", help="write seeded train/test/pool EPO1 files")
    common(p)
    p = sub.add_parser("train-target", help="train the target model and save a checkpoint")
    common(p)
    p = sub.add_parser("attack", help="full attack pipeline: balance, train substitute, craft, score")
    common(p)
    p.add_argument("--method", choices=("active", "jacobian", "noise"), default=None)
    p.add_argument("--budget", type=int, default=None, help="training-query budget override")
    p = sub.add_parser("sweep", help="attack across a budget grid")
    common(p)
    p.add_argument("--method", choices=("active", "jacobian", "noise"), default=None)
    p = sub.add_parser("report", help="aggregate results.csv files")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(args.results, args.out)
    cfg = None
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        handler = {
            "gen-data": cmd_gen_data,
            "train-target": cmd_train_target,
            "attack": cmd_attack,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(cfg)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        if cfg is not None:
            try:
                _write_manifest(
                    Path(cfg.out_dir), args.command, cfg, "failed", stage=type(exc).__name__
                )
            except OSError:
                pass
        return 1


if __name__ == "__main__":
    sys.exit(main())
