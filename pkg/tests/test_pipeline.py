import json

import numpy as np
import pytest

from qsattack.errors import ConfigError
from qsattack.models import TrainConfig
from qsattack.pipeline import (
    BalanceConfig,
    DataConfig,
    ExperimentConfig,
    NetConfig,
    config_to_dict,
    load_config,
    run_attack_experiment,
    stage_seeds,
    write_run_trace,
)
from qsattack.synthesis import JacobianConfig, SynthesisConfig
from qsattack.attack import AttackConfig

FAST_TRAIN = TrainConfig(max_epochs=5, patience=2, batch_size=16)
TARGET_TRAIN = TrainConfig(max_epochs=40, patience=5, batch_size=16)


def small_config(**overrides):
    base = dict(
        data=DataConfig(generator="blobs", classes=2, channels=2, samples=8,
                        train_per_class=30, test_per_class=20, pool_per_class=30,
                        separation=6.0, noise_sigma=1.0),
        target=NetConfig(architecture="mlp", hidden=(6,), train=TARGET_TRAIN),
        substitute=NetConfig(architecture="mlp", hidden=(6,), train=FAST_TRAIN),
        balance=BalanceConfig(per_class=10),
        synthesis=SynthesisConfig(n_iterations=1, per_iteration=20, bisection_steps=4,
                                  offset_norm=3.0),
        jacobian=JacobianConfig(step_size=0.5, n_iterations=1),
        attack=AttackConfig(epsilon=0.4, method="ufgsm"),
        method="active",
        master_seed=5,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_config_json_roundtrip(tmp_path):
    cfg = small_config()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config_to_dict(cfg)), encoding="utf-8")
    assert load_config(path) == cfg


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"mehtod": "active"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text(json.dumps({"data": {"generaotr": "blobs"}}), encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert "data" in str(info.value)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(method="hybrid")
    with pytest.raises(ConfigError):
        small_config(budgets=(300, 200))
    with pytest.raises(ConfigError):
        small_config(runs=0)


def test_stage_seeds_are_stable_and_distinct():
    seeds = stage_seeds(7, 0)
    assert seeds == stage_seeds(7, 0)
    assert len(set(seeds.values())) == len(seeds)
    assert stage_seeds(7, 1) != seeds


def test_noise_method_skips_substitute():
    result = run_attack_experiment(small_config(method="noise"), 0)
    assert result.trace is None
    assert result.substitute is None
    assert result.training_queries == 0
    assert result.balance_queries == 60  # whole pool labeled once
    assert result.attacked.rca == result.noisy.rca


def test_zero_epsilon_attack_equals_baseline():
    cfg = small_config(attack=AttackConfig(epsilon=0.0, method="ufgsm"))
    result = run_attack_experiment(cfg, 0)
    assert result.attacked.rca == result.baseline.rca
    assert result.attacked.bca == result.baseline.bca


def test_equal_budget_methods_match_query_totals():
    active = run_attack_experiment(small_config(method="active"), 0)
    jacobian = run_attack_experiment(small_config(method="jacobian"), 0)
    # |S0| = 20, active adds 1 x 20, jacobian doubles once: equal totals
    assert active.training_queries == jacobian.training_queries == 40
    assert active.total_queries == jacobian.total_queries
    assert active.seeds == jacobian.seeds  # paired by construction


def test_budget_plan_resolution_errors():
    cfg = small_config()
    with pytest.raises(ConfigError):
        run_attack_experiment(cfg, 0, budget=10)  # below |S0| = 20
    with pytest.raises(ConfigError):
        run_attack_experiment(cfg, 0, budget=30)  # extra 10 not a multiple of 20


def test_budget_equal_to_initial_set_pretrains_only():
    result = run_attack_experiment(small_config(), 0, budget=20)
    assert result.training_queries == 20
    assert len(result.trace.rows) == 1
    jacobian = run_attack_experiment(small_config(method="jacobian"), 0, budget=20)
    assert jacobian.training_queries == 20


def test_run_trace_csv(tmp_path):
    result = run_attack_experiment(small_config(), 0)
    path = tmp_path / "trace.csv"
    write_run_trace(path, result)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "stage,iteration,target_queries,substitute_queries,train_set_size"
    assert lines[1].startswith("balance,0,60,")
    assert lines[-1].split(",")[2] == str(result.total_queries)


def test_results_row_layout():
    cfg = small_config()
    result = run_attack_experiment(cfg, 0)
    row = result.results_row(cfg)
    assert row["dataset"] == "blobs-k2-2x8"
    assert row["target_model"] == "mlp-6"
    assert row["method"] == "active"
    assert float(row["rca"]) == result.attacked.rca
    assert row["seed"] == result.run_seed


def test_runs_are_reproducible():
    a = run_attack_experiment(small_config(), 3)
    b = run_attack_experiment(small_config(), 3)
    assert a.attacked.rca == b.attacked.rca
    assert a.total_queries == b.total_queries
    assert np.array_equal(a.substitute.parameters, b.substitute.parameters)
