"""Config-driven experiment orchestration.

One run reproduces the protocol shape end to end: generate seeded
train/test/pool splits, train the target, wrap it in a counted label-only
oracle, balance the initial substitute set by predicted label, train the
substitute (active synthesis or the gradient-step baseline), craft
perturbations from the substitute, and score the target on them.

Budget accounting: the *training budget* of a run is the number of target
queries spent on substitute training (initial set plus augmentation).
Balancing the pool costs ``len(pool)`` additional queries, which are
identical across methods and reported separately in the trace, and any
hard oracle budget is set to ``len(pool) + training budget``.  Evaluating
the attack (labeling clean or perturbed test epochs) bypasses the oracle:
that is the experimenter measuring the outcome, not the attacker querying.

Per-stage seeds are derived from ``(master_seed, run_index, stage_name)``
via :func:`qsattack.seeding.derive_seed`; stage names are fixed strings
("data-train", "target-init", "balance", ...), so every run is
reproducible in isolation and stays paired across methods and budgets.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .attack import AttackConfig, craft_batch, perturbed_batch
from .data import LabeledSet, balance_by_predicted_label, gen_blobs, gen_synthetic_epochs
from .errors import ConfigError
from .metrics import MetricReport, boundary_agreement, metric_report
from .models import ModelSpec, SoftmaxClassifier, TrainConfig
from .oracle import TargetOracle
from .seeding import derive_seed
from .synthesis import (
    AugmentationTrace,
    JacobianConfig,
    SynthesisConfig,
    TraceRow,
    train_substitute_active,
    train_substitute_jacobian,
)

_METHODS = ("active", "jacobian", "noise")
_GENERATORS = ("blobs", "erp")


@dataclass(frozen=True)
class DataConfig:
    generator: str = "blobs"
    classes: int = 2
    channels: int = 4
    samples: int = 16
    train_per_class: int = 200
    test_per_class: int = 100
    pool_per_class: int = 300
    separation: float = 4.0       # blobs only
    noise_sigma: float = 1.0      # blobs only
    noise_amplitude: float = 0.5  # erp only

    def __post_init__(self):
        if self.generator not in _GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}")


@dataclass(frozen=True)
class NetConfig:
    architecture: str = "mlp"
    hidden: tuple = (16,)
    activation: str = "relu"
    kernel_width: int = 9
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class BalanceConfig:
    per_class: int = 100
    strict: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    target: NetConfig = field(default_factory=NetConfig)
    substitute: NetConfig = field(default_factory=NetConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    jacobian: JacobianConfig = field(default_factory=JacobianConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    method: str = "active"
    runs: int = 1
    budgets: tuple = ()
    master_seed: int = 0
    out_dir: str = "runs/out"

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        budgets = tuple(int(b) for b in self.budgets)
        object.__setattr__(self, "budgets", budgets)
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ConfigError("budgets must be strictly increasing")


_NESTED = {
    "data": DataConfig,
    "target": NetConfig,
    "substitute": NetConfig,
    "balance": BalanceConfig,
    "synthesis": SynthesisConfig,
    "jacobian": JacobianConfig,
    "attack": AttackConfig,
    "train": TrainConfig,
}
_TUPLE_FIELDS = {"hidden", "budgets"}


def _config_from_dict(cls, raw: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _config_from_dict(_NESTED[key], value, where)
        elif key in _TUPLE_FIELDS:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in {path or 'config'}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Parse a JSON experiment config; unknown keys are hard errors."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return _config_from_dict(ExperimentConfig, raw, "")


def config_to_dict(cfg) -> dict:
    """Flatten any config dataclass into plain JSON-serializable types."""
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = config_to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def stage_seeds(master_seed: int, run_index: int) -> dict:
    """All derived seeds for one run, keyed by stage name."""
    stages = (
        "data-structure", "data-train", "data-test", "data-pool",
        "target-init", "target-train",
        "balance", "substitute-init", "substitute-train", "synthesis", "noise", "run",
    )
    return {s: derive_seed(master_seed, run_index, s) for s in stages}


def _generate(data_cfg: DataConfig, n_per_class: int, seed: int, structure_seed: int | None = None) -> LabeledSet:
    if data_cfg.generator == "blobs":
        return gen_blobs(
            n_per_class,
            data_cfg.classes,
            data_cfg.channels,
            data_cfg.samples,
            separation=data_cfg.separation,
            noise_sigma=data_cfg.noise_sigma,
            seed=seed,
            structure_seed=structure_seed,
        )
    return gen_synthetic_epochs(
        n_per_class,
        data_cfg.classes,
        data_cfg.channels,
        data_cfg.samples,
        seed=seed,
        noise_amplitude=data_cfg.noise_amplitude,
        structure_seed=structure_seed,
    )


def _model_name(net: NetConfig) -> str:
    sizes = "x".join(str(h) for h in net.hidden)
    return net.architecture + (f"-{sizes}" if sizes else "")


def dataset_name(data_cfg: DataConfig) -> str:
    return f"{data_cfg.generator}-k{data_cfg.classes}-{data_cfg.channels}x{data_cfg.samples}"


def _build_spec(net: NetConfig, data_cfg: DataConfig, seed: int) -> ModelSpec:
    return ModelSpec(
        architecture=net.architecture,
        channels=data_cfg.channels,
        samples=data_cfg.samples,
        classes=data_cfg.classes,
        hidden=net.hidden,
        activation=net.activation,
        kernel_width=net.kernel_width,
        seed=seed,
    )


def _pretrain_only(oracle, initial_epochs, spec, train_cfg):
    """Budget exactly covers the initial set: label it, train, no augmentation."""
    start = oracle.query_count
    labels = oracle.query_labels(initial_epochs)
    data = LabeledSet(initial_epochs, labels)
    model = SoftmaxClassifier(spec)
    model.fit(data, train_cfg)
    trace = AugmentationTrace()
    trace.append(TraceRow(0, oracle.query_count - start, 0, len(data)))
    return model, trace


@dataclass
class RunResult:
    run_index: int
    run_seed: int
    method: str
    budget: int | None
    baseline: MetricReport
    noisy: MetricReport
    attacked: MetricReport
    agreement: float | None
    trace: AugmentationTrace | None
    balance_queries: int
    training_queries: int
    total_queries: int
    seeds: dict
    examples: list | None = None
    substitute: SoftmaxClassifier | None = None
    target: SoftmaxClassifier | None = None

    def results_row(self, cfg: ExperimentConfig) -> dict:
        return {
            "dataset": dataset_name(cfg.data),
            "target_model": _model_name(cfg.target),
            "substitute_model": _model_name(cfg.substitute) if self.method != "noise" else "",
            "method": self.method,
            "budget": self.budget if self.budget is not None else self.training_queries,
            "seed": self.run_seed,
            "rca": repr(self.attacked.rca),
            "bca": repr(self.attacked.bca),
            "baseline_rca": repr(self.baseline.rca),
            "baseline_bca": repr(self.baseline.bca),
            "noisy_rca": repr(self.noisy.rca),
            "noisy_bca": repr(self.noisy.bca),
        }


def _resolve_active_plan(cfg: ExperimentConfig, s0_size: int, budget: int | None, seed: int) -> SynthesisConfig | None:
    syn = replace(cfg.synthesis, seed=seed)
    if budget is None:
        return syn
    extra = budget - s0_size
    if extra < 0:
        raise ConfigError(f"budget {budget} is below the initial set size {s0_size}")
    if extra == 0:
        return None  # pretrain only
    if extra % syn.per_iteration:
        raise ConfigError(
            f"budget {budget} minus initial {s0_size} must be a multiple of "
            f"per_iteration={syn.per_iteration}"
        )
    return replace(syn, n_iterations=extra // syn.per_iteration)


def _resolve_jacobian_plan(cfg: ExperimentConfig, s0_size: int, budget: int | None, seed: int) -> JacobianConfig:
    jac = replace(cfg.jacobian, seed=seed)
    if budget is None:
        return jac
    extra = budget - s0_size
    if extra < 0:
        raise ConfigError(f"budget {budget} is below the initial set size {s0_size}")
    # enough doubling rounds to consume the cap, which trims the last round
    rounds = 1
    while s0_size * (2**rounds - 1) < extra:
        rounds += 1
    return replace(jac, n_iterations=rounds, query_cap=extra)


def run_attack_experiment(cfg: ExperimentConfig, run_index: int = 0, budget: int | None = None) -> RunResult:
    """Execute one full attack run; see the module docstring for accounting."""
    seeds = stage_seeds(cfg.master_seed, run_index)
    structure = seeds["data-structure"]
    train_set = _generate(cfg.data, cfg.data.train_per_class, seeds["data-train"], structure)
    test_set = _generate(cfg.data, cfg.data.test_per_class, seeds["data-test"], structure)
    pool_set = _generate(cfg.data, cfg.data.pool_per_class, seeds["data-pool"], structure)

    target = SoftmaxClassifier(_build_spec(cfg.target, cfg.data, seeds["target-init"]))
    target.fit(train_set, replace(cfg.target.train, shuffle_seed=seeds["target-train"]))

    clean_preds = target.predict_batch(test_set.epochs)
    baseline = metric_report(clean_preds, test_set.labels, cfg.data.classes)

    noise_cfg = AttackConfig(epsilon=cfg.attack.epsilon, method="noise", noise_seed=seeds["noise"])
    noisy_examples = craft_batch(None, test_set.epochs, noise_cfg)
    noisy_preds = target.predict_batch(perturbed_batch(noisy_examples))
    noisy = metric_report(noisy_preds, test_set.labels, cfg.data.classes)

    s0_size = cfg.balance.per_class * cfg.data.classes
    pool_size = len(pool_set)
    oracle_budget = None if budget is None else pool_size + budget
    oracle = TargetOracle(target, budget=oracle_budget)
    s0 = balance_by_predicted_label(
        oracle, pool_set.epochs, cfg.balance.per_class, seeds["balance"], cfg.balance.strict
    )
    balance_queries = oracle.query_count

    if cfg.method == "noise":
        return RunResult(
            run_index=run_index,
            run_seed=seeds["run"],
            method="noise",
            budget=budget,
            baseline=baseline,
            noisy=noisy,
            attacked=noisy,
            agreement=None,
            trace=None,
            balance_queries=balance_queries,
            training_queries=0,
            total_queries=oracle.query_count,
            seeds=seeds,
            examples=noisy_examples,
            target=target,
        )

    sub_spec = _build_spec(cfg.substitute, cfg.data, seeds["substitute-init"])
    sub_train = replace(cfg.substitute.train, shuffle_seed=seeds["substitute-train"])
    before_training = oracle.query_count
    if cfg.method == "active":
        plan = _resolve_active_plan(cfg, s0_size, budget, seeds["synthesis"])
        if plan is None:
            substitute, trace = _pretrain_only(oracle, s0, sub_spec, sub_train)
        else:
            substitute, trace = train_substitute_active(oracle, s0, sub_spec, sub_train, plan)
    else:
        plan = _resolve_jacobian_plan(cfg, s0_size, budget, seeds["synthesis"])
        substitute, trace = train_substitute_jacobian(oracle, s0, sub_spec, sub_train, plan)
    training_queries = oracle.query_count - before_training

    atk = cfg.attack
    examples = craft_batch(substitute, test_set.epochs, atk, true_labels=test_set.labels)
    attacked_preds = target.predict_batch(perturbed_batch(examples))
    attacked = metric_report(attacked_preds, test_set.labels, cfg.data.classes)
    agreement = boundary_agreement(substitute, clean_preds, test_set.epochs)

    return RunResult(
        run_index=run_index,
        run_seed=seeds["run"],
        method=cfg.method,
        budget=budget,
        baseline=baseline,
        noisy=noisy,
        attacked=attacked,
        agreement=agreement,
        trace=trace,
        balance_queries=balance_queries,
        training_queries=training_queries,
        total_queries=oracle.query_count,
        seeds=seeds,
        examples=examples,
        substitute=substitute,
        target=target,
    )


def write_run_trace(path, result: RunResult) -> None:
    """Stage-labeled query ledger for one run.

    Columns extend the augmentation-trace CSV with a leading ``stage``
    column; ``target_queries`` is the absolute oracle counter so totals
    are directly comparable across methods.
    """
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["stage", "iteration", "target_queries", "substitute_queries", "train_set_size"]
        )
        writer.writerow(["balance", 0, result.balance_queries, 0, 0])
        if result.trace is not None:
            for row in result.trace.rows:
                writer.writerow(
                    [
                        "augment",
                        row.iteration,
                        result.balance_queries + row.target_queries,
                        row.substitute_queries,
                        row.train_set_size,
                    ]
                )
