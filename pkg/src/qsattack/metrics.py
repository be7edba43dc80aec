"""Accuracy metrics, boundary agreement, sign test, and budget sweeps.

Raw accuracy is the plain fraction correct; balanced accuracy averages
per-class recalls over the classes that actually occur in the label
vector (classes with zero support are excluded from the mean, which
avoids 0/0 and is recorded on the report).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SweepAborted


@dataclass
class MetricReport:
    """Accuracy summary recomputable from the confusion matrix alone."""

    rca: float
    bca: float
    per_class_recall: np.ndarray  # NaN for classes with zero support
    confusion: np.ndarray         # (k, k) counts, rows = true, cols = predicted


def confusion_matrix(preds, labels, n_classes: int | None = None) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("preds and labels must be equal-length 1-D arrays")
    if len(preds) == 0:
        raise ValueError("cannot compute metrics on empty inputs")
    if preds.min() < 0 or labels.min() < 0:
        raise ValueError("class indices must be >= 0")
    k = int(max(preds.max(), labels.max())) + 1 if n_classes is None else n_classes
    matrix = np.zeros((k, k), dtype=np.int64)
    np.add.at(matrix, (labels, preds), 1)
    return matrix


def metric_report(preds, labels, n_classes: int | None = None) -> MetricReport:
    matrix = confusion_matrix(preds, labels, n_classes)
    support = matrix.sum(axis=1)
    total = int(matrix.sum())
    recall = np.full(len(matrix), np.nan)
    present = support > 0
    recall[present] = np.diag(matrix)[present] / support[present]
    return MetricReport(
        rca=float(np.trace(matrix) / total),
        bca=float(np.nanmean(recall[present])),
        per_class_recall=recall,
        confusion=matrix,
    )


def rca(preds, labels) -> float:
    """Raw classification accuracy: unweighted fraction correct."""
    return metric_report(preds, labels).rca


def bca(preds, labels) -> float:
    """Balanced classification accuracy: mean per-class recall."""
    return metric_report(preds, labels).bca


def boundary_agreement(model, target_labels, epochs) -> float:
    """Fraction of epochs where the model reproduces the target's label.

    ``target_labels`` should be obtained once, outside any attack budget.
    """
    preds = model.predict_batch(epochs)
    return rca(preds, target_labels)


def paired_sign_test(a, b) -> float:
    """One-sided exact sign test that paired values of ``a`` run below ``b``.

    Ties are dropped; returns the probability under fair coin flips of at
    least the observed number of ``a < b`` wins.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need equal-length 1-D paired samples")
    wins = int(np.sum(a < b))
    informative = int(np.sum(a != b))
    if informative == 0:
        return 1.0
    return sum(math.comb(informative, k) for k in range(wins, informative + 1)) / 2.0**informative


@dataclass
class SweepPoint:
    budget: int
    rca_mean: float
    rca_std: float
    bca_mean: float
    bca_std: float
    runs: int
    rca_values: tuple = ()
    bca_values: tuple = ()


@dataclass
class SweepCurve:
    """Aggregated metrics per query budget, budgets strictly increasing."""

    points: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["budget", "rca_mean", "rca_std", "bca_mean", "bca_std", "runs"])
            for p in self.points:
                writer.writerow(
                    [p.budget, repr(p.rca_mean), repr(p.rca_std), repr(p.bca_mean), repr(p.bca_std), p.runs]
                )


def run_sweep(budgets, runs_per_budget: int, fn) -> SweepCurve:
    """Evaluate ``fn(budget, run_index) -> MetricReport`` over a budget grid.

    Aggregates mean and population std per budget.  A closure failure
    aborts the sweep with the completed budget points preserved on the
    raised :class:`SweepAborted`.
    """
    budgets = [int(b) for b in budgets]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be strictly increasing")
    if not budgets:
        raise ValueError("budgets must be non-empty")
    if runs_per_budget < 1:
        raise ValueError("runs_per_budget must be >= 1")
    curve = SweepCurve()
    for budget in budgets:
        reports = []
        for run in range(runs_per_budget):
            try:
                reports.append(fn(budget, run))
            except Exception as exc:
                raise SweepAborted(
                    f"sweep closure failed at budget {budget}, run {run}: {exc}",
                    partial=curve,
                ) from exc
        rcas = np.array([r.rca for r in reports])
        bcas = np.array([r.bca for r in reports])
        curve.points.append(
            SweepPoint(
                budget=budget,
                rca_mean=float(rcas.mean()),
                rca_std=float(rcas.std()),
                bca_mean=float(bcas.mean()),
                bca_std=float(bcas.std()),
                runs=len(reports),
                rca_values=tuple(float(v) for v in rcas),
                bca_values=tuple(float(v) for v in bcas),
            )
        )
    return curve


RESULT_COLUMNS = [
    "dataset",
    "target_model",
    "substitute_model",
    "method",
    "budget",
    "seed",
    "rca",
    "bca",
    "baseline_rca",
    "baseline_bca",
    "noisy_rca",
    "noisy_bca",
]


def write_results_csv(path, rows) -> None:
    """Flattened result table: one row per (dataset, models, method, budget, seed)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in RESULT_COLUMNS})
