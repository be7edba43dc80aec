import numpy as np
import pytest

from qsattack.errors import SweepAborted
from qsattack.metrics import (
    MetricReport,
    bca,
    boundary_agreement,
    metric_report,
    paired_sign_test,
    rca,
    run_sweep,
    write_results_csv,
)
from testutil import make_model

RNG = np.random.default_rng(31)


def brute_force_metrics(preds, labels):
    """Independent recomputation straight from per-class tallies."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    raw = sum(int(p == y) for p, y in zip(preds, labels)) / len(labels)
    recalls = []
    for c in sorted(set(labels.tolist())):
        members = [i for i, y in enumerate(labels) if y == c]
        recalls.append(sum(int(preds[i] == c) for i in members) / len(members))
    return raw, sum(recalls) / len(recalls)


def test_rca_hand_cases():
    assert rca([1, 0, 1, 1], [1, 1, 1, 0]) == 0.5
    assert rca([2, 0, 1], [2, 0, 1]) == 1.0
    with pytest.raises(ValueError):
        rca([], [])
    with pytest.raises(ValueError):
        rca([1, 0], [1])


def test_bca_hand_case():
    # recalls 2/3 and 1, averaged
    assert bca([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(5.0 / 6.0)


def test_balanced_classes_make_bca_equal_rca():
    preds = RNG.integers(0, 2, 40)
    labels = np.repeat([0, 1], 20)
    assert bca(preds, labels) == pytest.approx(rca(preds, labels))


def test_metrics_match_brute_force_oracle():
    for _ in range(50):
        k = int(RNG.integers(2, 6))
        n = int(RNG.integers(5, 60))
        labels = RNG.integers(0, k, n)
        preds = RNG.integers(0, k, n)
        expect_rca, expect_bca = brute_force_metrics(preds, labels)
        report = metric_report(preds, labels, k)
        assert report.rca == pytest.approx(expect_rca, abs=1e-12)
        assert report.bca == pytest.approx(expect_bca, abs=1e-12)


def test_confusion_matrix_consistency():
    labels = RNG.integers(0, 3, 200)
    preds = RNG.integers(0, 3, 200)
    report = metric_report(preds, labels, 3)
    support = report.confusion.sum(axis=1)
    assert np.array_equal(support, np.bincount(labels, minlength=3))
    assert report.rca == pytest.approx(np.trace(report.confusion) / 200)
    recalls = np.diag(report.confusion)[support > 0] / support[support > 0]
    assert report.bca == pytest.approx(recalls.mean())


def test_bca_excludes_absent_classes():
    report = metric_report([0, 1, 0], [0, 1, 0], n_classes=4)
    assert np.isnan(report.per_class_recall[2]) and np.isnan(report.per_class_recall[3])
    assert report.bca == 1.0


def test_boundary_agreement_definitions():
    model = make_model("mlp", seed=5)
    xs = RNG.standard_normal((60, 2, 6))
    own = model.predict_batch(xs)
    assert boundary_agreement(model, own, xs) == 1.0
    constant = make_model("linear")
    constant.set_parameters(np.zeros(constant.n_parameters))
    labels = np.repeat([0, 1], 30)
    assert boundary_agreement(constant, labels, xs) == 0.5
    other = RNG.integers(0, 2, 60)
    assert boundary_agreement(model, other, xs) == rca(model.predict_batch(xs), other)


def test_paired_sign_test_hand_values():
    assert paired_sign_test([0, 0, 0, 0, 0], [1, 1, 1, 1, 1]) == pytest.approx(1 / 32)
    assert paired_sign_test([1, 1], [1, 1]) == 1.0  # all ties
    # 3 wins, 1 loss: P(X >= 3), X ~ Binomial(4, 1/2)
    assert paired_sign_test([0, 0, 0, 2], [1, 1, 1, 1]) == pytest.approx(5 / 16)


def fixed_report(value):
    return MetricReport(rca=value, bca=value, per_class_recall=np.array([value]),
                        confusion=np.eye(2, dtype=np.int64))


def test_run_sweep_echoes_single_run():
    curve = run_sweep([100], 1, lambda budget, run: fixed_report(0.7))
    point = curve.points[0]
    assert (point.budget, point.rca_mean, point.rca_std, point.runs) == (100, 0.7, 0.0, 1)


def test_run_sweep_budget_invariance_for_budget_blind_closure():
    curve = run_sweep([100, 200], 3, lambda budget, run: fixed_report(0.1 * (run + 1)))
    assert curve.points[0].rca_mean == curve.points[1].rca_mean
    assert curve.points[0].rca_values == curve.points[1].rca_values


def test_run_sweep_aggregation_matches_recomputation():
    values = {(b, r): float(RNG.random()) for b in (10, 20) for r in range(4)}
    curve = run_sweep([10, 20], 4, lambda b, r: fixed_report(values[(b, r)]))
    for point in curve.points:
        expected = [values[(point.budget, r)] for r in range(4)]
        assert point.rca_mean == pytest.approx(np.mean(expected))
        assert point.rca_std == pytest.approx(np.std(expected))


def test_run_sweep_abort_preserves_partial():
    def closure(budget, run):
        if budget == 200:
            raise RuntimeError("boom")
        return fixed_report(0.5)

    with pytest.raises(SweepAborted) as info:
        run_sweep([100, 200, 300], 2, closure)
    partial = info.value.partial
    assert [p.budget for p in partial.points] == [100]


def test_run_sweep_validation():
    with pytest.raises(ValueError):
        run_sweep([100, 100], 1, lambda b, r: fixed_report(0.5))
    with pytest.raises(ValueError):
        run_sweep([], 1, lambda b, r: fixed_report(0.5))
    with pytest.raises(ValueError):
        run_sweep([100], 0, lambda b, r: fixed_report(0.5))


def test_sweep_curve_csv(tmp_path):
    curve = run_sweep([100, 200], 2, lambda b, r: fixed_report(0.25))
    path = tmp_path / "sweep.csv"
    curve.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "budget,rca_mean,rca_std,bca_mean,bca_std,runs"
    assert len(lines) == 3


def test_write_results_csv(tmp_path):
    row = {
        "dataset": "blobs-k2-2x6", "target_model": "mlp-16", "substitute_model": "mlp-16",
        "method": "active", "budget": 400, "seed": 123,
        "rca": "0.5", "bca": "0.5", "baseline_rca": "0.9", "baseline_bca": "0.9",
        "noisy_rca": "0.89", "noisy_bca": "0.89",
    }
    path = tmp_path / "results.csv"
    write_results_csv(path, [row])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ("dataset,target_model,substitute_model,method,budget,seed,"
                        "rca,bca,baseline_rca,baseline_bca,noisy_rca,noisy_bca")
    assert len(lines) == 2
