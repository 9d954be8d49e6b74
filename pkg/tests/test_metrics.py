import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturenet.metrics import (
    EvalReport,
    MetricError,
    PredictionSet,
    SplitMetrics,
    binary_auc,
    evaluate_predictions,
    ovr_auc,
    predicted_classes,
    roc_curve,
    top1_and_confusion,
)


def brute_auc(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly; ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _dirichlet_set(rng, n, k, quantize=False):
    scores = rng.dirichlet(np.ones(k), size=n)
    if quantize:
        scores = np.round(scores * 4) / 4
        scores = scores / scores.sum(axis=1, keepdims=True)
    labels = np.r_[np.arange(k), rng.integers(0, k, size=n - k)]
    rng.shuffle(labels)
    return PredictionSet(scores, labels)


def test_perfect_separation():
    assert binary_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_all_ties_give_half():
    assert binary_auc([0.5] * 4, [1, 0, 1, 0]) == 0.5


def test_inverted_ranking():
    assert binary_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


def test_single_class_rejected():
    with pytest.raises(MetricError, match="positive and negative"):
        binary_auc([0.1, 0.2], [1, 1])


def test_ovr_names_absent_class():
    preds = PredictionSet(np.full((4, 3), 1 / 3), [0, 1, 0, 1])
    with pytest.raises(MetricError, match="class 2"):
        ovr_auc(preds)


def test_ovr_matches_per_class_brute_force():
    preds = _dirichlet_set(np.random.default_rng(0), 25, 5)
    expected = np.mean([brute_auc(preds.scores[:, k], (preds.labels == k).astype(int)) for k in range(5)])
    assert abs(ovr_auc(preds) - expected) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.booleans())
def test_binary_auc_matches_pair_enumeration(n, seed, coarse):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 4, size=n) / 4 if coarse else rng.random(n)
    labels = np.r_[0, 1, rng.integers(0, 2, size=n - 2)]
    assert abs(binary_auc(scores, labels) - brute_auc(scores, labels)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 30), st.integers(0, 2**32 - 1))
def test_auc_invariant_under_monotone_transform(n, seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(n)
    labels = np.r_[0, 1, rng.integers(0, 2, size=n - 2)]
    transformed = np.exp(3 * scores) + scores**3
    assert binary_auc(transformed, labels) == binary_auc(scores, labels)


def test_predicted_class_ties_take_lowest_index():
    assert predicted_classes(np.array([[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]])).tolist() == [0, 1]


def test_confusion_hand_example():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    top1, conf = top1_and_confusion(PredictionSet(scores, [0, 0, 1, 1]))
    assert top1 == 0.5
    np.testing.assert_array_equal(conf, [[0.5, 0.5], [0.5, 0.5]])


def test_confusion_rows_without_support_are_flagged():
    scores = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]])
    _, conf = top1_and_confusion(PredictionSet(scores, [0, 1]))
    assert np.all(np.isnan(conf[2]))
    np.testing.assert_array_equal(conf[:2], [[1, 0, 0], [0, 1, 0]])


@settings(max_examples=100, deadline=None)
@given(st.integers(5, 30), st.integers(0, 2**32 - 1))
def test_confusion_rows_are_stochastic(n, seed):
    preds = _dirichlet_set(np.random.default_rng(seed), n, 5, quantize=True)
    top1, conf = top1_and_confusion(preds)
    assert np.all(np.abs(conf.sum(axis=1) - 1) < 1e-9)
    assert top1 == np.mean(np.argmax(preds.scores, axis=1) == preds.labels)


def test_scores_must_sum_to_one():
    with pytest.raises(MetricError):
        PredictionSet(np.array([[0.5, 0.6]]), [0])


def test_roc_curve_endpoints_and_area():
    rng = np.random.default_rng(3)
    scores = rng.random(20)
    labels = np.r_[0, 1, rng.integers(0, 2, size=18)]
    fpr, tpr = roc_curve(scores, labels)
    assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0.0, 0.0, 1.0, 1.0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    area = np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2)
    assert abs(area - binary_auc(scores, labels)) < 1e-12


def test_report_csvs(tmp_path):
    rng = np.random.default_rng(1)
    splits = [evaluate_predictions(_dirichlet_set(rng, 12, 2)) for _ in range(3)]
    report = EvalReport(splits)
    report.write(tmp_path)
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert rows[0] == ["split", "auc", "top1"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "mean"]
    assert float(rows[-1][1]) == pytest.approx(np.mean([s.auc for s in splits]), abs=0)
    conf = np.loadtxt(tmp_path / "confusion_split1.csv", delimiter=",")
    np.testing.assert_array_equal(conf, splits[1].confusion)
    assert (tmp_path / "roc_split2.csv").read_text().startswith("fpr,tpr\n")


def test_mean_confusion_skips_unsupported_rows(tmp_path):
    def split(scores, labels):
        top1, conf = top1_and_confusion(PredictionSet(scores, labels))
        return SplitMetrics(0.5, top1, conf)

    with_all = split(np.eye(3)[[0, 1, 2, 2]], [0, 1, 2, 1])
    without_2 = split(np.eye(3)[[1, 1]], [0, 1])
    report = EvalReport([with_all, without_2])
    mean = report.mean_confusion
    np.testing.assert_allclose(mean[0], [0.5, 0.5, 0.0])
    np.testing.assert_allclose(mean[1], [0.0, 0.75, 0.25])
    np.testing.assert_allclose(mean[2], [0.0, 0.0, 1.0])
    report.write(tmp_path)
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "confusion_mean.csv", delimiter=","), mean)
