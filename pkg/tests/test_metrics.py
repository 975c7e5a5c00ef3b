import numpy as np
import pytest

from gridwatch.metrics import compute_metrics, rates_from_counts, roc_curve


def test_all_correct():
    rates = compute_metrics([True, False, True], [True, False, True])
    assert rates["ac"] == 1.0 and rates["tpr"] == 1.0 and rates["fpr"] == 0.0


def test_reference_confusion_counts_reproduce_rates():
    rates = rates_from_counts(tp=918, fn=82, fp=104, tn=896)
    assert rates["tpr"] == 0.918
    assert rates["fpr"] == 0.104
    assert rates["tnr"] == 0.896
    assert rates["fnr"] == 0.082
    assert rates["ac"] == pytest.approx(0.907)


def test_all_predicted_positive():
    rates = compute_metrics([True] * 6, [True, True, False, False, False, True])
    assert rates["tpr"] == 1.0 and rates["tnr"] == 0.0


def test_rate_identities():
    rng = np.random.default_rng(1)
    for _ in range(20):
        predicted = rng.random(50) > 0.5
        truth = rng.random(50) > 0.5
        if truth.all() or not truth.any():
            continue
        rates = compute_metrics(predicted, truth)
        assert rates["tpr"] + rates["fnr"] == pytest.approx(1.0, abs=1e-12)
        assert rates["tnr"] + rates["fpr"] == pytest.approx(1.0, abs=1e-12)
        tp, fn, fp, tn = rates["tp"], rates["fn"], rates["fp"], rates["tn"]
        assert rates["ac"] == pytest.approx((tp + tn) / 50)


def test_undefined_rates_are_none():
    rates = compute_metrics([False, False], [False, False])
    assert rates["tpr"] is None and rates["fnr"] is None
    assert rates["fpr"] == 0.0


def test_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([True], [True, False])


# ---------------------------------------------------------------------------
# ROC

def test_roc_two_point_hand_enumeration():
    points, auc = roc_curve([1.0, 0.0], [True, False])
    assert points == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    assert auc == 1.0


def test_roc_perfectly_separating_scores():
    scores = [0.9, 0.8, 0.7, 0.2, 0.1]
    truth = [True, True, True, False, False]
    points, auc = roc_curve(scores, truth)
    assert auc == 1.0
    assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)


def test_roc_reversed_scores_auc_zero():
    _, auc = roc_curve([0.1, 0.9], [True, False])
    assert auc == 0.0


def test_roc_random_scores_auc_near_half():
    rng = np.random.default_rng(42)
    n = 10_000
    scores = rng.random(n)
    truth = rng.random(n) > 0.5
    _, auc = roc_curve(scores, truth)
    assert auc == pytest.approx(0.5, abs=0.02)


def test_roc_monotone_and_in_unit_square():
    rng = np.random.default_rng(7)
    scores = rng.normal(0, 1, 500) + np.where(rng.random(500) > 0.5, 0.5, 0.0)
    truth = rng.random(500) > 0.4
    points, auc = roc_curve(scores, truth)
    assert 0.0 <= auc <= 1.0
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    assert xs == sorted(xs)
    assert ys == sorted(ys)
    assert all(0 <= x <= 1 and 0 <= y <= 1 for x, y in points)


def test_roc_ties_grouped():
    # three tied positives and one higher negative: single jump for the tie
    points, auc = roc_curve([0.5, 0.5, 0.5, 0.9], [True, True, True, False])
    assert (1.0, 0.0) in points  # the negative alone classified first
    assert points[-1] == (1.0, 1.0)


def test_roc_rejects_single_class():
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [True, True])
    with pytest.raises(ValueError):
        roc_curve([], [])
