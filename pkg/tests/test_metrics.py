import numpy as np
import pytest

from serlct.metrics import MetricsReport, compute_metrics, confusion_matrix

from oracles import count_metrics

# Per-class (precision, recall, F1) percentages reported for the two corpora.
REPORTED_TRIPLES = {
    "iemocap": [(72.88, 62.32, 67.19), (70.51, 75.00, 72.68), (74.43, 79.13, 76.71), (69.68, 74.43, 71.98)],
    "emodb": [
        (86.67, 100.00, 92.86), (94.44, 100.00, 97.14), (88.00, 95.65, 91.67), (83.33, 83.33, 83.33),
        (100.00, 93.75, 96.77), (100.00, 76.92, 86.96), (83.33, 76.92, 80.00),
    ],
}


def random_confusions(n=100, seed=7):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        k = int(rng.integers(2, 8))
        yield rng.integers(0, 20, size=(k, k))


def test_two_by_two_hand_example():
    rep = compute_metrics([[2, 0], [1, 1]])
    assert rep.accuracy == [1.0, 0.5]
    assert rep.ua == 0.75 and rep.wa == 0.75
    assert rep.precision == [2 / 3, 1.0]
    assert rep.f1[0] == pytest.approx(0.8, abs=1e-15)


def test_perfect_diagonal():
    rep = compute_metrics(np.diag([3, 5, 1, 7]))
    for vals in (rep.precision, rep.recall, rep.f1):
        assert vals == [1.0] * 4
    assert rep.wa == rep.ua == 1.0
    assert rep.undefined == []


def test_counting_oracle_exact():
    for cm in random_confusions():
        rep, ref = compute_metrics(cm), count_metrics(cm.tolist())
        assert rep.precision == ref["precision"]
        assert rep.recall == ref["recall"]
        assert rep.f1 == ref["f1"]
        assert rep.wa == ref["wa"] and rep.ua == ref["ua"]


def test_wa_is_global_accuracy():
    for cm in random_confusions(seed=8):
        if cm.sum():
            assert compute_metrics(cm).wa == pytest.approx(np.trace(cm) / cm.sum(), rel=1e-14)


def test_ua_invariant_to_support_scaling_wa_not():
    cm = np.array([[5, 3, 2], [1, 8, 1], [4, 0, 6]])
    scaled = cm.copy()
    scaled[1] *= 4
    a, b = compute_metrics(cm), compute_metrics(scaled)
    assert b.ua == pytest.approx(a.ua, rel=1e-15)
    assert b.wa != pytest.approx(a.wa, rel=1e-6)


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.zeros(4), [[1, -1], [0, 2]], [[0.5, 0], [0, 1]]])
def test_rejects_bad_matrices(bad):
    with pytest.raises(ValueError):
        compute_metrics(bad)


def test_zero_denominators_flagged():
    rep = compute_metrics([[3, 0, 0], [1, 0, 0], [0, 0, 0]])
    assert rep.precision[1] == 0.0 and rep.recall[2] == 0.0
    assert {"precision[1]", "recall[2]", "precision[2]", "f1[1]", "f1[2]"} <= set(rep.undefined)


def test_acc_as_precision_flag():
    cm = [[2, 0], [1, 1]]
    rep = compute_metrics(cm, acc_as_precision=True)
    assert rep.accuracy == [2 / 3, 1.0]
    assert rep.ua == pytest.approx((2 / 3 + 1.0) / 2, rel=1e-15)
    assert rep.wa == pytest.approx((2 * 2 / 3 + 2 * 1.0) / 4, rel=1e-15)


@pytest.mark.parametrize("corpus", list(REPORTED_TRIPLES))
def test_reported_f1_triples_consistent(corpus):
    for p, r, f in REPORTED_TRIPLES[corpus]:
        assert abs(2 * p * r / (p + r) - f) < 0.01


def test_hand_built_precision_recall_f1():
    # class 0: tp 6, fn 2, fp 3 -> P = 6/9, R = 6/8
    rep = compute_metrics([[6, 2], [3, 9]])
    assert rep.precision[0] == 6 / 9 and rep.recall[0] == 6 / 8
    assert rep.f1[0] == pytest.approx(2 * (6 / 9) * (6 / 8) / (6 / 9 + 6 / 8), rel=1e-15)


def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 1, 1, 2, 2, 2], [0, 1, 0, 2, 2, 1], 3)
    np.testing.assert_array_equal(cm, [[1, 0, 0], [1, 1, 0], [0, 1, 2]])


def test_json_and_csv_roundtrip():
    for i, cm in enumerate(random_confusions(10, seed=3)):
        rep = compute_metrics(cm, class_names=[f"c{j}" for j in range(len(cm))])
        back = MetricsReport.from_json(rep.to_json())
        assert back.to_dict() == rep.to_dict()
        again = MetricsReport.from_csv(rep.to_csv(), rep.confusion_csv())
        assert again.to_dict() == rep.to_dict()
