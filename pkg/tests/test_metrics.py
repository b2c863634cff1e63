import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import mann_whitney_auc
from xensemble.metrics import ConfusionMatrix, auc_trapezoid, confusion, prf1_accuracy, roc_auc, roc_curve


def test_confusion_counts():
    cm = confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (2, 1, 1, 1)
    with pytest.raises(ValueError):
        confusion([1, 0], [1])
    with pytest.raises(ValueError):
        confusion([2], [1])


def test_prf1_from_counts():
    r = prf1_accuracy(ConfusionMatrix(tp=514, fp=7, tn=93, fn=4))
    assert r["precision"] == pytest.approx(514 / 521, abs=1e-15)
    assert r["recall"] == pytest.approx(514 / 518, abs=1e-15)
    assert r["accuracy"] == pytest.approx(607 / 618, abs=1e-15)
    p, q = 514 / 521, 514 / 518
    assert r["f1"] == pytest.approx(2 * p * q / (p + q), abs=1e-15)
    assert r["degenerate"] == []


def test_degenerate_zero_division():
    r = prf1_accuracy(ConfusionMatrix(tp=0, fp=0, tn=5, fn=0))
    assert r["precision"] == 0.0 and r["recall"] == 0.0 and r["f1"] == 0.0
    assert r["degenerate"] == ["precision", "recall", "f1"]
    assert r["accuracy"] == 1.0


def test_auc_fixtures():
    _, auc = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert auc == pytest.approx(0.75, abs=1e-12)
    _, auc = roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert auc == 1.0
    _, auc = roc_auc([0.5] * 4, [0, 1, 0, 1])
    assert auc == 0.5


def test_roc_shape_and_csv():
    curve = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert curve.thresholds[0] == np.inf and curve.thresholds[-1] == -np.inf
    assert curve.points[0] == (0.0, 0.0) and curve.points[-1] == (1.0, 1.0)
    lines = curve.to_csv().splitlines()
    assert lines[0] == "threshold,fpr,tpr" and lines[1].startswith("inf,") and lines[-1].startswith("-inf,")


def test_roc_needs_both_classes():
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 1])


scores = st.lists(st.integers(0, 6).map(lambda k: k / 6), min_size=2, max_size=40)


@given(scores, st.data())
@settings(max_examples=300, deadline=None)
def test_auc_equals_mann_whitney_with_ties(s, data):
    y = data.draw(st.lists(st.integers(0, 1), min_size=len(s), max_size=len(s)))
    if len(set(y)) < 2:
        return
    curve, auc = roc_auc(s, y)
    assert abs(auc - mann_whitney_auc(s, y)) < 1e-9
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    # flipping scores mirrors the AUC
    assert abs(roc_auc(-np.array(s), y)[1] - (1 - auc)) < 1e-12
    assert abs(auc_trapezoid(curve) - auc) == 0


def test_csv_values_parse_as_floats():
    curve = roc_curve(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1]))
    for line in curve.to_csv().splitlines()[1:]:
        [float(v) for v in line.split(",")]
