import itertools

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from sklearn.metrics import average_precision_score, roc_auc_score

from exportscore import metrics as mt
from exportscore.errors import AlignmentError, UndefinedMetricError


def brute_auc(s, y):
    pos = [a for a, b in zip(s, y) if b == 1]
    neg = [a for a, b in zip(s, y) if b == 0]
    c = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return c / (len(pos) * len(neg))


def test_confusion_threshold_is_strict():
    c = mt.confusion([0.5, 0.51, 0.2, 0.9], [1, 1, 0, 0])
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 1)


def test_accuracy_measures_small_table():
    r = mt.accuracy_measures(mt.ConfusionCounts(8, 1, 2, 9))
    assert r.sensitivity == 0.8 and r.specificity == 0.9
    assert r.balanced_accuracy == pytest.approx(0.85)


def test_undefined_measures_are_none():
    r = mt.accuracy_measures(mt.ConfusionCounts(0, 3, 0, 5))
    assert r.sensitivity is None and r.balanced_accuracy is None
    assert r.specificity == 5 / 8


def test_auc_examples():
    assert mt.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert mt.roc_auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    with pytest.raises(UndefinedMetricError):
        mt.roc_auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=12))
def test_auc_matches_pair_count(pairs):
    s = [a / 5 for a, _ in pairs]
    y = [b for _, b in pairs]
    if len(set(y)) < 2:
        return
    assert mt.roc_auc(s, y) == brute_auc(s, y)


@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_and_ap_match_sklearn(pairs):
    s = np.array([a / 8 for a, _ in pairs])
    y = np.array([b for _, b in pairs])
    if len(set(y)) < 2:
        return
    assert mt.roc_auc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
    assert mt.pr_auc(s, y) == pytest.approx(average_precision_score(y, s), abs=1e-12)


def test_pr_auc_perfect_and_random(rng):
    assert mt.pr_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    y = (rng.random(20_000) < 0.3).astype(int)
    assert mt.pr_auc(rng.random(20_000), y) == pytest.approx(0.3, abs=0.02)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=3, max_size=30))
def test_spearman_matches_scipy(pairs):
    a, b = map(np.array, zip(*pairs))
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    assert mt.spearman(a, b) == pytest.approx(stats.spearmanr(a, b)[0], abs=1e-12)


def test_spearman_errors():
    with pytest.raises(UndefinedMetricError):
        mt.spearman([1.0], [2.0])
    with pytest.raises(UndefinedMetricError):
        mt.spearman([1, 1, 1], [1, 2, 3])


def test_alignment_errors():
    with pytest.raises(AlignmentError):
        mt.evaluate([0.1, 0.2], [1])
    a = pd.Series([0.1, 0.2], index=["a", "b"])
    with pytest.raises(AlignmentError):
        mt.evaluate(a, pd.Series([1, 0], index=["b", "c"]))


def test_evaluate_single_class_group_keeps_defined_measures():
    out = mt.evaluate_by_group([0.9, 0.2, 0.7, 0.4], [1, 1, 0, 1], ["g", "g", "h", "h"])
    assert out["g"].roc_auc is None and out["g"].sensitivity == 0.5
    assert out["g"].specificity is None
    assert out["h"].roc_auc == 0.0


def test_spearman_matrix_unit_diagonal(rng):
    a = rng.random(50)
    m = mt.spearman_matrix({"m1": a, "m2": a**2 + 0.1 * rng.random(50)})
    assert m.shape == (2, 2)
    np.testing.assert_array_equal(np.diag(m), [1.0, 1.0])
    assert m.loc["m1", "m2"] == m.loc["m2", "m1"]


def test_reports_frame_columns():
    r = mt.evaluate([0.9, 0.1], [1, 0]).row(model="m", group="all", fold=0)
    df = mt.reports_frame([r])
    assert list(df.columns[:9]) == ["model", "group", "fold", "specificity", "sensitivity",
                                    "balanced_accuracy", "auc", "pr", "n_obs"]


def test_harness_cross_validate_runs(small_panel):
    from exportscore import dataset as ds

    panel, _ = small_panel
    ls = ds.label(panel)

    def fit_predict(train, y, test):
        # size alone as a score
        return np.nan_to_num(test.matrix(["size"])[:, 0], nan=0.0)

    df = mt.cross_validate(panel, ls, fit_predict, seeds=[0, 1])
    assert len(df) == 2 and df["auc"].between(0, 1).all()
    py = mt.per_year(panel, ls, fit_predict)
    assert len(py) == len(panel.years)
    bd = mt.by_definition(panel, [("positive-revenue", None), ("share-threshold", 5)], fit_predict)
    assert list(bd["group"]) == ["positive-revenue", "share-threshold:5"]
