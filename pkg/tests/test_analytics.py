import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from exportscore import analytics as an
from exportscore import bart


def scores_labels(scores, labels):
    ids = [f"f{i}" for i in range(len(scores))]
    s = pd.DataFrame({"firm_id": ids, "year": 2017, "score": scores})
    lab = pd.DataFrame({"firm_id": ids, "year": 2017, "label": labels})
    return s, lab


def test_potential_set_hand_median():
    s, lab = scores_labels([0.1, 0.2, 0.3, 0.4, 0.5], [0] * 5)
    p = an.potential_set(s, lab)
    assert p.median == 0.3
    assert p.firms == {"f3", "f4"}


def test_ties_give_empty_set_and_exporters_excluded():
    s, lab = scores_labels([0.4] * 4 + [0.99], [0, 0, 0, 0, 1])
    p = an.potential_set(s, lab)
    assert p.firms == set()
    assert "f4" not in set(p.frame["firm_id"])


def test_collapse_to_latest_year():
    s = pd.DataFrame({"firm_id": ["a", "a", "b", "c"], "year": [2016, 2017, 2017, 2017],
                      "score": [0.9, 0.1, 0.5, 0.6]})
    lab = s[["firm_id", "year"]].assign(label=0)
    p = an.potential_set(s, lab)
    assert len(p.frame) == 3
    assert p.frame.set_index("firm_id").loc["a", "score"] == 0.1
    assert len(an.potential_set(s, lab, collapse_latest=False).frame) == 4


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
def test_potential_size_bounded_by_half(scores):
    s, lab = scores_labels(scores, [0] * len(scores))
    p = an.potential_set(s, lab)
    assert len(p.firms) <= -(-len(scores) // 2)


def test_lq_formula_example():
    flag = np.r_[np.ones(10), np.zeros(30), np.ones(90), np.zeros(670)].astype(bool)
    regions = np.r_[["A"] * 40, ["B"] * 760]
    lq = an.location_quotients(flag, regions, reps=0)
    t = lq.table.set_index("region")
    assert t.loc["A", "lq"] == 2.0
    assert (lq.n_potential, lq.n_firms) == (100, 800)


def test_lq_equal_shares_is_one():
    flag = np.array([1, 0, 1, 0], bool)
    lq = an.location_quotients(flag, ["A", "A", "B", "B"], reps=0)
    assert lq.table["lq"].tolist() == [1.0, 1.0]


def test_empty_region_has_no_quotient():
    lq = an.location_quotients(np.array([1, 0], bool), ["A", "A"], region_levels=["A", "Z"], reps=50)
    assert np.isnan(lq.table.set_index("region").loc["Z", "lq"])


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 4)), min_size=1, max_size=80))
def test_lq_counts_and_weighted_mean(rows):
    flag = np.array([f for f, _ in rows])
    reg = np.array([f"R{r}" for _, r in rows])
    lq = an.location_quotients(flag, reg, reps=0)
    t = lq.table
    assert t["n_firms"].sum() == lq.n_firms and t["n_potential"].sum() == lq.n_potential
    if lq.n_potential:
        assert lq.weighted_mean() == pytest.approx(1.0, abs=1e-12)


def test_bootstrap_deterministic_and_stable(rng):
    flag = rng.random(3000) < 0.5
    reg = np.array(["A", "B", "C"])[rng.integers(0, 3, 3000)]
    flag[reg == "A"] = rng.random((reg == "A").sum()) < 0.8
    a = an.location_quotients(flag, reg, reps=200, seed=1)
    b = an.location_quotients(flag, reg, reps=200, seed=1)
    pd.testing.assert_frame_equal(a.table, b.table)
    big = an.location_quotients(flag, reg, reps=2000, seed=2)
    ta, tb = a.table.set_index("region"), big.table.set_index("region")
    assert ta.loc["A", "significant"] and tb.loc["A", "significant"]
    assert np.allclose(ta["ci_low"], tb["ci_low"], atol=0.03)
    assert (ta["ci_low"] <= ta["lq"]).all() and (ta["lq"] <= ta["ci_high"]).all()


def test_aggregate_scores_matches_sort():
    rng = np.random.default_rng(3)
    df = pd.DataFrame({"score": rng.random(90), "region": rng.choice(["a", "b", "c"], 90)})
    out = an.aggregate_scores(df, "region").set_index("region")
    for g, grp in df.groupby("region"):
        v = np.sort(grp["score"].to_numpy())
        assert out.loc[g, "median"] == pytest.approx(np.median(v))
        assert out.loc[g, "min"] == v[0] and out.loc[g, "max"] == v[-1]
    assert out["share_of_national"].sum() == pytest.approx(1.0)
    assert out["count"].sum() == 90


def test_single_firm_group():
    out = an.aggregate_scores(pd.DataFrame({"score": [0.3, 0.7], "g": ["x", "y"]}), "g")
    row = out.set_index("g").loc["x"]
    assert row["min"] == row["q1"] == row["median"] == row["q3"] == row["max"] == 0.3


def test_summarize_vip_sd_formula():
    props = np.array([[0.5, 0.3, 0.2], [0.4, 0.4, 0.2]])
    v = an.summarize_vip(props, ["a", "b", "c"]).table.set_index("predictor")
    assert v.loc["a", "sd"] == pytest.approx(np.sqrt(((0.5 - 0.45) ** 2 + (0.4 - 0.45) ** 2) / 1))
    assert v.loc["c", "sd"] == 0.0
    assert v["mean"].sum() == pytest.approx(1.0)


def test_vip_replicate_identical_seeds_zero_sd():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    y = (X[:, 0] + rng.normal(size=200) > 0).astype(int)
    cfg = bart.BartConfig(q=10, burn_in=20, post_burn=20)
    same = an.vip_replicate(X, y, cfg, seeds=[5, 5])
    assert same.replications == 2
    assert (same.table["sd"] == 0).all()
    diff = an.vip_replicate(X, y, cfg, replications=3)
    assert diff.replications == 3
    assert diff.table["mean"].sum() == pytest.approx(1.0)
    assert (diff.table["sd"] >= 0).all()
    assert set(diff.above(0.01)["predictor"]) <= {"x0", "x1", "x2"}
