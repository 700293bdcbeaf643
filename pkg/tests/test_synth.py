import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from exportscore import dataset as ds, synth
from exportscore.errors import GeneratorSpecError


def mask_of(panel):
    return np.isnan(panel.frame[list(panel.schema.numeric)].to_numpy(float))


def test_mcar_zero_masks_nothing():
    panel, truth = synth.generate(synth.GeneratorSpec(n_firms=50, years=(2015, 2017),
                                                      missingness="mcar", missing_rate=0.0))
    assert not mask_of(panel).any()
    assert truth["incomplete"].sum() == 0


def test_no_missingness_masks_nothing():
    panel, _ = synth.generate(synth.GeneratorSpec(n_firms=50, p=5, missingness="none"))
    assert not mask_of(panel).any()


def test_mcar_rate_close_to_nominal():
    panel, _ = synth.generate(synth.GeneratorSpec(n_firms=400, p=6, missingness="mcar",
                                                  missing_rate=0.2, seed=3))
    assert abs(mask_of(panel).mean() - 0.2) < 0.01


@pytest.mark.parametrize("p", [52, 4])
def test_seed_determinism(p):
    spec = synth.GeneratorSpec(n_firms=60, years=(2014, 2017), p=p, seed=11)
    a, ta = synth.generate(spec)
    b, tb = synth.generate(spec)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    pd.testing.assert_frame_equal(ta, tb)
    c, _ = synth.generate(synth.GeneratorSpec(n_firms=60, years=(2014, 2017), p=p, seed=12))
    assert not a.frame.equals(c.frame)


def test_panel_shape_and_schema(small_panel):
    raw, truth = synth.generate(synth.GeneratorSpec(n_firms=120, years=(2014, 2017), seed=7))
    assert len(raw.frame) == 120 * 4 == len(truth)
    assert raw.schema.numeric == ds.financial_schema().numeric
    derived, _ = small_panel
    assert len(derived.predictors) == 52
    assert set(truth.columns) == {"firm_id", "year", "probability", "label", "export_share", "incomplete"}


def test_exports_follow_labels():
    panel, truth = synth.generate(synth.GeneratorSpec(n_firms=80, years=(2016, 2017), seed=2))
    lab = ds.label(panel)
    merged = lab.frame.merge(truth, on=["firm_id", "year"], suffixes=("", "_true"))
    assert (merged["label"] == merged["label_true"]).all()


def test_generic_columns_named():
    panel, _ = synth.generate(synth.GeneratorSpec(n_firms=10, years=(2017, 2017), p=3, missingness="none"))
    assert panel.predictors == ("x01", "x02", "x03")


def test_calibration_within_two_monte_carlo_se():
    _, truth = synth.generate(synth.GeneratorSpec(n_firms=2000, years=(2010, 2017), seed=5))
    p = truth["probability"].to_numpy()
    se = np.sqrt(np.sum(p * (1 - p))) / len(p)
    assert abs(truth["label"].mean() - p.mean()) <= 2 * se
    assert abs(p.mean() - 0.4) < 1e-9


@pytest.mark.parametrize("y", [0, 1])
def test_mnar_probability_decreases_with_size(y):
    spec = synth.GeneratorSpec()
    size = np.linspace(-4, 4, 81)
    pi = synth.missing_probability(spec, size, np.full_like(size, y))
    assert np.all(np.diff(pi) < 0)


@given(st.floats(0.01, 0.9), st.floats(0.05, 3), st.floats(0, 3))
def test_mnar_probability_monotone_property(rate, slope, info):
    spec = synth.GeneratorSpec(missing_rate=rate, size_slope=slope, informativeness=info)
    size = np.sort(np.random.default_rng(0).normal(size=30))
    for y in (0, 1):
        pi = synth.missing_probability(spec, size, np.full(30, y))
        assert np.all(np.diff(pi) <= 0)
    # non-exporters are never less likely to be incomplete
    assert np.all(synth.missing_probability(spec, size, np.zeros(30))
                  >= synth.missing_probability(spec, size, np.ones(30)))


def plug_in_mi(a, b):
    a = np.asarray(a, int)
    b = np.asarray(b, int)
    joint = np.zeros((2, 2))
    np.add.at(joint, (a, b), 1)
    joint /= joint.sum()
    pa, pb = joint.sum(1), joint.sum(0)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz])))


def test_mask_label_information_rises_with_informativeness():
    mis = []
    for w in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0]:
        panel, truth = synth.generate(synth.GeneratorSpec(n_firms=1000, informativeness=w, seed=4))
        mis.append(plug_in_mi(mask_of(panel).any(axis=1), truth["label"]))
    assert all(b >= a for a, b in zip(mis, mis[1:])), mis


def test_informativeness_zero_mask_depends_only_on_size():
    # holding size fixed, the event odds do not move with the label
    spec = synth.GeneratorSpec(informativeness=0.0)
    size = np.linspace(-2, 2, 9)
    np.testing.assert_array_equal(synth.missing_probability(spec, size, np.zeros(9)),
                                  synth.missing_probability(spec, size, np.ones(9)))


def test_incomplete_rows_hide_at_least_one_cell():
    panel, truth = synth.generate(synth.GeneratorSpec(n_firms=200, years=(2016, 2017), seed=9))
    m = mask_of(panel).any(axis=1)
    np.testing.assert_array_equal(m, truth["incomplete"].to_numpy().astype(bool))


def test_interactions_change_truth():
    base = synth.GeneratorSpec(n_firms=100, years=(2017, 2017), p=3, missingness="none",
                               coefficients=[1.0, 0.0, 0.0], seed=1)
    _, t0 = synth.generate(base)
    _, t1 = synth.generate(synth.GeneratorSpec(**{**base.to_dict(), "years": (2017, 2017),
                                                  "interactions": ((0, 1, 0.8),)}))
    assert not np.allclose(t0["probability"], t1["probability"])


@pytest.mark.parametrize("kw", [
    dict(n_firms=0), dict(years=(2017, 2015)), dict(p=0), dict(missingness="mar"),
    dict(missing_rate=1.0), dict(missingness="mnar", missing_rate=0.0), dict(size_slope=-1),
    dict(informativeness=-0.1), dict(noise_scale=0), dict(prevalence=0.99), dict(n_industries=25),
])
def test_invalid_specs_rejected(kw):
    with pytest.raises(GeneratorSpecError):
        synth.GeneratorSpec(**kw)


def test_extreme_intercept_outside_prevalence_bounds():
    with pytest.raises(GeneratorSpecError, match="prevalence"):
        synth.generate(synth.GeneratorSpec(n_firms=50, p=3, intercept=8.0, missingness="none"))


def test_spec_dict_round_trip():
    spec = synth.GeneratorSpec(n_firms=7, p=3, coefficients=[0.1, 0.2, 0.3],
                               interactions=((0, 2, 0.5),), seed=4)
    assert synth.GeneratorSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(GeneratorSpecError):
        synth.GeneratorSpec.from_dict({"n_firm": 3})


def test_written_panel_reads_back(tmp_path):
    panel, truth = synth.generate(synth.GeneratorSpec(n_firms=30, years=(2016, 2017), seed=3))
    ds.write_csv(panel, tmp_path / "p.csv", header_comment="synthetic")
    back = ds.ingest_csv(tmp_path / "p.csv", ds.financial_schema())
    np.testing.assert_array_equal(back.matrix(panel.predictors), panel.matrix(panel.predictors))
    synth.write_truth(truth, tmp_path / "t.csv", header_comment="truth")
    t = pd.read_csv(tmp_path / "t.csv", comment="#", float_precision="round_trip")
    np.testing.assert_array_equal(t["probability"].to_numpy(), truth["probability"].to_numpy())


# ---------------------------------------------------------------------------
# patterns


def categories(panel):
    return ds.classify_patterns(ds.label(panel))


def test_all_constant_round_trip():
    panel, _ = synth.pattern_generate(synth.GeneratorSpec(n_firms=40, years=(2012, 2017)), {"constant": 1.0})
    assert (categories(panel)["category"] == "constant_exporter").all()


def test_discontinuous_allocation_exact():
    mix = {"discontinuous": 0.3, "never": 0.5, "constant": 0.2}
    panel, _ = synth.pattern_generate(synth.GeneratorSpec(n_firms=1000, years=(2010, 2017), p=3,
                                                          missingness="none"), mix)
    cat = categories(panel)
    assert (cat["category"] == "discontinuous").sum() == 300
    assert (cat.loc[cat["category"] == "discontinuous", "changes"] >= 2).all()


def test_switch_years_cover_timeline():
    spec = synth.GeneratorSpec(n_firms=70, years=(2010, 2017), p=3, missingness="none")
    panel, _ = synth.pattern_generate(spec, {"switching_exporter": 0.5, "switching_non_exporter": 0.5})
    cat = categories(panel)
    starts = set(cat["start_year"].dropna().astype(int))
    stops = set(cat["stop_year"].dropna().astype(int))
    assert starts == set(range(2011, 2018))
    assert stops == set(range(2010, 2017))


def test_allocate_largest_remainder():
    assert synth.allocate({"constant": 1 / 3, "never": 1 / 3, "discontinuous": 1 / 3}, 10) == \
        {"constant_exporter": 4, "non_exporter": 3, "discontinuous": 3}
    with pytest.raises(GeneratorSpecError):
        synth.allocate({"constant": 0.6, "never": 0.6}, 10)
    with pytest.raises(GeneratorSpecError):
        synth.allocate({"sometimes": 1.0}, 10)


@pytest.mark.parametrize("years,mix", [
    ((2017, 2017), {"switching": 1.0}),
    ((2016, 2017), {"discontinuous": 0.1, "constant": 0.9}),
])
def test_infeasible_timeline(years, mix):
    with pytest.raises(GeneratorSpecError):
        synth.pattern_generate(synth.GeneratorSpec(n_firms=10, years=years, p=3, missingness="none"), mix)


@settings(max_examples=15)
@given(st.lists(st.integers(0, 5), min_size=5, max_size=5).filter(lambda w: sum(w) > 0),
       st.integers(3, 8), st.integers(5, 60), st.integers(0, 1000))
def test_pattern_round_trip_property(weights, T, n, seed):
    mix = dict(zip(ds.CATEGORIES, np.asarray(weights) / sum(weights)))
    spec = synth.GeneratorSpec(n_firms=n, years=(2010, 2009 + T), p=3, missingness="none", seed=seed)
    panel, truth = synth.pattern_generate(spec, mix)
    got = categories(panel)["category"].value_counts().to_dict()
    want = {k: v for k, v in synth.allocate(mix, n).items() if v}
    assert got == want
    lab = ds.label(panel).frame.merge(truth, on=["firm_id", "year"])
    assert (lab["label_x"] == lab["label_y"]).all()


# ---------------------------------------------------------------------------
# missingness as signal, paired over seeds


def mia_gain(informativeness, seed):
    from exportscore import metrics, models

    panel, truth = synth.generate(synth.GeneratorSpec(n_firms=500, informativeness=informativeness, seed=seed))
    panel = ds.derive_predictors(panel)
    part = ds.partition(panel, 0.8, seed)
    train, test = part.split(panel)
    labels = ds.label(panel)
    y_tr, y_te = labels.align(train), labels.align(test)
    p_mia = models.predict_model(models.fit_model("bart-mia", train, y_tr, seed=seed), test)
    p_cc = models.predict_model(models.fit_model("bart", train, y_tr, seed=seed, complete_cases=True), test)
    keep = ~np.isnan(p_cc)
    return metrics.roc_auc(p_mia, y_te) - metrics.roc_auc(p_cc[keep], y_te[keep])


def test_uninformative_mask_gives_no_mia_advantage():
    flat = [mia_gain(0.0, s) for s in range(3)]
    steep = [mia_gain(1.5, s) for s in range(3)]
    assert abs(np.mean(flat)) < 0.02, flat
    assert np.mean(steep) > np.mean(flat) + 0.01, (flat, steep)
