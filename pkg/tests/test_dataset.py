import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from exportscore import dataset as ds
from exportscore.errors import (DuplicateKeyError, IncompleteTimelineError, ParameterError,
                                ParseError, SchemaError)


def tiny_schema():
    return ds.generic_schema(["a", "b"])


def write(tmp_path, text, name="p.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


GOOD = """# provenance line
firm_id,year,a,b,region,industry,export_revenue,total_revenue
001,2010,1.5,,R1,10,0,100
001,2011,2,NA,R1,10,5,100
002,2010,3,4,R2,11,,50
002,2011,3,4,R2,11,1,50
"""


def test_ingest_reads_missing_and_keeps_ids(tmp_path):
    panel = ds.ingest_csv(write(tmp_path, GOOD), tiny_schema())
    assert list(panel.firm_id) == ["001", "001", "002", "002"]
    assert panel.mask[:, 1].tolist() == [True, True, False, False]
    assert np.isnan(panel.frame["export_revenue"].iloc[2])


def test_ingest_rejects_unknown_and_missing_columns(tmp_path):
    with pytest.raises(SchemaError, match="'c'"):
        ds.ingest_csv(write(tmp_path, GOOD.replace(",b,", ",c,")), tiny_schema())
    text = "\n".join(",".join(x for i, x in enumerate(l.split(",")) if i != 3) for l in GOOD.splitlines()[1:])
    with pytest.raises(SchemaError, match="'b'"):
        ds.ingest_csv(write(tmp_path, text), tiny_schema())


def test_ingest_parse_error_names_row(tmp_path):
    with pytest.raises(ParseError, match="row 3"):
        ds.ingest_csv(write(tmp_path, GOOD.replace(",3,4,R2,11,,", ",x,4,R2,11,,")), tiny_schema())


def test_duplicate_keys_rejected(tmp_path):
    bad = GOOD + "002,2011,3,4,R2,11,1,50\n"
    with pytest.raises(DuplicateKeyError):
        ds.ingest_csv(write(tmp_path, bad), tiny_schema())


def test_noncontiguous_years_rejected(tmp_path):
    with pytest.raises(SchemaError, match="contiguous"):
        ds.ingest_csv(write(tmp_path, GOOD.replace("2011", "2013")), tiny_schema())


def test_write_then_ingest_round_trip(tmp_path, small_panel):
    panel, _ = small_panel
    raw_schema = ds.financial_schema()
    raw = ds.FirmPanel(panel.frame[list(raw_schema.columns)], raw_schema, raw_schema.predictors)
    path = tmp_path / "r.csv"
    ds.write_csv(raw, path, "hdr")
    back = ds.ingest_csv(path, raw_schema)
    np.testing.assert_array_equal(back.matrix(), raw.matrix())


def test_schema_dict_round_trip_and_unknown_key():
    s = ds.financial_schema()
    assert ds.Schema.from_dict(s.to_dict()) == s
    with pytest.raises(SchemaError):
        ds.Schema.from_dict({"numeric": ["a"], "bogus": 1})


def test_financial_predictor_count(small_panel):
    panel, _ = small_panel
    assert len(ds.FINANCIAL_PREDICTORS) == 52
    assert panel.predictors == ds.FINANCIAL_PREDICTORS


def test_size_age_formula():
    ta, age = np.array([np.e**10]), np.array([5.0])
    assert ds.size_age_index(ta, age)[0] == pytest.approx(-7.37 + 4.3 - 0.2)


def test_derived_ratios_follow_inputs(small_panel):
    panel, _ = small_panel
    f = panel.frame
    ok = f["employees"].notna() & f["fixed_assets"].notna()
    np.testing.assert_allclose(f.loc[ok, "capital_intensity"], f.loc[ok, "fixed_assets"] / f.loc[ok, "employees"])
    # a missing input propagates
    assert f.loc[f["employees"].isna(), "capital_intensity"].isna().all()


def test_productive_capacity_uses_previous_year(small_panel):
    panel, _ = small_panel
    f = panel.frame
    first = f["year"] == f["year"].min()
    assert f.loc[first, "productive_capacity"].isna().all()
    g = f[f["firm_id"] == f["firm_id"].iloc[0]].reset_index(drop=True)
    want = g["fixed_assets"][1] / (g["fixed_assets"][0] + g["depreciation"][0])
    if np.isfinite(want):
        assert g["productive_capacity"][1] == pytest.approx(want)


def test_spillover_shares_in_unit_interval(small_panel):
    panel, _ = small_panel
    v = panel.frame["regional_spillover"].to_numpy()
    assert np.all((v >= 0) & (v <= 1))


def frame_for(labels_by_firm, start=2010):
    rows = []
    for fid, seq in labels_by_firm.items():
        for t, v in enumerate(seq):
            rows.append({"firm_id": fid, "year": start + t, "label": v})
    return ds.LabelSet("positive-revenue", pd.DataFrame(rows))


def test_classify_patterns_examples():
    out = frame_for({"a": [1, 1, 1], "b": [0, 0, 0], "c": [0, 1, 1], "d": [1, 1, 0], "e": [1, 0, 1]})
    out = ds.classify_patterns(out).set_index("firm_id")
    assert out.loc["a", "category"] == "constant_exporter"
    assert out.loc["b", "category"] == "non_exporter"
    assert out.loc["c", "category"] == "switching_exporter" and out.loc["c", "start_year"] == 2011
    assert out.loc["d", "category"] == "switching_non_exporter" and out.loc["d", "stop_year"] == 2011
    assert out.loc["e", "category"] == "discontinuous"


def test_bm_classes():
    out = ds.classify_patterns(frame_for({"p": [1, 1, 1, 1, 0], "t": [1, 1, 1, 0, 1], "n": [0] * 5}))
    assert dict(zip(out.firm_id, out.bm_class)) == {"n": "never", "p": "permanent", "t": "temporary"}


def test_incomplete_timeline_rejected():
    ls = frame_for({"a": [1, 1, 1]})
    ls = ds.LabelSet("x", pd.concat([ls.frame, pd.DataFrame({"firm_id": ["b"], "year": [2010], "label": [1]})]))
    with pytest.raises(IncompleteTimelineError):
        ds.classify_patterns(ls)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=10))
def test_classify_sequence_counts_changes(seq):
    out = ds.classify_sequence(seq, list(range(len(seq))))
    changes = sum(a != b for a, b in zip(seq, seq[1:]))
    assert out["changes"] == changes
    assert (out["category"] == "discontinuous") == (changes >= 2)
    assert out["export_years"] == sum(seq)


def test_label_definitions(small_panel):
    panel, _ = small_panel
    pos = ds.label(panel)
    assert set(np.unique(pos.labels)) <= {0, 1}
    strict = ds.label(panel, "share-threshold", 50)
    # a stricter definition never flags more firms
    assert strict.labels.sum() <= pos.labels.sum()
    with pytest.raises(ParameterError):
        ds.label(panel, "share-threshold", 100)


def test_nearest_rank_percentile():
    assert ds.nearest_rank_percentile([1, 2, 3, 4], 50) == 2
    assert ds.nearest_rank_percentile([1, 2, 3, 4], 51) == 3


@given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_partition_disjoint_and_sized(n, fraction, seed):
    frame = pd.DataFrame({"firm_id": [f"f{i}" for i in range(n)], "year": 2010, "a": 0.0, "b": 0.0,
                          "region": "R", "industry": "10", "export_revenue": 0.0, "total_revenue": 1.0})
    s = tiny_schema()
    panel = ds.FirmPanel(frame, s, s.predictors)
    part = ds.partition(panel, fraction, seed)
    assert not (part.train_firm_ids & part.test_firm_ids)
    assert len(part.train_firm_ids) + len(part.test_firm_ids) == n
    assert len(part.train_firm_ids) == round(fraction * n)
    assert part == ds.partition(panel, fraction, seed)
