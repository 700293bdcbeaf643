"""Where are the high-potential non-exporters?

Scores a panel, keeps non-exporters in their latest year, marks those above
the median score, and reports location quotients with bootstrap intervals
plus per-region score summaries.
"""

import pandas as pd

from exportscore import analytics, bart, dataset as ds, models, scoring, synth


def main(seed=2):
    raw, _ = synth.generate(synth.GeneratorSpec(n_firms=600, n_regions=8, seed=seed))
    panel = ds.derive_predictors(raw)
    labels = ds.label(panel)
    m = models.fit_model("bart-mia", panel, labels.align(panel),
                         {"q": 30, "burn_in": 100, "post_burn": 300}, seed=seed)
    table = scoring.score(pd.DataFrame({"firm_id": panel.firm_id, "year": panel.year,
                                         "score": models.predict_model(m, panel)}))

    pot = analytics.potential_set(table, labels)
    print(f"{len(pot.frame)} non-exporters, median score {pot.median:.3f}, {len(pot.firms)} above it")
    region = panel.frame.drop_duplicates("firm_id", keep="last").set_index("firm_id")["region"]
    lq = analytics.location_quotients(pot, region, reps=500, seed=seed)
    print(lq.table.round(3).to_string(index=False))
    print(f"firm-weighted mean LQ {lq.weighted_mean():.12f}")

    fr = pot.frame.assign(region=region.reindex(pot.frame["firm_id"]).to_numpy())
    summary = analytics.aggregate_scores(fr, "region", pot.median, fr["potential"].to_numpy())
    with pd.option_context("display.width", 120):
        print(summary.round(3))

    v = bart.vip(m)
    top = sorted(v.items(), key=lambda kv: -kv[1])[:8]
    print("most used predictors:", ", ".join(f"{k} {w:.3f}" for k, w in top))


if __name__ == "__main__":
    main()
