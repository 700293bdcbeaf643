"""From probabilities to risk classes and the trade-credit premia regression.

Fits a quick BART-MIA model, converts its predictions into scores, distances
and ten risk classes, then regresses log cash holdings on the classes with
year, industry and region effects and firm-clustered errors.
"""

import pandas as pd

from exportscore import dataset as ds, models, scoring, synth


def main(seed=1):
    raw, _ = synth.generate(synth.GeneratorSpec(n_firms=300, seed=seed))
    panel = ds.derive_predictors(raw)
    labels = ds.label(panel)
    y = labels.align(panel)
    m = models.fit_model("bart-mia", panel, y, {"q": 30, "burn_in": 100, "post_burn": 300}, seed=seed)
    table = scoring.score(pd.DataFrame({"firm_id": panel.firm_id, "year": panel.year,
                                         "score": models.predict_model(m, panel)}))
    print(table.head())
    print(table["risk_class"].value_counts().sort_index().to_string())

    pm = scoring.fit_premia(panel, table, "cash")
    print(f"\n{pm.n_obs} rows in {pm.n_clusters} firm clusters, dropped {pm.dropped}")
    print(scoring.premia_table(pm).round(3).to_string(index=False))

    # the same arithmetic from published coefficients
    fixed = scoring.PremiaModel.from_coefficients("cash", 11.6338, {5: 0.6797, 10: 1.0459})
    print(scoring.premia_table(fixed).round(3).to_string(index=False))


if __name__ == "__main__":
    main()
