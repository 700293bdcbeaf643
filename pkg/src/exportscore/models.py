"""Uniform fit / predict / persist over every model kind.

Model documents are versioned JSON objects with a ``model_kind``
discriminator: ``bart-mia`` and ``bart`` (sum-of-trees), ``logit``,
``lasso-logit``, ``cart`` and ``forest``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import bart, baselines
from .errors import ParameterError, SchemaError

KINDS = ("bart-mia", "bart", "logit", "lasso-logit", "cart", "forest")
FORMAT = "exportscore-model"
VERSION = 1


def fit_model(kind: str, rows, labels, params: dict | None = None, seed: int = 0,
              predictor_names=None, complete_cases: bool = False):
    """Fit ``kind`` with hyperparameters ``params``.

    ``complete_cases`` drops rows with any missing predictor before fitting;
    the non-tree-sampler baselines always do.
    """
    params = dict(params or {})
    if kind not in KINDS:
        raise ParameterError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    X, names = baselines._design(rows, predictor_names)
    y = np.asarray(labels)
    if complete_cases:
        keep = ~np.isnan(X).any(axis=1)
        X, y = X[keep], y[keep]
    if kind in ("bart-mia", "bart"):
        cfg = bart.BartConfig.from_dict({**params, "seed": seed, "mia_enabled": kind == "bart-mia"})
        return bart.fit(X, y, cfg, names)
    if kind == "logit":
        return baselines.fit_logit(X, y, names, **params)
    if kind == "lasso-logit":
        return baselines.fit_lasso_logit(X, y, baselines.LassoConfig(**params), names)[0]
    if kind == "cart":
        return baselines.fit_cart(X, y, names, seed=seed, **params)
    return baselines.fit_forest(X, y, predictor_names=names, seed=seed, **params)


def model_kind(model) -> str:
    if isinstance(model, bart.BartModel):
        return "bart-mia" if model.config.mia_enabled else "bart"
    return model.kind


def predictors(model) -> tuple:
    return tuple(model.predictors)


def predict_model(model, rows) -> np.ndarray:
    """Probability per row; NaN where a complete-case model meets a missing cell.

    A sum-of-trees model fitted without missingness splits also returns NaN
    on incomplete rows rather than failing.
    """
    if isinstance(model, bart.BartModel):
        X = rows.matrix(model.predictors) if hasattr(rows, "matrix") else np.asarray(rows, float)
        if model.config.mia_enabled:
            return bart.predict(model, X, model.predictors)
        out = np.full(X.shape[0], np.nan)
        keep = ~np.isnan(X).any(axis=1)
        if keep.any():
            out[keep] = bart.predict(model, X[keep], model.predictors)
        return out
    return model.predict(rows)


def to_document(model, extra: dict | None = None) -> dict:
    if isinstance(model, bart.BartModel):
        doc = bart.to_document(model)
    else:
        doc = {"format": FORMAT, "version": VERSION, "model_kind": model.kind,
               "predictors": list(model.predictors)}
        if model.kind in ("logit", "lasso-logit"):
            doc.update(intercept=model.intercept, coef=model.coef.tolist(), status=model.status,
                       n_iter=model.n_iter, n_obs=model.n_obs, n_dropped=model.n_dropped,
                       loglik=model.loglik, extra=model.extra)
        elif model.kind == "cart":
            doc.update(tree=model.tree.to_dict(), ccp_alpha=model.ccp_alpha, n_obs=model.n_obs,
                       n_dropped=model.n_dropped, cv=model.cv)
        else:
            doc.update(mtry=model.mtry, tree_seeds=model.tree_seeds, oob_accuracy=model.oob_accuracy,
                       bootstrap=model.bootstrap, n_obs=model.n_obs, n_dropped=model.n_dropped,
                       trees=[t.to_dict() for t in model.trees])
    if extra:
        doc["training"] = extra
    return doc


def from_document(doc: dict):
    if doc.get("format") != FORMAT:
        raise SchemaError("not a model document")
    if doc.get("version") != VERSION:
        raise SchemaError(f"unsupported model document version {doc.get('version')!r}")
    kind = doc.get("model_kind")
    if kind in ("bart-mia", "bart"):
        return bart.from_document(doc)
    names = tuple(doc["predictors"])
    if kind in ("logit", "lasso-logit"):
        return baselines.LogitModel(names, doc["intercept"], np.asarray(doc["coef"], float),
                                    doc["status"], doc["n_iter"], doc["n_obs"], doc["n_dropped"],
                                    doc["loglik"], kind, doc.get("extra", {}))
    if kind == "cart":
        return baselines.CartModel(names, baselines.TreeArrays.from_dict(doc["tree"]), doc["ccp_alpha"],
                                   doc["n_obs"], doc["n_dropped"], doc.get("cv", {}))
    if kind == "forest":
        return baselines.ForestModel(names, [baselines.TreeArrays.from_dict(t) for t in doc["trees"]],
                                     doc["mtry"], doc["tree_seeds"], doc["oob_accuracy"], doc["bootstrap"],
                                     doc["n_obs"], doc["n_dropped"])
    raise SchemaError(f"unknown model_kind {kind!r}")


def save(model, path, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_document(model, extra), fh, separators=(",", ":"))
        fh.write("\n")


def load(path):
    with open(Path(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    return from_document(doc), doc.get("training", {})
