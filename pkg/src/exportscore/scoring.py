"""Exporting scores, distances, risk classes and the premia regression.

A firm's distance to export status is the complement of its exporting
score. Scores are binned into ten classes of width 0.1 (left-closed, the top
bin closed) and the classes enter a log-linear regression of firm resources
with year, industry and region fixed effects and firm-clustered errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import CollinearityError, ParameterError, SchemaError

N_CLASSES = 10
_GRID = 2.0**53


def quantize(score):
    """Snap scores to multiples of 2**-53 so that ``1 - score`` is exact.

    On that grid both ``score + (1 - score) == 1`` and ``1 - (1 - score) == score``
    hold in floating point; the shift is below 1e-16.
    """
    s = np.asarray(score, dtype=float)
    return np.round(s * _GRID) / _GRID


def distance(score):
    return 1.0 - quantize(score)


def risk_class(score):
    """Class r covers [(r-1)/10, r/10); a score of exactly 1 falls in class 10."""
    s = np.asarray(score, dtype=float)
    # the rounding guards decimal edges such as 0.3 * 10 = 3.0000000000000004
    k = np.floor(np.round(s * N_CLASSES, 9)).astype(int) + 1
    return np.clip(k, 1, N_CLASSES)


def score(predictions: pd.DataFrame) -> pd.DataFrame:
    """ScoreTable from a prediction table with ``firm_id``, ``year`` and ``score``."""
    for c in ("firm_id", "year", "score"):
        if c not in predictions.columns:
            raise SchemaError(f"prediction table lacks column {c!r}")
    s = predictions["score"].to_numpy(dtype=float)
    bad = np.isnan(s) | (s < 0) | (s > 1)
    if bad.any():
        raise ParameterError(f"{int(bad.sum())} scores are missing or outside [0, 1]")
    q = quantize(s)
    return pd.DataFrame({
        "firm_id": predictions["firm_id"].to_numpy(),
        "year": predictions["year"].to_numpy(),
        "score": q,
        "distance": 1.0 - q,
        "risk_class": risk_class(q),
    })


# ---------------------------------------------------------------------------
# premia regression


@dataclass
class PremiaModel:
    outcome: str
    names: list
    coef: np.ndarray
    se: np.ndarray
    reference_class: int | None = 1
    n_obs: int = 0
    n_clusters: int = 0
    dropped: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coef = np.asarray(self.coef, float)
        self.se = np.asarray(self.se, float)

    def __getitem__(self, name):
        return float(self.coef[self.names.index(name)])

    def standard_error(self, name):
        return float(self.se[self.names.index(name)])

    @property
    def intercept(self) -> float:
        return self["const"]

    @property
    def theta(self) -> dict:
        """Risk-class effects keyed by class; the reference class is 0."""
        out = {}
        if self.reference_class is not None:
            out[self.reference_class] = 0.0
        for n, b in zip(self.names, self.coef):
            if n.startswith("risk_"):
                out[int(n[5:])] = float(b)
        return dict(sorted(out.items()))

    @classmethod
    def from_coefficients(cls, outcome: str, intercept: float, theta: dict, reference_class: int = 1):
        names = ["const"] + [f"risk_{r}" for r in sorted(theta)]
        coef = [intercept] + [theta[r] for r in sorted(theta)]
        return cls(outcome, names, np.array(coef), np.full(len(names), np.nan), reference_class)

    def to_document(self) -> dict:
        return {
            "format": "exportscore-premia",
            "version": 1,
            "outcome": self.outcome,
            "reference_class": self.reference_class,
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "dropped": self.dropped,
            "coefficients": {n: {"coef": float(b), "se": float(s)}
                             for n, b, s in zip(self.names, self.coef, self.se)},
        }

    @classmethod
    def from_document(cls, doc: dict) -> "PremiaModel":
        names = list(doc["coefficients"])
        return cls(doc["outcome"], names,
                   np.array([doc["coefficients"][n]["coef"] for n in names]),
                   np.array([doc["coefficients"][n]["se"] for n in names]),
                   doc.get("reference_class"), doc.get("n_obs", 0), doc.get("n_clusters", 0),
                   doc.get("dropped", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2, sort_keys=False)


def _dummies(values, prefix, levels=None):
    v = np.asarray(values, dtype=object)
    if levels is None:
        levels = sorted(set(v.tolist()), key=str)
    cols = [f"{prefix}_{lv}" for lv in levels[1:]]
    M = np.column_stack([(v == lv).astype(float) for lv in levels[1:]]) if len(levels) > 1 \
        else np.zeros((len(v), 0))
    return M, cols, levels[0] if levels else None


def ols(X, y):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def cluster_covariance(X, resid, clusters, bread=None):
    """CR1 sandwich: G/(G-1) * (N-1)/(N-K) scaling of the cluster-summed scores."""
    n, k = X.shape
    codes, uniq = pd.factorize(pd.Series(clusters, dtype=object), sort=True)
    g = len(uniq)
    if g < 2:
        raise ParameterError("clustered errors need at least two clusters")
    scores = np.zeros((g, k))
    np.add.at(scores, codes, X * resid[:, None])
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    meat = scores.T @ scores
    factor = g / (g - 1) * (n - 1) / (n - k)
    return factor * bread @ meat @ bread


def _check_rank(blocks):
    """Add blocks in order; name the first that makes the design rank deficient."""
    cols = []
    for name, M in blocks:
        if M.shape[1] == 0:
            continue
        cols.append(M)
        A = np.column_stack(cols)
        if np.linalg.matrix_rank(A) < A.shape[1]:
            raise CollinearityError(f"design is rank deficient in the {name!r} dummy block")


def fit_premia(panel, scores: pd.DataFrame, outcome: str, size_column: str = "employees",
               industry_column: str = "industry", region_column: str = "region",
               include: str = "all", labels=None) -> PremiaModel:
    """Regress log ``outcome`` on risk-class, year, industry and region dummies plus log size.

    ``panel`` is a FirmPanel or a frame with firm_id, year and the named
    columns. Rows with a non-positive or missing outcome or size, or a
    missing category, are dropped and counted in ``dropped``. With
    ``include="non_exporters"`` only rows labelled 0 in ``labels`` (a LabelSet)
    enter. The reference class is class 1, or the lowest class present.
    """
    frame = panel.frame if hasattr(panel, "frame") else panel
    for c in ("firm_id", "year", outcome, size_column, industry_column, region_column):
        if c not in frame.columns:
            raise SchemaError(f"premia input lacks column {c!r}")
    df = frame[["firm_id", "year", outcome, size_column, industry_column, region_column]].merge(
        scores[["firm_id", "year", "risk_class"]], on=["firm_id", "year"], how="inner")
    if include not in ("all", "non_exporters"):
        raise ParameterError(f"include must be 'all' or 'non_exporters', got {include!r}")
    if include == "non_exporters":
        if labels is None:
            raise ParameterError("include='non_exporters' needs labels")
        df = df.merge(labels.frame, on=["firm_id", "year"], how="inner")
        df = df[df["label"] == 0]

    dropped = {}
    y = df[outcome].to_numpy(dtype=float)
    size = df[size_column].to_numpy(dtype=float)
    bad = np.isnan(y)
    dropped["missing_outcome"] = int(bad.sum())
    bad |= y <= 0
    dropped["non_positive_outcome"] = int(bad.sum()) - dropped["missing_outcome"]
    bad_size = ~bad & np.isnan(size)
    dropped["missing_size"] = int(bad_size.sum())
    bad_size |= ~bad & (size <= 0)
    dropped["non_positive_size"] = int(bad_size.sum()) - dropped["missing_size"]
    cat_na = ~bad & ~bad_size & (df[industry_column].isna() | df[region_column].isna()).to_numpy()
    dropped["missing_category"] = int(cat_na.sum())
    df = df[~(bad | bad_size | cat_na)]
    if len(df) == 0:
        raise ParameterError("no rows left for the premia regression")

    classes = sorted(set(df["risk_class"].tolist()))
    ref = 1 if 1 in classes else classes[0]
    risk, risk_names, _ = _dummies(df["risk_class"].to_numpy(), "risk", [ref] + [c for c in classes if c != ref])
    years, year_names, _ = _dummies(df["year"].to_numpy(), "year",
                                    sorted(set(df["year"].tolist())))
    ind, ind_names, _ = _dummies(df[industry_column].astype(str).to_numpy(), "industry")
    reg, reg_names, _ = _dummies(df[region_column].astype(str).to_numpy(), "region")
    const = np.ones((len(df), 1))
    logsize = np.log(df[size_column].to_numpy(dtype=float))[:, None]
    blocks = [("const", const), ("risk", risk), ("size", logsize), ("year", years),
              ("industry", ind), ("region", reg)]
    _check_rank(blocks)
    X = np.column_stack([b for _, b in blocks])
    names = ["const"] + risk_names + ["log_size"] + year_names + ind_names + reg_names
    logy = np.log(df[outcome].to_numpy(dtype=float))
    if len(logy) <= X.shape[1]:
        raise CollinearityError("fewer rows than regressors")
    beta = ols(X, logy)
    resid = logy - X @ beta
    V = cluster_covariance(X, resid, df["firm_id"].to_numpy())
    se = np.sqrt(np.clip(np.diag(V), 0, None))
    spans, i = {}, 0
    for name, b in blocks:
        spans[name] = (i, i + b.shape[1])
        i += b.shape[1]
    return PremiaModel(outcome, names, beta, se, ref,
                       len(df), int(df["firm_id"].nunique()), dropped, spans)


def premia_gap(model: PremiaModel, r: int, s: int) -> float:
    """Relative difference level(s)/level(r) - 1."""
    th = model.theta
    return float(np.exp(th[s] - th[r]) - 1.0)


def premia_table(model: PremiaModel) -> pd.DataFrame:
    """Euro level per present class with gaps from the reference class and from the class below."""
    th = model.theta
    b0 = model.intercept
    rows = []
    prev = None
    for r, t in th.items():
        level = float(np.exp(b0 + t))
        rows.append({
            "outcome": model.outcome,
            "risk_class": r,
            "theta": t,
            "level": level,
            "gap_from_reference": float(np.expm1(t)),
            "gap_from_previous": None if prev is None else float(np.exp(t - th[prev]) - 1.0),
        })
        prev = r
    return pd.DataFrame(rows)
