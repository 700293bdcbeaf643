"""Classifier accuracy measures and the evaluation harness.

Threshold measures follow the confusion-matrix conventions: a row is
predicted positive when its score is strictly above the threshold, and a
measure whose denominator is zero is reported as ``None`` rather than 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import AlignmentError, UndefinedMetricError

REPORT_COLUMNS = ["model", "group", "fold", "specificity", "sensitivity",
                  "balanced_accuracy", "auc", "pr", "n_obs", "threshold", "tp", "fp", "fn", "tn"]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    sensitivity: float | None
    specificity: float | None
    balanced_accuracy: float | None
    roc_auc: float | None = None
    pr_auc: float | None = None
    threshold: float = 0.5
    n_obs: int = 0
    counts: ConfusionCounts | None = None

    def row(self, **meta) -> dict:
        c = self.counts or ConfusionCounts(0, 0, 0, 0)
        out = dict(meta)
        out.update(specificity=self.specificity, sensitivity=self.sensitivity,
                   balanced_accuracy=self.balanced_accuracy, auc=self.roc_auc, pr=self.pr_auc,
                   n_obs=self.n_obs, threshold=self.threshold,
                   tp=c.tp, fp=c.fp, fn=c.fn, tn=c.tn)
        return out


def _aligned(scores, labels):
    if isinstance(scores, pd.Series) and isinstance(labels, pd.Series):
        if not scores.index.equals(labels.index):
            raise AlignmentError("scores and labels are keyed differently")
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise AlignmentError(f"{s.shape[0]} scores but {y.shape[0]} labels")
    return s, y.astype(int)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    s, y = _aligned(scores, labels)
    pred = s > threshold
    pos = y == 1
    return ConfusionCounts(int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
                           int(np.sum(~pred & pos)), int(np.sum(~pred & ~pos)))


def accuracy_measures(counts: ConfusionCounts) -> MetricsReport:
    """Sensitivity tp/(tp+fn), specificity tn/(tn+fp) and their mean."""
    sens = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else None
    spec = counts.tn / (counts.tn + counts.fp) if counts.tn + counts.fp else None
    bacc = (sens + spec) / 2 if sens is not None and spec is not None else None
    return MetricsReport(sens, spec, bacc, n_obs=counts.n, counts=counts)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney concordance (ties count one half)."""
    s, y = _aligned(scores, labels)
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("ROC AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2
    return float(u / (n1 * n0))


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve, step interpolated.

    Thresholds run through the distinct scores from high to low; each recall
    increment is weighted by the precision reached at that threshold.
    """
    s, y = _aligned(scores, labels)
    n1 = int(np.sum(y == 1))
    if n1 == 0:
        raise UndefinedMetricError("PR AUC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # keep the last position of each run of tied scores
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n1
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def spearman(a, b) -> float:
    """Pearson correlation of mid-ranks."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise AlignmentError("score vectors differ in length")
    if len(a) < 2:
        raise UndefinedMetricError("Spearman correlation needs at least two rows")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = np.sqrt((ra @ ra) * (rb @ rb))
    if den == 0:
        raise UndefinedMetricError("Spearman correlation undefined for a constant vector")
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Threshold measures plus both curve areas, each left absent when undefined."""
    s, y = _aligned(scores, labels)
    counts = confusion(s, y, threshold)
    base = accuracy_measures(counts)
    n1 = int(np.sum(y == 1))
    auc = roc_auc(s, y) if 0 < n1 < len(y) else None
    pr = pr_auc(s, y) if n1 > 0 else None
    return MetricsReport(base.sensitivity, base.specificity, base.balanced_accuracy,
                         auc, pr, threshold, counts.n, counts)


def evaluate_by_group(scores, labels, groups, threshold: float = 0.5) -> dict:
    """One report per distinct value of ``groups``; single-outcome groups keep only the defined measure."""
    s, y = _aligned(scores, labels)
    g = np.asarray(groups, dtype=object)
    if g.shape != s.shape:
        raise AlignmentError("grouping does not cover every scored row")
    out = {}
    for key in sorted(set(g.tolist()), key=str):
        sel = g == key
        out[key] = evaluate(s[sel], y[sel], threshold)
    return out


def reports_frame(rows: Sequence[dict]) -> pd.DataFrame:
    df = pd.DataFrame(list(rows))
    for c in REPORT_COLUMNS:
        if c not in df.columns:
            df[c] = None
    return df[REPORT_COLUMNS]


def spearman_matrix(score_sets: Mapping[str, np.ndarray]) -> pd.DataFrame:
    """Pairwise rank correlations on the rows where every model has a score."""
    names = list(score_sets)
    M = np.column_stack([np.asarray(score_sets[n], float) for n in names])
    common = ~np.isnan(M).any(axis=1)
    M = M[common]
    out = np.eye(len(names))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            out[i, j] = out[j, i] = spearman(M[:, i], M[:, j])
    df = pd.DataFrame(out, index=names, columns=names)
    df.attrs["n_obs"] = int(common.sum())
    return df


# ---------------------------------------------------------------------------
# harness
#
# ``fit_predict(train_panel, train_labels, test_panel) -> scores`` wraps any
# model; NaN scores mark rows the model cannot score (incomplete cases).


def _scored(panel, labels_set, scores):
    y = labels_set.align(panel)
    keep = (y >= 0) & ~np.isnan(scores)
    return scores[keep], y[keep], keep


def holdout_report(panel, labels_set, fit_predict: Callable, fraction=0.8, seed=0,
                   threshold=0.5, model="model", group="all", fold=0):
    from .dataset import partition

    part = partition(panel, fraction, seed)
    train, test = part.split(panel)
    y_tr = labels_set.align(train)
    train = train.take(y_tr >= 0)
    y_tr = y_tr[y_tr >= 0]
    scores = np.asarray(fit_predict(train, y_tr, test), float)
    s, y, _ = _scored(test, labels_set, scores)
    return evaluate(s, y, threshold).row(model=model, group=group, fold=fold)


def cross_validate(panel, labels_set, fit_predict, seeds: Sequence[int], fraction=0.8,
                   threshold=0.5, model="model") -> pd.DataFrame:
    """Repeated random firm-level splits, one report row per seed."""
    rows = [holdout_report(panel, labels_set, fit_predict, fraction, sd, threshold, model, "all", k)
            for k, sd in enumerate(seeds)]
    return reports_frame(rows)


def per_year(panel, labels_set, fit_predict, fraction=0.8, seed=0, threshold=0.5,
             model="model") -> pd.DataFrame:
    """Train and test separately within each year."""
    rows = []
    for yr in panel.years:
        sub = panel.take(panel.year == yr)
        rows.append(holdout_report(sub, labels_set, fit_predict, fraction, seed, threshold,
                                   model, f"year:{yr}", 0))
    return reports_frame(rows)


def by_definition(panel, definitions: Sequence[tuple], fit_predict, fraction=0.8, seed=0,
                  threshold=0.5, model="model") -> pd.DataFrame:
    """Repeat the holdout under alternative exporter definitions, e.g. ``("share-threshold", 5)``."""
    from .dataset import label

    rows = []
    for definition, pct in definitions:
        ls = label(panel, definition, pct)
        name = definition if pct is None else f"{definition}:{pct:g}"
        rows.append(holdout_report(panel, ls, fit_predict, fraction, seed, threshold, model, name, 0))
    return reports_frame(rows)


def grouped_report(scores, labels, groups, threshold=0.5, model="model", fold=0) -> pd.DataFrame:
    reports = evaluate_by_group(scores, labels, groups, threshold)
    return reports_frame([r.row(model=model, group=k, fold=fold) for k, r in reports.items()])


def report_dict(report: MetricsReport) -> dict:
    out = asdict(report)
    out.pop("counts", None)
    return out
