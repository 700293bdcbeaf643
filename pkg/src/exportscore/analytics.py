"""Regional concentration of high-potential non-exporters and VIP summaries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import ParameterError, SchemaError


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return float("nan")
    return float(v[(v.size - 1) // 2])


@dataclass(frozen=True)
class PotentialSet:
    """Non-exporting firms with their score and membership in the potential set.

    ``frame`` has one row per non-exporting firm (or firm-year when not
    collapsed) with columns firm_id, year, score, potential.
    """

    frame: pd.DataFrame
    median: float

    @property
    def firms(self) -> set:
        return set(self.frame.loc[self.frame["potential"], "firm_id"].tolist())


def latest_year(scores: pd.DataFrame) -> pd.DataFrame:
    idx = scores.groupby("firm_id", sort=True)["year"].idxmax()
    return scores.loc[idx.to_numpy()].reset_index(drop=True)


def potential_set(scores: pd.DataFrame, labels, collapse_latest: bool = True) -> PotentialSet:
    """Non-exporters whose score strictly exceeds the lower median of non-exporter scores.

    ``labels`` is a LabelSet or a frame with firm_id, year, label. With
    ``collapse_latest`` each firm is represented by its latest scored year,
    and a firm is a non-exporter when that year is labelled 0.
    """
    lab = labels.frame if hasattr(labels, "frame") else labels
    df = scores[["firm_id", "year", "score"]].merge(lab[["firm_id", "year", "label"]],
                                                    on=["firm_id", "year"], how="inner")
    if collapse_latest:
        df = latest_year(df)
    df = df[df["label"] == 0].drop(columns="label").reset_index(drop=True)
    med = lower_median(df["score"])
    df["potential"] = df["score"].to_numpy() > med
    return PotentialSet(df, med)


@dataclass(frozen=True)
class LocationQuotients:
    table: pd.DataFrame  # region, n_potential, n_firms, lq, ci_low, ci_high, significant
    n_potential: int
    n_firms: int
    reps: int
    seed: int
    level: float

    def weighted_mean(self) -> float:
        t = self.table.dropna(subset=["lq"])
        return float(np.sum(t["n_firms"] / self.n_firms * t["lq"]))


def _lq(p_j, i_j, p_tot, i_tot):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (p_j / i_j) / (p_tot / i_tot)
    return np.where(i_j > 0, out, np.nan)


def location_quotients(potential, regions, region_levels=None, reps: int = 1000, seed: int = 0,
                       level: float = 0.90, chunk: int = 100) -> LocationQuotients:
    """LQ_j = (#P_j/#I_j)/(#P/#I) with a firm-level bootstrap interval.

    ``potential`` is a boolean array over the non-exporters (or a
    PotentialSet) and ``regions`` their region codes in the same order (or a
    mapping firm_id -> region when a PotentialSet is given). Each replicate
    resamples the national pool with replacement and recomputes every
    quotient; a region is significant when the interval excludes 1.
    """
    if isinstance(potential, PotentialSet):
        fr = potential.frame
        if isinstance(regions, (dict, pd.Series)):
            regions = pd.Series(regions).reindex(fr["firm_id"]).to_numpy(dtype=object)
        flag = fr["potential"].to_numpy(bool)
    else:
        flag = np.asarray(potential, bool)
    regions = np.asarray(regions, dtype=object)
    if regions.shape != flag.shape:
        raise SchemaError("region codes do not cover every non-exporter")
    if pd.isna(regions).any():
        raise SchemaError("every non-exporter needs a region")
    if not (0 < level < 1):
        raise ParameterError(f"level must lie in (0, 1), got {level!r}")
    present = sorted(set(regions.tolist()), key=str)
    levels = list(region_levels) if region_levels is not None else present
    extra = [r for r in present if r not in levels]
    if extra:
        raise SchemaError(f"region {extra[0]!r} not among the declared regions")
    code = pd.Index(levels).get_indexer(regions)
    k = len(levels)
    n = len(flag)
    i_j = np.bincount(code, minlength=k).astype(float)
    p_j = np.bincount(code, weights=flag.astype(float), minlength=k)
    p_tot, i_tot = flag.sum(), n
    lq = _lq(p_j, i_j, p_tot, i_tot)

    lo = np.full(k, np.nan)
    hi = np.full(k, np.nan)
    if reps > 0 and n > 0:
        rng = np.random.default_rng(seed)
        boot = np.empty((reps, k))
        for s in range(0, reps, chunk):
            m = min(chunk, reps - s)
            draw = rng.integers(0, n, size=(m, n))
            c = code[draw]
            f = flag[draw]
            offs = (np.arange(m)[:, None] * k + c).ravel()
            bi = np.bincount(offs, minlength=m * k).reshape(m, k).astype(float)
            bp = np.bincount(offs, weights=f.ravel().astype(float), minlength=m * k).reshape(m, k)
            bt = f.sum(axis=1, keepdims=True).astype(float)
            with np.errstate(divide="ignore", invalid="ignore"):
                boot[s:s + m] = np.where(bi > 0, (bp / bi) / (bt / n), np.nan)
        alpha = (1 - level) / 2
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo = np.nanpercentile(boot, 100 * alpha, axis=0)
            hi = np.nanpercentile(boot, 100 * (1 - alpha), axis=0)
        lo = np.where(i_j > 0, lo, np.nan)
        hi = np.where(i_j > 0, hi, np.nan)
    sig = (lo > 1) | (hi < 1)
    table = pd.DataFrame({
        "region": levels,
        "n_potential": p_j.astype(int),
        "n_firms": i_j.astype(int),
        "lq": lq,
        "ci_low": lo,
        "ci_high": hi,
        "significant": sig,
    })
    return LocationQuotients(table, int(p_tot), int(i_tot), reps, seed, level)


def aggregate_scores(scores: pd.DataFrame, group_key: str, national_median: float | None = None,
                     potential: np.ndarray | None = None) -> pd.DataFrame:
    """Boxplot statistics per group plus two shares of above-median firms.

    ``within_group_share`` is the fraction of the group's rows above the
    national median; ``share_of_national`` is the group's fraction of all
    above-median rows across groups. The national median defaults to the
    lower median of all scores given.
    """
    if group_key not in scores.columns:
        raise SchemaError(f"scores lack group column {group_key!r}")
    if scores[group_key].isna().any():
        raise SchemaError(f"group column {group_key!r} has missing values")
    s = scores["score"].to_numpy(dtype=float)
    med = lower_median(s) if national_median is None else national_median
    above = s > med if potential is None else np.asarray(potential, bool)
    total_above = above.sum()
    rows = []
    g = scores[group_key].astype(str).to_numpy()
    for key in sorted(set(g.tolist())):
        sel = g == key
        v = s[sel]
        q1, q2, q3 = np.percentile(v, [25, 50, 75])
        rows.append({
            group_key: key,
            "count": int(sel.sum()),
            "min": float(v.min()),
            "q1": float(q1),
            "median": float(q2),
            "q3": float(q3),
            "max": float(v.max()),
            "within_group_share": float(above[sel].mean()),
            "share_of_national": float(above[sel].sum() / total_above) if total_above else float("nan"),
        })
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class VipSummary:
    table: pd.DataFrame  # predictor, mean, sd (descending mean)
    replications: int
    proportions: np.ndarray  # (replications, p)

    def above(self, threshold: float = 0.01) -> pd.DataFrame:
        return self.table[self.table["mean"] >= threshold].reset_index(drop=True)


def summarize_vip(proportions, predictors) -> VipSummary:
    P = np.atleast_2d(np.asarray(proportions, float))
    r = P.shape[0]
    sd = P.std(axis=0, ddof=1) if r > 1 else np.zeros(P.shape[1])
    t = pd.DataFrame({"predictor": list(predictors), "mean": P.mean(axis=0), "sd": sd})
    t = t.sort_values(["mean", "predictor"], ascending=[False, True], kind="mergesort")
    return VipSummary(t.reset_index(drop=True), r, P)


def replication_seeds(master: int, replications: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(replications)]


def vip_replicate(rows, labels, config=None, replications: int = 5, seeds=None,
                  predictor_names=None) -> VipSummary:
    """Refit BART-MIA on the same rows once per seed and summarize inclusion proportions.

    Seeds default to children of ``config.seed`` via ``SeedSequence.spawn``.
    """
    from . import bart

    config = config or bart.BartConfig()
    if seeds is None:
        if replications < 2:
            raise ParameterError("vip_replicate needs at least two replications")
        seeds = replication_seeds(config.seed, replications)
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ParameterError("vip_replicate needs at least two replications")
    props, names = [], None
    for sd in seeds:
        m = bart.fit(rows, labels, replace(config, seed=int(sd)), predictor_names)
        v = bart.vip(m)
        names = list(v)
        props.append([v[n] for n in names])
    return summarize_vip(props, names)
