"""Firm-year panels: ingestion, derived predictors, export labels, patterns and splits.

A :class:`FirmPanel` wraps a pandas frame holding one row per (firm, year).
Numeric cells that are absent are stored as NaN, so the missingness mask is
always ``isnan`` of the predictor block and can never drift out of sync with
the values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKeyError,
    IncompleteTimelineError,
    ParameterError,
    ParseError,
    SchemaError,
)

# Original financial accounts, in euro.
ACCOUNTS = (
    "value_added", "depreciation", "creditors", "current_assets",
    "current_liabilities", "non_current_liabilities", "current_ratio",
    "debtors", "operating_revenue", "material_costs", "costs_of_employees",
    "taxation", "financial_revenues", "financial_expenses", "interest_paid",
    "employees", "cash_flow", "ebitda", "total_assets", "fixed_assets",
    "intangible_fixed_assets", "tangible_fixed_assets", "shareholders_funds",
    "long_term_debt", "loans", "sales", "solvency_ratio", "working_capital",
)
FLAGS = ("corporate_control", "patents", "consolidated_accounts", "inward_fdi", "outward_fdi")
# Estimated upstream (production-function TFP, firm markups); read as plain inputs.
PRECOMPUTED = ("tfp", "markup")
# Inputs that are not predictors: feeds for derived predictors, plus cash
# holdings used only as a premia outcome.
AUXILIARY = ("ebit", "stocks", "incorporation_year", "cash")
DERIVED = (
    "age", "productive_capacity", "capital_intensity", "labour_productivity",
    "icr", "financial_constraints", "roa", "financial_sustainability",
    "size_age", "capital_adequacy", "liquidity_ratio", "liquidity_returns",
    "regional_spillover", "industrial_spillover", "external_scale", "size",
    "avg_wage_bill",
)
FINANCIAL_PREDICTORS = ACCOUNTS + FLAGS + PRECOMPUTED + DERIVED

NA_TOKENS = ("", "NA")


@dataclass(frozen=True)
class Schema:
    """Column declaration for a panel file.

    ``numeric`` lists every numeric column in the file; those also named in
    ``auxiliary`` feed derived predictors but are not predictors themselves.
    ``categorical`` maps each categorical column to its vocabulary, or to
    ``None`` when any code is accepted.
    """

    numeric: tuple[str, ...]
    categorical: Mapping[str, tuple[str, ...] | None] = field(
        default_factory=lambda: {"region": None, "industry": None}
    )
    auxiliary: tuple[str, ...] = ()
    id_column: str = "firm_id"
    year_column: str = "year"
    export_column: str = "export_revenue"
    revenue_column: str = "total_revenue"

    @property
    def predictors(self) -> tuple[str, ...]:
        return tuple(c for c in self.numeric if c not in self.auxiliary)

    @property
    def columns(self) -> tuple[str, ...]:
        return (
            (self.id_column, self.year_column)
            + tuple(self.numeric)
            + tuple(self.categorical)
            + (self.export_column, self.revenue_column)
        )

    def to_dict(self) -> dict:
        return {
            "numeric": list(self.numeric),
            "categorical": {k: (list(v) if v is not None else None) for k, v in self.categorical.items()},
            "auxiliary": list(self.auxiliary),
            "id_column": self.id_column,
            "year_column": self.year_column,
            "export_column": self.export_column,
            "revenue_column": self.revenue_column,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        known = {"numeric", "categorical", "auxiliary", "id_column", "year_column",
                 "export_column", "revenue_column"}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown schema key {sorted(unknown)[0]!r}")
        kw = dict(d)
        kw["numeric"] = tuple(kw["numeric"])
        kw["auxiliary"] = tuple(kw.get("auxiliary", ()))
        if "categorical" in kw:
            kw["categorical"] = {
                k: (tuple(str(x) for x in v) if v is not None else None)
                for k, v in kw["categorical"].items()
            }
        return cls(**kw)


def financial_schema(regions=None, industries=None) -> Schema:
    """Schema of raw financial accounts that :func:`derive_predictors` expands to 52 predictors."""
    return Schema(
        numeric=ACCOUNTS + FLAGS + PRECOMPUTED + AUXILIARY,
        categorical={"region": regions, "industry": industries},
        auxiliary=AUXILIARY,
    )


def generic_schema(names: Sequence[str], regions=None, industries=None) -> Schema:
    return Schema(numeric=tuple(names), categorical={"region": regions, "industry": industries})


@dataclass(frozen=True)
class FirmPanel:
    """Immutable firm-year table with an implicit missingness mask."""

    frame: pd.DataFrame
    schema: Schema
    predictors: tuple[str, ...]

    def __post_init__(self):
        s = self.schema
        keys = self.frame[[s.id_column, s.year_column]]
        dup = keys.duplicated()
        if dup.any():
            row = keys[dup].iloc[0]
            raise DuplicateKeyError(
                f"duplicate (firm, year) key ({row[s.id_column]}, {row[s.year_column]})"
            )
        for col, vocab in s.categorical.items():
            if vocab is None:
                continue
            vals = self.frame[col].dropna().astype(str)
            bad = ~vals.isin(vocab)
            if bad.any():
                raise SchemaError(f"code {vals[bad].iloc[0]!r} not in vocabulary of column {col!r}")

    def __len__(self):
        return len(self.frame)

    @property
    def firm_id(self) -> np.ndarray:
        return self.frame[self.schema.id_column].to_numpy()

    @property
    def year(self) -> np.ndarray:
        return self.frame[self.schema.year_column].to_numpy()

    @property
    def firms(self) -> np.ndarray:
        return np.unique(self.firm_id)

    @property
    def years(self) -> np.ndarray:
        return np.unique(self.year)

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Predictor block as a float array, NaN where a cell is absent."""
        names = self.predictors if names is None else tuple(names)
        missing = [n for n in names if n not in self.frame.columns]
        if missing:
            raise SchemaError(f"unknown predictor {missing[0]!r}")
        return self.frame[list(names)].to_numpy(dtype=float, copy=True)

    @property
    def mask(self) -> np.ndarray:
        return np.isnan(self.matrix())

    def complete_rows(self, names: Sequence[str] | None = None) -> np.ndarray:
        return ~np.isnan(self.matrix(names)).any(axis=1)

    def take(self, rows) -> "FirmPanel":
        """Sub-panel from a boolean mask or integer positions."""
        sub = self.frame.iloc[np.flatnonzero(rows) if np.asarray(rows).dtype == bool else rows]
        return FirmPanel(sub.reset_index(drop=True), self.schema, self.predictors)

    def select_firms(self, ids: Iterable) -> "FirmPanel":
        ids = np.asarray(list(ids), dtype=object)
        return self.take(np.isin(self.firm_id.astype(object), ids))

    def with_predictors(self, names: Sequence[str]) -> "FirmPanel":
        return FirmPanel(self.frame, self.schema, tuple(names))

    def keys(self) -> pd.MultiIndex:
        return pd.MultiIndex.from_arrays([self.firm_id, self.year], names=["firm_id", "year"])


def _leading_comment_lines(path: Path) -> int:
    n = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                n += 1
            else:
                break
    return n


def _is_number(text: str) -> bool:
    try:
        return not math.isnan(float(text))
    except ValueError:
        return False


def ingest_csv(path, schema: Schema) -> FirmPanel:
    """Read a comma-delimited panel file, checking it against ``schema``.

    Leading lines starting with ``#`` are treated as provenance comments.
    Empty cells and the literal ``NA`` mark a missing value.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    skip = _leading_comment_lines(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, skiprows=skip, encoding="utf-8")
    declared = schema.columns
    for col in raw.columns:
        if col not in declared:
            raise SchemaError(f"unknown column {col!r}")
    for col in declared:
        if col not in raw.columns:
            raise SchemaError(f"missing declared column {col!r}")

    out = {}
    out[schema.id_column] = raw[schema.id_column].astype(str).to_numpy()
    header_line = skip + 1
    for col in (schema.year_column,) + tuple(schema.numeric) + (schema.export_column, schema.revenue_column):
        text = raw[col]
        absent = text.isin(NA_TOKENS)
        filled = text.where(~absent, "nan").to_numpy(dtype=str)
        try:
            # numpy's string parsing is correctly rounded, so written floats read back exactly
            values = filled.astype(float)
        except ValueError:
            values = None
        if values is None or np.isnan(values[~absent.to_numpy()]).any():
            i = next(k for k, v in enumerate(filled) if not absent.iloc[k] and not _is_number(v))
            raise ParseError(
                f"non-numeric value {text.iloc[i]!r} in column {col!r} at row {i + 1} (line {header_line + i + 1})"
            )
        out[col] = values
    year = out[schema.year_column]
    if np.isnan(year).any() or (year != np.round(year)).any():
        raise ParseError(f"column {schema.year_column!r} must hold integer years")
    out[schema.year_column] = year.astype(int)
    for col in schema.categorical:
        text = raw[col]
        out[col] = text.where(~text.isin(NA_TOKENS), None).to_numpy(dtype=object)

    frame = pd.DataFrame({c: out[c] for c in declared})
    years = np.unique(frame[schema.year_column])
    if len(years) and len(years) != years[-1] - years[0] + 1:
        raise SchemaError(f"years do not form a contiguous range: {years.tolist()}")
    return FirmPanel(frame, schema, schema.predictors)


def write_csv(panel: FirmPanel, path, header_comment: str | None = None) -> None:
    """Write a panel back in the layout :func:`ingest_csv` reads (missing cells empty)."""
    cols = [c for c in panel.schema.columns if c in panel.frame.columns]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        panel.frame[cols].to_csv(fh, index=False, na_rep="", lineterminator="\n")


# ---------------------------------------------------------------------------
# derived predictors


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = np.isfinite(num) & np.isfinite(den) & (den != 0)
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=ok)
    return out


def _log(x):
    x = np.asarray(x, dtype=float)
    ok = np.isfinite(x) & (x > 0)
    out = np.full(x.shape, np.nan)
    np.log(x, out=out, where=ok)
    return out


def _group_share(flag, valid, keys: list[np.ndarray]) -> np.ndarray:
    """Share of ``flag`` among ``valid`` rows within each key cell, broadcast back to rows."""
    df = pd.DataFrame({f"k{i}": k for i, k in enumerate(keys)})
    df["num"] = np.where(valid, flag, 0).astype(float)
    df["den"] = valid.astype(float)
    key_cols = [f"k{i}" for i in range(len(keys))]
    g = df.groupby(key_cols, dropna=False)
    num = g["num"].transform("sum").to_numpy()
    den = g["den"].transform("sum").to_numpy()
    share = _ratio(num, den)
    # rows whose cell key is missing get no share
    for k in keys:
        share[pd.isna(k)] = np.nan
    return share


REQUIRED_BASE = (
    "fixed_assets", "depreciation", "incorporation_year", "employees", "value_added",
    "ebit", "interest_paid", "cash_flow", "ebitda", "total_assets",
    "financial_expenses", "operating_revenue", "shareholders_funds", "loans",
    "long_term_debt", "current_assets", "stocks", "current_liabilities",
    "costs_of_employees",
)


def size_age_index(total_assets, age):
    """Size-age index of financial constraints: -0.737 ln TA + 0.043 (ln TA)^2 - 0.040 age."""
    lta = _log(total_assets)
    return -0.737 * lta + 0.043 * lta**2 - 0.040 * np.asarray(age, dtype=float)


def derive_predictors(panel: FirmPanel) -> FirmPanel:
    """Append the derived predictors computed from raw accounts.

    A derived cell is NaN whenever one of its inputs is NaN, a denominator is
    zero, or a logarithm argument is not positive. Lagged inputs come from
    the same firm's previous calendar year; a firm's first year has no lag.
    Exporter shares use positive export revenue and ignore rows whose export
    revenue is unknown.
    """
    f = panel.frame
    missing = [c for c in REQUIRED_BASE if c not in f.columns]
    if missing:
        raise SchemaError(f"missing required base column {missing[0]!r}")
    s = panel.schema
    for c in ("region", "industry"):
        if c not in f.columns:
            raise SchemaError(f"missing required base column {c!r}")

    firm = f[s.id_column].to_numpy()
    year = f[s.year_column].to_numpy()
    col = lambda c: f[c].to_numpy(dtype=float)

    # previous-year values within firm
    prev = pd.DataFrame({"firm": firm, "year": year + 1,
                         "fa": col("fixed_assets"), "dep": col("depreciation")})
    cur = pd.DataFrame({"firm": firm, "year": year})
    lagged = cur.merge(prev, on=["firm", "year"], how="left")
    fa_lag = lagged["fa"].to_numpy(dtype=float)
    dep_lag = lagged["dep"].to_numpy(dtype=float)

    inc = col("incorporation_year")
    age = np.where(np.isnan(inc), np.nan, np.maximum(year - inc, 0.0))

    exp_rev = col(s.export_column)
    known = ~np.isnan(exp_rev)
    exporter = known & (exp_rev > 0)
    region = f["region"].to_numpy(dtype=object)
    industry = f["industry"].to_numpy(dtype=object)

    derived = {
        "age": age,
        "productive_capacity": _ratio(col("fixed_assets"), fa_lag + dep_lag),
        "capital_intensity": _ratio(col("fixed_assets"), col("employees")),
        "labour_productivity": _ratio(col("value_added"), col("employees")),
        "icr": _ratio(col("ebit"), col("interest_paid")),
        "financial_constraints": _ratio(col("interest_paid"), col("cash_flow")),
        "roa": _ratio(col("ebitda"), col("total_assets")),
        "financial_sustainability": _ratio(col("financial_expenses"), col("operating_revenue")),
        "size_age": size_age_index(col("total_assets"), age),
        "capital_adequacy": _ratio(col("shareholders_funds"), col("loans") + col("long_term_debt")),
        "liquidity_ratio": _ratio(col("current_assets") - col("stocks"), col("current_liabilities")),
        "liquidity_returns": _ratio(col("cash_flow"), col("total_assets")),
        "regional_spillover": _group_share(exporter, known, [region, year]),
        "industrial_spillover": _group_share(exporter, known, [industry, year]),
        "external_scale": _group_share(exporter, known, [region, industry, year]),
        "size": _log(col("employees")),
        "avg_wage_bill": _log(_ratio(col("costs_of_employees"), col("employees"))),
    }
    frame = f.copy()
    for name, values in derived.items():
        frame[name] = values
    base_preds = [p for p in panel.predictors if p not in derived]
    schema = Schema(
        numeric=tuple(s.numeric) + tuple(n for n in DERIVED if n not in s.numeric),
        categorical=s.categorical,
        auxiliary=s.auxiliary,
        id_column=s.id_column,
        year_column=s.year_column,
        export_column=s.export_column,
        revenue_column=s.revenue_column,
    )
    return FirmPanel(frame, schema, tuple(base_preds) + DERIVED)


# ---------------------------------------------------------------------------
# labels


@dataclass(frozen=True)
class LabelSet:
    """Binary export status per firm-year under one definition."""

    definition: str
    frame: pd.DataFrame  # columns firm_id, year, label
    percentile: float | None = None
    threshold: float | None = None

    @property
    def labels(self) -> np.ndarray:
        return self.frame["label"].to_numpy()

    def series(self) -> pd.Series:
        return self.frame.set_index(["firm_id", "year"])["label"]

    def align(self, panel: FirmPanel) -> np.ndarray:
        """Labels in the row order of ``panel``; -1 where a row has no label."""
        lab = self.series()
        idx = panel.keys()
        return lab.reindex(idx).fillna(-1).to_numpy(dtype=int)


DEFINITIONS = ("positive-revenue", "share-threshold", "annual")


def nearest_rank_percentile(values, p: float) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ParameterError("no positive export shares to take a percentile of")
    rank = max(int(math.ceil(p / 100.0 * v.size)), 1)
    return float(v[rank - 1])


def label(panel: FirmPanel, definition: str = "positive-revenue", percentile: float | None = None) -> LabelSet:
    """Assign export status.

    ``positive-revenue`` and ``annual`` both flag positive export revenue per
    firm-year; ``annual`` marks the set for year-by-year evaluation.
    ``share-threshold`` flags firms whose export share of total revenue
    strictly exceeds the nearest-rank ``percentile`` of the positive shares.
    Rows with unknown export revenue get no label.
    """
    if definition not in DEFINITIONS:
        raise ParameterError(f"unknown label definition {definition!r}")
    s = panel.schema
    f = panel.frame
    exp_rev = f[s.export_column].to_numpy(dtype=float)
    keep = ~np.isnan(exp_rev)
    threshold = None
    if definition == "share-threshold":
        if percentile is None or not (0 < percentile < 100):
            raise ParameterError(f"percentile must lie in (0, 100), got {percentile!r}")
        share = _ratio(exp_rev, f[s.revenue_column].to_numpy(dtype=float))
        keep &= ~np.isnan(share)
        threshold = nearest_rank_percentile(share[keep & (share > 0)], percentile)
        lab = (share > threshold)
    else:
        lab = exp_rev > 0
    out = pd.DataFrame({
        "firm_id": f[s.id_column].to_numpy()[keep],
        "year": f[s.year_column].to_numpy()[keep],
        "label": lab[keep].astype(np.int8),
    }).reset_index(drop=True)
    return LabelSet(definition, out, percentile, threshold)


# ---------------------------------------------------------------------------
# exporting patterns

CATEGORIES = ("constant_exporter", "non_exporter", "switching_exporter",
              "switching_non_exporter", "discontinuous")


def longest_run(seq) -> int:
    best = run = 0
    for v in seq:
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def classify_sequence(labels: Sequence[int], years: Sequence[int]) -> dict:
    """Pattern of one firm's label path ordered by year."""
    lab = [int(v) for v in labels]
    changes = sum(a != b for a, b in zip(lab, lab[1:]))
    n_exp = sum(lab)
    out = {"category": None, "start_year": None, "stop_year": None,
           "export_years": n_exp, "changes": changes}
    if changes == 0:
        out["category"] = "constant_exporter" if lab[0] == 1 else "non_exporter"
    elif changes == 1:
        k = next(i for i in range(1, len(lab)) if lab[i] != lab[i - 1])
        if lab[0] == 0:
            out["category"] = "switching_exporter"
            out["start_year"] = int(years[k])
        else:
            out["category"] = "switching_non_exporter"
            out["stop_year"] = int(years[k - 1])
    else:
        out["category"] = "discontinuous"
    if longest_run(lab) >= 4:
        out["bm_class"] = "permanent"
    elif n_exp > 0:
        out["bm_class"] = "temporary"
    else:
        out["bm_class"] = "never"
    return out


def classify_patterns(labels: LabelSet) -> pd.DataFrame:
    """One row per firm: pattern category, switch year, export-year count, persistence class.

    Every firm must be labelled in each year of the panel-wide timeline.
    ``start_year`` is the first exporting year of a switching exporter and
    ``stop_year`` the last exporting year of a switching non-exporter.
    """
    f = labels.frame.sort_values(["firm_id", "year"])
    if f.empty:
        return pd.DataFrame(columns=["firm_id", "category", "start_year", "stop_year",
                                     "export_years", "changes", "bm_class"])
    timeline = np.arange(f["year"].min(), f["year"].max() + 1)
    rows = []
    for firm, g in f.groupby("firm_id", sort=True):
        yrs = g["year"].to_numpy()
        if len(yrs) != len(timeline) or (yrs != timeline).any():
            raise IncompleteTimelineError(f"firm {firm!r} lacks labels for some years of {timeline[0]}-{timeline[-1]}")
        rec = classify_sequence(g["label"].to_numpy(), yrs)
        rec["firm_id"] = firm
        rows.append(rec)
    cols = ["firm_id", "category", "start_year", "stop_year", "export_years", "changes", "bm_class"]
    out = pd.DataFrame(rows)[cols]
    out["start_year"] = out["start_year"].astype("Int64")
    out["stop_year"] = out["stop_year"].astype("Int64")
    return out


def pattern_group(row) -> str:
    """Table-style group label, e.g. ``switching_exporter:2013`` or ``discontinuous:3``."""
    c = row["category"]
    if c == "switching_exporter":
        return f"{c}:{row['start_year']}"
    if c == "switching_non_exporter":
        return f"{c}:{row['stop_year']}"
    if c == "discontinuous":
        return f"{c}:{row['export_years']}"
    return c


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class Partition:
    train_firm_ids: frozenset
    test_firm_ids: frozenset
    fraction: float
    seed: int

    def split(self, panel: FirmPanel) -> tuple[FirmPanel, FirmPanel]:
        ids = panel.firm_id
        in_train = np.fromiter((i in self.train_firm_ids for i in ids), bool, len(ids))
        return panel.take(in_train), panel.take(~in_train)


def partition(panel: FirmPanel, fraction: float = 0.8, seed: int = 0) -> Partition:
    """Uniform random split of firms; ``fraction`` of them go to training."""
    if not (0 < fraction < 1):
        raise ParameterError(f"fraction must lie in (0, 1), got {fraction!r}")
    firms = np.array(sorted(panel.firms.tolist(), key=str), dtype=object)
    n_train = int(round(fraction * len(firms)))
    order = np.random.default_rng(seed).permutation(len(firms))
    train = frozenset(firms[order[:n_train]].tolist())
    test = frozenset(firms[order[n_train:]].tolist())
    return Partition(train, test, fraction, seed)

