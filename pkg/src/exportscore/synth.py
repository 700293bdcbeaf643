"""Synthetic firm panels with a known probit export process.

Firms draw three persistent latent factors (size, productivity, financial
health). Observable columns load on those factors, which gives blocks of
strongly correlated predictors. Export status follows a probit model on
standardized transforms of observables, so the true P(Y=1|x) is known for
every row. Cells are then masked either completely at random or through an
"incomplete accounts" event whose odds fall with firm size and, scaled by
an informativeness weight, rise for non-exporters.

With ``p == 52`` the panel uses the financial schema and raw accounts that
``derive_predictors`` expands; any other ``p`` gives generic columns
``x01 .. xp`` loading directly on the factors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit, logit, ndtr

from . import dataset as ds
from .errors import GeneratorSpecError

N_FACTORS = 3
PREVALENCE_BOUNDS = (0.05, 0.95)
MISSINGNESS = ("none", "mcar", "mnar")
# share of maskable cells hidden in a row hit by the incomplete-accounts event
ROW_CELL_RATE = 0.5

# Truth on standardized transforms of observables. Positive monetary
# columns enter in logs.
FINANCIAL_TRUTH = {
    "employees": 0.7,
    "tfp": 0.5,
    "outward_fdi": 0.6,
    "inward_fdi": 0.3,
    "patents": 0.4,
    "capital_intensity": 0.25,
    "solvency_ratio": 0.2,
    "age": -0.15,
    "markup": 0.15,
}
FINANCIAL_INTERACTIONS = (("employees", "tfp", 0.3), ("employees", "employees", -0.15))
LOG_FEATURES = {"employees", "capital_intensity", "markup"}
MASKABLE = ds.ACCOUNTS + ds.PRECOMPUTED + ("ebit", "stocks")

INDUSTRIES = tuple(str(c) for c in range(10, 34))


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of a synthetic panel.

    ``coefficients`` maps truth features to probit weights: column names for
    the financial design, or a length-``p`` sequence for the generic one.
    ``interactions`` lists ``(a, b, weight)`` product terms. ``intercept``
    ``None`` calibrates it so the mean true probability equals
    ``prevalence``. Under ``mnar``, ``missing_rate`` is the incomplete-accounts
    probability of a median-sized firm, ``size_slope`` its log-odds decline
    per standard deviation of log size and ``informativeness`` the log-odds
    shift toward non-exporters.
    """

    n_firms: int = 1000
    years: tuple = (2010, 2017)
    p: int = 52
    coefficients: object = None
    interactions: tuple = None
    intercept: float | None = None
    prevalence: float = 0.4
    missingness: str = "mnar"
    missing_rate: float = 0.3
    size_slope: float = 1.0
    informativeness: float = 1.5
    noise_scale: float = 1.0
    n_regions: int = 12
    n_industries: int = 12
    seed: int = 0

    def __post_init__(self):
        if int(self.n_firms) < 1:
            raise GeneratorSpecError(f"n_firms must be positive, got {self.n_firms!r}")
        if len(self.years) != 2 or int(self.years[1]) < int(self.years[0]):
            raise GeneratorSpecError(f"years must be (first, last), got {self.years!r}")
        if int(self.p) < 1:
            raise GeneratorSpecError(f"p must be positive, got {self.p!r}")
        if self.missingness not in MISSINGNESS:
            raise GeneratorSpecError(f"missingness must be one of {MISSINGNESS}, got {self.missingness!r}")
        if not (0 <= self.missing_rate < 1):
            raise GeneratorSpecError(f"missing_rate must lie in [0, 1), got {self.missing_rate!r}")
        if self.missingness == "mnar" and self.missing_rate == 0:
            raise GeneratorSpecError("mnar needs a positive missing_rate")
        if self.size_slope < 0:
            raise GeneratorSpecError("size_slope must be non-negative (missingness falls with size)")
        if self.informativeness < 0:
            raise GeneratorSpecError("informativeness must be non-negative")
        if self.noise_scale <= 0:
            raise GeneratorSpecError("noise_scale must be positive")
        lo, hi = PREVALENCE_BOUNDS
        if self.intercept is None and not (lo < self.prevalence < hi):
            raise GeneratorSpecError(f"prevalence must lie in ({lo}, {hi}), got {self.prevalence!r}")
        if not (1 <= self.n_regions) or not (1 <= self.n_industries <= len(INDUSTRIES)):
            raise GeneratorSpecError("n_regions and n_industries must be positive (industries at most 24)")
        object.__setattr__(self, "years", (int(self.years[0]), int(self.years[1])))

    @property
    def financial(self) -> bool:
        return int(self.p) == len(ds.FINANCIAL_PREDICTORS)

    @property
    def timeline(self) -> np.ndarray:
        return np.arange(self.years[0], self.years[1] + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["years"] = list(self.years)
        if d["coefficients"] is not None and not isinstance(d["coefficients"], dict):
            d["coefficients"] = [float(v) for v in d["coefficients"]]
        if d["interactions"] is not None:
            d["interactions"] = [list(t) for t in d["interactions"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise GeneratorSpecError(f"unknown generator key {sorted(unknown)[0]!r}")
        kw = dict(d)
        if "years" in kw:
            kw["years"] = tuple(kw["years"])
        if kw.get("interactions") is not None:
            kw["interactions"] = tuple(tuple(t) for t in kw["interactions"])
        return cls(**kw)


# ---------------------------------------------------------------------------
# latent structure


def _firm_ids(n):
    width = max(5, len(str(n)))
    return np.array([f"F{i:0{width}d}" for i in range(1, n + 1)], dtype=object)


def _latent(spec, rng):
    n, years = spec.n_firms, spec.timeline
    T = len(years)
    region_codes = np.array([f"R{j:02d}" for j in range(1, spec.n_regions + 1)], dtype=object)
    ind_codes = np.array(INDUSTRIES[:spec.n_industries], dtype=object)
    region = rng.integers(0, spec.n_regions, n)
    industry = rng.integers(0, spec.n_industries, n)
    # regional and sectoral shifts in productivity and size create geography
    reg_eff = rng.normal(0, 0.35, spec.n_regions)
    ind_eff = rng.normal(0, 0.35, (spec.n_industries, 2))
    base = rng.normal(0, 1, (n, N_FACTORS))
    base[:, 0] += ind_eff[industry, 0]
    base[:, 1] += reg_eff[region] + ind_eff[industry, 1]
    # slow within-firm drift
    drift = rng.normal(0, 0.05, (n, N_FACTORS))
    shocks = rng.normal(0, 0.15, (n, T, N_FACTORS))
    F = base[:, None, :] + drift[:, None, :] * np.arange(T)[None, :, None] + shocks
    firm = np.repeat(np.arange(n), T)
    year = np.tile(years, n)
    return dict(F=F.reshape(n * T, N_FACTORS), firm=firm, year=year, base=base,
                region=region_codes[region][firm], industry=ind_codes[industry][firm],
                industry_idx=industry[firm], T=T)


def _financial_columns(spec, lat, rng):
    F = lat["F"]
    m = F.shape[0]
    s, a, f = F[:, 0], F[:, 1], F[:, 2]
    e = lambda sd=1.0: rng.normal(0, sd, m)
    cap_int = np.linspace(-0.6, 0.8, spec.n_industries)[lat["industry_idx"]]

    employees = np.maximum(1.0, np.round(np.exp(2.8 + 1.1 * s + e(0.2))))
    L = np.log(employees)
    sales = np.exp(11.4 + 1.03 * L + 0.4 * a + e(0.2))
    operating_revenue = sales * np.exp(0.02 + np.abs(e(0.03)))
    material_costs = sales * expit(0.2 - 0.25 * a + e(0.3))
    costs_of_employees = employees * np.exp(10.4 + 0.15 * a + e(0.1))
    value_added = sales - material_costs
    ebitda = value_added - costs_of_employees
    total_assets = sales * np.exp(-0.1 + 0.2 * f + 0.3 * cap_int + e(0.2))
    fixed_assets = total_assets * expit(-0.4 + 0.8 * cap_int + e(0.3))
    tangible = fixed_assets * expit(1.5 + e(0.3))
    intangible = fixed_assets - tangible
    depreciation = fixed_assets * 0.08 * np.exp(e(0.1))
    ebit = ebitda - depreciation
    current_assets = total_assets - fixed_assets
    stocks = current_assets * expit(-1.0 + e(0.3))
    debtors = current_assets * expit(-0.6 + e(0.3))
    cash = current_assets * expit(-1.6 + 0.5 * f + e(0.3))
    shareholders_funds = total_assets * expit(-0.5 + 0.8 * f + e(0.3))
    liabilities = total_assets - shareholders_funds
    current_liabilities = liabilities * expit(0.3 + e(0.3))
    non_current = liabilities - current_liabilities
    loans = current_liabilities * expit(-1.2 - 0.3 * f + e(0.3))
    creditors = current_liabilities * expit(0.2 + e(0.3))
    long_term_debt = non_current * expit(0.5 + e(0.3))
    interest_paid = (loans + long_term_debt) * np.exp(np.log(0.03) - 0.2 * f + e(0.2))
    financial_expenses = interest_paid * np.exp(0.1 + e(0.1))
    financial_revenues = cash * 0.01 * np.exp(e(0.3))
    taxation = np.maximum(ebit, 0.0) * 0.28 * np.exp(e(0.1))
    cash_flow = ebitda - taxation - interest_paid

    # flags are firm traits; firm-level noise keeps them constant over years
    n = spec.n_firms
    base = lat["base"]
    fn = lambda: rng.normal(0, 1, n)[lat["firm"]]
    bs, ba = base[:, 0][lat["firm"]], base[:, 1][lat["firm"]]
    flags = {
        "corporate_control": (0.4 * bs + fn() > 0.8),
        "patents": (0.5 * ba + 0.3 * bs + fn() > 1.2),
        "consolidated_accounts": (0.6 * bs + fn() > 1.0),
        "inward_fdi": (0.4 * bs + 0.2 * ba + fn() > 1.5),
        "outward_fdi": (0.5 * bs + 0.4 * ba + fn() > 1.6),
    }
    age0 = np.clip(np.round(np.exp(2.3 + 0.3 * base[:, 0] + rng.normal(0, 0.5, n))), 0, 80)
    incorporation_year = (spec.years[0] - age0)[lat["firm"]]

    cols = {
        "value_added": value_added,
        "depreciation": depreciation,
        "creditors": creditors,
        "current_assets": current_assets,
        "current_liabilities": current_liabilities,
        "non_current_liabilities": non_current,
        "current_ratio": current_assets / current_liabilities,
        "debtors": debtors,
        "operating_revenue": operating_revenue,
        "material_costs": material_costs,
        "costs_of_employees": costs_of_employees,
        "taxation": taxation,
        "financial_revenues": financial_revenues,
        "financial_expenses": financial_expenses,
        "interest_paid": interest_paid,
        "employees": employees,
        "cash_flow": cash_flow,
        "ebitda": ebitda,
        "total_assets": total_assets,
        "fixed_assets": fixed_assets,
        "intangible_fixed_assets": intangible,
        "tangible_fixed_assets": tangible,
        "shareholders_funds": shareholders_funds,
        "long_term_debt": long_term_debt,
        "loans": loans,
        "sales": sales,
        "solvency_ratio": 100.0 * shareholders_funds / total_assets,
        "working_capital": current_assets - current_liabilities,
    }
    cols.update({k: v.astype(float) for k, v in flags.items()})
    cols["tfp"] = a + e(0.2)
    cols["markup"] = np.exp(0.15 + 0.05 * a + e(0.05))
    cols.update(ebit=ebit, stocks=stocks, incorporation_year=incorporation_year, cash=cash)
    return cols, operating_revenue


def _financial_features(cols, year):
    feats = dict(cols)
    feats["age"] = np.maximum(year - cols["incorporation_year"], 0.0)
    feats["capital_intensity"] = cols["fixed_assets"] / cols["employees"]
    return feats


def _generic_columns(spec, lat, rng):
    F = lat["F"]
    p = int(spec.p)
    load = rng.normal(0, 0.8, (N_FACTORS, p))
    X = F @ load + rng.normal(0, 0.6, (F.shape[0], p))
    names = [f"x{j:02d}" for j in range(1, p + 1)]
    cols = dict(zip(names, X.T))
    revenue = np.exp(13.0 + 1.1 * F[:, 0] + rng.normal(0, 0.2, F.shape[0]))
    return cols, revenue, names


def _standardize(v):
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else v - v.mean()


def _truth_index(spec, feats, names, rng):
    """Linear predictor without intercept, plus the resolved coefficient table."""
    if spec.financial:
        coefs = dict(FINANCIAL_TRUTH if spec.coefficients is None else spec.coefficients)
        inter = FINANCIAL_INTERACTIONS if spec.interactions is None else spec.interactions
    else:
        p = int(spec.p)
        if spec.coefficients is None:
            b = rng.normal(0, 1.0, p) / np.sqrt(p)
        else:
            b = np.asarray(spec.coefficients, float)
            if b.shape != (p,):
                raise GeneratorSpecError(f"coefficients must have length {p}")
        coefs = dict(zip(names, b))
        inter = () if spec.interactions is None else spec.interactions
        inter = tuple((names[i] if isinstance(i, int) else i, names[j] if isinstance(j, int) else j, w)
                      for i, j, w in inter)
    z = {}

    def feature(name):
        if name not in z:
            if name not in feats:
                raise GeneratorSpecError(f"unknown truth feature {name!r}")
            v = np.asarray(feats[name], float)
            z[name] = _standardize(np.log(v) if name in LOG_FEATURES else v)
        return z[name]

    eta = np.zeros(len(next(iter(feats.values()))))
    for name, b in coefs.items():
        eta += float(b) * feature(name)
    for a, b, w in inter:
        eta += float(w) * feature(a) * feature(b)
    return eta


def _calibrate(eta, spec):
    if spec.intercept is not None:
        return float(spec.intercept)
    target = spec.prevalence
    g = lambda c: ndtr((c + eta) / spec.noise_scale).mean() - target
    span = 10 * (np.abs(eta).max() + spec.noise_scale)
    return float(brentq(g, -span, span, xtol=1e-12))


def _mask(spec, names, size_z, y, rng):
    m, k = len(y), len(names)
    if spec.missingness == "none" or (spec.missingness == "mcar" and spec.missing_rate == 0):
        return np.zeros((m, k), bool), np.zeros(m, bool), np.zeros(m)
    if spec.missingness == "mcar":
        M = rng.random((m, k)) < spec.missing_rate
        return M, M.any(axis=1), np.full(m, spec.missing_rate)
    pi = missing_probability(spec, size_z, y)
    event = rng.random(m) < pi
    M = (rng.random((m, k)) < ROW_CELL_RATE) & event[:, None]
    # an incomplete row hides at least one cell
    forced = rng.integers(0, k, m)
    M[np.arange(m), forced] |= event
    return M, event, pi


def missing_probability(spec: GeneratorSpec, size_z, y):
    """Incomplete-accounts probability under the size-linked, label-informative regime."""
    size_z = np.asarray(size_z, float)
    y = np.asarray(y, float)
    return expit(logit(spec.missing_rate) - spec.size_slope * size_z
                 + spec.informativeness * (1.0 - 2.0 * y))


def generate(spec: GeneratorSpec):
    """Draw a panel and its ground truth.

    Returns ``(panel, truth)``: a FirmPanel of raw columns (financial schema
    or generic) and a frame with firm_id, year, probability, label,
    export_share and incomplete (the row-level missingness event).
    """
    rng = np.random.default_rng(spec.seed)
    lat = _latent(spec, rng)
    year = lat["year"]
    if spec.financial:
        cols, revenue = _financial_columns(spec, lat, rng)
        feats = _financial_features(cols, year)
        schema = ds.financial_schema()
        names = list(schema.numeric)
        maskable = list(MASKABLE)
        size = np.log(cols["employees"])
    else:
        cols, revenue, names = _generic_columns(spec, lat, rng)
        feats = cols
        schema = ds.generic_schema(names)
        maskable = list(names)
        size = lat["F"][:, 0]

    eta0 = _truth_index(spec, feats, names, rng)
    c = _calibrate(eta0, spec)
    prob = ndtr((c + eta0) / spec.noise_scale)
    lo, hi = PREVALENCE_BOUNDS
    if not (lo < prob.mean() < hi):
        raise GeneratorSpecError(f"implied export prevalence {prob.mean():.3f} outside ({lo}, {hi})")
    y = (rng.random(len(prob)) < prob).astype(np.int8)
    share = expit(-1.2 + 0.4 * lat["F"][:, 1] + rng.normal(0, 0.5, len(prob)))
    export_revenue = np.where(y == 1, share * revenue, 0.0)

    M, event, _ = _mask(spec, maskable, _standardize(size), y, rng)
    for j, name in enumerate(maskable):
        v = np.asarray(cols[name], float).copy()
        v[M[:, j]] = np.nan
        cols[name] = v

    ids = _firm_ids(spec.n_firms)[lat["firm"]]
    frame = pd.DataFrame({schema.id_column: ids, schema.year_column: year})
    for name in names:
        frame[name] = np.asarray(cols[name], float)
    frame["region"] = lat["region"]
    frame["industry"] = lat["industry"]
    frame[schema.export_column] = export_revenue
    frame[schema.revenue_column] = revenue
    panel = ds.FirmPanel(frame, schema, schema.predictors)
    truth = pd.DataFrame({"firm_id": ids, "year": year, "probability": prob, "label": y,
                          "export_share": share, "incomplete": event.astype(np.int8)})
    truth.attrs["intercept"] = c
    return panel, truth


# ---------------------------------------------------------------------------
# export patterns

MIX_ALIASES = {"constant": "constant_exporter", "never": "non_exporter",
               "switching": "switching_exporter"}


def allocate(mix: dict, n: int) -> dict:
    """Largest-remainder rounding of ``n`` firms over the mix shares."""
    shares = {MIX_ALIASES.get(k, k): float(v) for k, v in mix.items()}
    unknown = [k for k in shares if k not in ds.CATEGORIES]
    if unknown:
        raise GeneratorSpecError(f"unknown pattern category {unknown[0]!r}")
    if any(v < 0 for v in shares.values()) or abs(sum(shares.values()) - 1) > 1e-9:
        raise GeneratorSpecError("pattern shares must be non-negative and sum to 1")
    cats = [c for c in ds.CATEGORIES if c in shares]
    raw = np.array([shares[c] * n for c in cats])
    counts = np.floor(raw + 1e-9).astype(int)
    rem = raw - counts
    order = sorted(range(len(cats)), key=lambda i: (-rem[i], i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return dict(zip(cats, counts.tolist()))


def _paths(counts, T, rng):
    paths = []
    for cat, k in counts.items():
        for i in range(k):
            if cat == "constant_exporter":
                p = np.ones(T, np.int8)
            elif cat == "non_exporter":
                p = np.zeros(T, np.int8)
            elif cat == "switching_exporter":
                start = 1 + i % (T - 1)
                p = (np.arange(T) >= start).astype(np.int8)
            elif cat == "switching_non_exporter":
                stop = i % (T - 1)
                p = (np.arange(T) <= stop).astype(np.int8)
            else:
                while True:
                    p = rng.integers(0, 2, T).astype(np.int8)
                    if np.sum(p[1:] != p[:-1]) >= 2:
                        break
            paths.append((cat, p))
    return paths


def pattern_generate(spec: GeneratorSpec, mix: dict):
    """Panel whose firm label paths follow the requested category mix exactly.

    Switch years cycle through the timeline so each possible start or stop
    year is used once there are enough firms; discontinuous paths have at
    least two status changes. The ``label`` column of the returned truth
    holds the imposed path; ``probability`` stays that of the underlying
    probit draw.
    """
    T = len(spec.timeline)
    counts = allocate(mix, spec.n_firms)
    if T < 2 and (counts.get("switching_exporter", 0) or counts.get("switching_non_exporter", 0)):
        raise GeneratorSpecError("switching patterns need at least two years")
    if T < 3 and counts.get("discontinuous", 0):
        raise GeneratorSpecError("discontinuous patterns need at least three years")
    panel, truth = generate(spec)
    rng = np.random.default_rng([spec.seed, 1])
    paths = _paths(counts, T, rng)
    order = rng.permutation(spec.n_firms)
    labels = np.empty((spec.n_firms, T), np.int8)
    for slot, (_, p) in zip(order, paths):
        labels[slot] = p
    y = labels.ravel()  # rows are firm-major, year-minor
    s = panel.schema
    frame = panel.frame.copy()
    revenue = frame[s.revenue_column].to_numpy(float)
    frame[s.export_column] = np.where(y == 1, truth["export_share"].to_numpy() * revenue, 0.0)
    truth = truth.copy()
    truth["label"] = y
    return ds.FirmPanel(frame, s, panel.predictors), truth


def write_truth(truth: pd.DataFrame, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        truth.to_csv(fh, index=False, lineterminator="\n")
