"""Command-line pipeline: simulate, train, predict, evaluate, score, analyze.

Every run reads one YAML config (plus ``key.path=value`` overrides), writes
the fully resolved config next to its outputs, and starts each CSV with a
provenance comment carrying the tool version and the config hash.

Seeds: a single master ``seed`` feeds every stage through
``SeedSequence(seed, spawn_key=(crc32(stage),))``, so stages draw
independent streams and adding a stage never shifts another one.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import warnings
import zlib
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from . import analytics, bart, dataset as ds, metrics, models, scoring, synth
from .errors import ConfigError, ExportScoreError

log = logging.getLogger("exportscore")

THREADS_ENV = "EXPORTSCORE_THREADS"

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "output_dir": "out",
    "timestamp": True,
    "data": {
        "panel": None,  # defaults to <output_dir>/panel.csv
        "schema": "financial",  # financial | generic | explicit mapping
        "derive": None,  # None: derive when the schema is financial
    },
    "label": {"definition": "positive-revenue", "percentile": None},
    "partition": {"fraction": 0.8},
    "simulate": {
        "n_firms": 1000, "years": [2010, 2017], "p": 52, "prevalence": 0.4,
        "intercept": None, "coefficients": None, "interactions": None,
        "missingness": "mnar", "missing_rate": 0.3, "size_slope": 1.0, "informativeness": 1.5,
        "noise_scale": 1.0, "n_regions": 12, "n_industries": 12, "pattern_mix": None,
    },
    "model": {
        "kind": "bart-mia",
        "complete_cases": False,
        "bart": {"q": 50, "eta": 2.0, "beta": 0.95, "d": 2.0, "burn_in": 250, "post_burn": 1000,
                 "proposal_probs": [0.28, 0.28, 0.44]},
        "logit": {"tol": 1e-8, "max_iter": 100},
        "lasso-logit": {"n_lambda": 100, "lambda_ratio": 1e-4, "gamma": 0.5},
        "cart": {"min_leaf": 5, "folds": 5},
        "forest": {"n_trees": 500, "mtry": None, "min_leaf": 1},
    },
    "predict": {"model": None, "rows": "all"},
    "evaluate": {"models": None, "threshold": 0.5, "grouping": "none"},
    "score": {"model": None, "outcomes": ["cash", "fixed_assets"], "size_column": "employees",
              "industry_column": "industry", "region_column": "region", "include": "all"},
    "analyze": {"scores": None, "model": None, "collapse_latest": True, "bootstrap_reps": 1000,
                "level": 0.9, "group_keys": ["region", "industry"], "vip_replications": 0,
                "vip_threshold": 0.01},
}

# mappings whose keys are user data rather than config fields
_FREE_KEYS = {("simulate", "coefficients"), ("simulate", "pattern_mix"), ("data", "schema")}


# ---------------------------------------------------------------------------
# config


def _merge(base, update, path=()):
    out = copy.deepcopy(base)
    for k, v in update.items():
        here = path + (k,)
        if k not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(base[k], dict) and here not in _FREE_KEYS:
            if not isinstance(v, dict):
                raise ConfigError(f"config key {'.'.join(here)!r} must be a mapping")
            out[k] = _merge(base[k], v, here)
        else:
            out[k] = v
    return out


def _set_path(tree, dotted, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends into a non-mapping")
    node[keys[-1]] = value


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the YAML file, then ``key=value`` overrides."""
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {str(path)!r}: {exc}".replace("\n", " ")) from None
        if not isinstance(user, dict):
            raise ConfigError("config document must be a mapping")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        _set_path(user, key.strip(), yaml.safe_load(raw))
    cfg = _merge(DEFAULTS, user)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("config key 'seed' must be an integer")
    return cfg


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def derive_seed(master: int, stage: str) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(zlib.crc32(stage.encode()),))
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


class Run:
    """Paths, provenance header and seeds of one invocation."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["output_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(cfg)

    def path(self, value, default_name):
        return Path(value) if value else self.out / default_name

    def header(self) -> str:
        lines = [f"exportscore {__version__} config={self.hash} command={self.command}"]
        if self.cfg["timestamp"]:
            lines.append("generated=" + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
        return "\n".join(lines)

    def write_csv(self, df: pd.DataFrame, name, index=False) -> Path:
        path = self.path(None, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in self.header().splitlines():
                fh.write(f"# {line}\n")
            df.to_csv(fh, index=index, lineterminator="\n")
        log.info("wrote %s", path)
        return path

    def write_json(self, doc: dict, name) -> Path:
        path = self.path(None, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        log.info("wrote %s", path)
        return path

    def echo_config(self) -> Path:
        path = self.out / f"config.{self.command}.resolved.yaml"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# exportscore {__version__} config={self.hash}\n")
            yaml.safe_dump(self.cfg, fh, sort_keys=True)
        return path

    def seed(self, stage: str) -> int:
        return derive_seed(self.cfg["seed"], stage)


def apply_threads(flag: int | None, cfg: dict) -> int:
    """Flag beats the environment, which beats the config file."""
    n = cfg["threads"]
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if flag is not None:
        n = flag
    if int(n) < 1:
        raise ConfigError("thread count must be at least 1")
    try:
        with warnings.catch_warnings():
            # numba complains about an old TBB build even when it is not used
            warnings.simplefilter("ignore")
            import numba

            numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
    except Exception:  # pragma: no cover - numba without threading layer
        pass
    cfg["threads"] = int(n)
    return int(n)


# ---------------------------------------------------------------------------
# shared loading


_NON_PREDICTOR = {"firm_id", "year", "region", "industry", "export_revenue", "total_revenue"}


def _schema(run: Run, path: Path) -> ds.Schema:
    spec = run.cfg["data"]["schema"]
    if isinstance(spec, dict):
        return ds.Schema.from_dict(spec)
    if spec == "financial":
        return ds.financial_schema()
    if spec == "generic":
        skip = ds._leading_comment_lines(path)
        header = pd.read_csv(path, nrows=0, skiprows=skip).columns
        return ds.generic_schema([c for c in header if c not in _NON_PREDICTOR])
    raise ConfigError(f"data.schema must be 'financial', 'generic' or a mapping, got {spec!r}")


def load_panel(run: Run):
    """Panel with predictors ready for modelling, and its labels."""
    path = run.path(run.cfg["data"]["panel"], "panel.csv")
    schema = _schema(run, path)
    panel = ds.ingest_csv(path, schema)
    derive = run.cfg["data"]["derive"]
    if derive is None:
        derive = set(ds.ACCOUNTS) <= set(schema.numeric)
    if derive:
        panel = ds.derive_predictors(panel)
    lab = run.cfg["label"]
    labels = ds.label(panel, lab["definition"], lab["percentile"])
    return panel, labels


def _partition(run: Run, panel):
    return ds.partition(panel, run.cfg["partition"]["fraction"], run.seed("partition"))


def _model_path(run: Run, value):
    return run.path(value, "model.json")


def _score_frame(panel, scores):
    keys = panel.frame[[panel.schema.id_column, panel.schema.year_column]]
    df = pd.DataFrame({"firm_id": keys.iloc[:, 0].to_numpy(), "year": keys.iloc[:, 1].to_numpy(),
                       "score": scores})
    return df[~np.isnan(scores)].reset_index(drop=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(run: Run):
    sim = dict(run.cfg["simulate"])
    mix = sim.pop("pattern_mix")
    sim["seed"] = run.seed("simulate")
    spec = synth.GeneratorSpec.from_dict(sim)
    if mix:
        panel, truth = synth.pattern_generate(spec, mix)
    else:
        panel, truth = synth.generate(spec)
    path = run.path(run.cfg["data"]["panel"], "panel.csv")
    ds.write_csv(panel, path, run.header().replace("\n", "\n# "))
    log.info("wrote %s", path)
    run.write_csv(truth, "truth.csv")


def cmd_train(run: Run):
    panel, labels = load_panel(run)
    part = _partition(run, panel)
    train, _ = part.split(panel)
    y = labels.align(train)
    train = train.take(y >= 0)
    y = y[y >= 0]
    m = run.cfg["model"]
    kind = m["kind"]
    if kind not in models.KINDS:
        raise ConfigError(f"model.kind must be one of {models.KINDS}, got {kind!r}")
    params = dict(m["bart"] if kind.startswith("bart") else m[kind])
    log.info("fitting %s on %d rows", kind, len(y))
    model = models.fit_model(kind, train, y, params, seed=run.seed("model"),
                             complete_cases=m["complete_cases"])
    extra = {"config_hash": run.hash, "label": run.cfg["label"],
             "partition": {"fraction": part.fraction, "seed": part.seed},
             "n_train_rows": int(len(y))}
    path = _model_path(run, None)
    models.save(model, path, extra)
    log.info("wrote %s", path)


def cmd_predict(run: Run):
    panel, _ = load_panel(run)
    model, _ = models.load(_model_path(run, run.cfg["predict"]["model"]))
    rows = run.cfg["predict"]["rows"]
    if rows in ("train", "test"):
        tr, te = _partition(run, panel).split(panel)
        panel = tr if rows == "train" else te
    elif rows != "all":
        raise ConfigError(f"predict.rows must be all, train or test, got {rows!r}")
    p = models.predict_model(model, panel)
    if np.isnan(p).any():
        log.info("%d rows left unscored (incomplete cases)", int(np.isnan(p).sum()))
    run.write_csv(scoring.score(_score_frame(panel, p)), "predictions.csv")


def _grouping(run, grouping, test, labels, y):
    if grouping == "year":
        return np.array([str(v) for v in test.year], dtype=object)
    if grouping in ("pattern", "bm_class"):
        ls = ds.LabelSet(labels.definition,
                         labels.frame[labels.frame["firm_id"].isin(set(test.firms.tolist()))])
        pats = ds.classify_patterns(ls).set_index("firm_id")
        if grouping == "pattern":
            g = {f: ds.pattern_group(r) for f, r in pats.iterrows()}
        else:
            g = pats["bm_class"].to_dict()
        return np.array([g[f] for f in test.firm_id], dtype=object)
    raise ConfigError(f"evaluate.grouping must be none, year, pattern or bm_class, got {grouping!r}")


def cmd_evaluate(run: Run):
    ev = run.cfg["evaluate"]
    panel, labels = load_panel(run)
    _, test = _partition(run, panel).split(panel)
    y = labels.align(test)
    test = test.take(y >= 0)
    y = y[y >= 0]
    paths = ev["models"] or [str(_model_path(run, None))]
    rows, grouped, sets = [], [], {}
    names = []
    for p in paths:
        model, _ = models.load(p)
        name = Path(p).stem
        if name in names:
            name = f"{name}_{len(names)}"
        names.append(name)
        s = models.predict_model(model, test)
        keep = ~np.isnan(s)
        rows.append(metrics.evaluate(s[keep], y[keep], ev["threshold"]).row(
            model=name, group="all", fold=0))
        sets[name] = s
        if ev["grouping"] != "none":
            g = _grouping(run, ev["grouping"], test, labels, y)
            grouped.append(metrics.grouped_report(s[keep], y[keep], g[keep], ev["threshold"], name))
    run.write_csv(metrics.reports_frame(rows), "report.csv")
    if grouped:
        run.write_csv(pd.concat(grouped, ignore_index=True), "report_grouped.csv")
    run.write_csv(metrics.spearman_matrix(sets), "spearman.csv", index=True)


def _scores_for(run: Run, panel, model_path):
    model, _ = models.load(_model_path(run, model_path))
    return scoring.score(_score_frame(panel, models.predict_model(model, panel))), model


def cmd_score(run: Run):
    sc = run.cfg["score"]
    panel, labels = load_panel(run)
    table, _ = _scores_for(run, panel, sc["model"])
    run.write_csv(table, "scores.csv")
    for outcome in sc["outcomes"]:
        pm = scoring.fit_premia(panel, table, outcome, sc["size_column"], sc["industry_column"],
                                sc["region_column"], sc["include"], labels)
        if any(pm.dropped.values()):
            log.info("premia %s: dropped %s", outcome, pm.dropped)
        doc = pm.to_document()
        doc["config_hash"] = run.hash
        run.write_json(doc, f"premia_{outcome}.json")
        run.write_csv(scoring.premia_table(pm), f"premia_{outcome}.csv")


def cmd_analyze(run: Run):
    an = run.cfg["analyze"]
    panel, labels = load_panel(run)
    score_path = run.path(an["scores"], "scores.csv")
    if score_path.exists():
        skip = ds._leading_comment_lines(score_path)
        table = pd.read_csv(score_path, skiprows=skip, dtype={"firm_id": str})
    else:
        table, _ = _scores_for(run, panel, an["model"])
    pot = analytics.potential_set(table, labels, an["collapse_latest"])
    firm_attr = panel.frame.drop_duplicates(panel.schema.id_column, keep="last").set_index(
        panel.schema.id_column)
    region = firm_attr["region"]
    lq = analytics.location_quotients(pot, region, reps=an["bootstrap_reps"],
                                      seed=run.seed("bootstrap"), level=an["level"])
    t = lq.table.copy()
    t["total_potential"] = lq.n_potential
    t["total_firms"] = lq.n_firms
    run.write_csv(t, "location_quotients.csv")
    fr = pot.frame.copy()
    for key in an["group_keys"]:
        fr[key] = firm_attr[key].reindex(fr["firm_id"]).to_numpy()
        summ = analytics.aggregate_scores(fr, key, pot.median, fr["potential"].to_numpy())
        run.write_csv(summ, f"summary_{key}.csv")

    model, _ = models.load(_model_path(run, an["model"]))
    if isinstance(model, bart.BartModel):
        reps = int(an["vip_replications"])
        if reps > 1:
            part = _partition(run, panel)
            train, _ = part.split(panel)
            y = labels.align(train)
            train = train.take(y >= 0)
            rows = train.matrix(model.predictors)
            if not model.config.mia_enabled:
                keep = ~np.isnan(rows).any(axis=1)
                rows, yy = rows[keep], y[y >= 0][keep]
            else:
                yy = y[y >= 0]
            vs = analytics.vip_replicate(rows, yy, model.config, reps,
                                         analytics.replication_seeds(run.seed("vip"), reps),
                                         model.predictors)
        else:
            v = bart.vip(model)
            vs = analytics.summarize_vip([list(v.values())], list(v))
        out = vs.table.copy()
        out["replications"] = vs.replications
        out["above_threshold"] = out["mean"] >= an["vip_threshold"]
        run.write_csv(out, "vip.csv")
    else:
        log.info("model is not a sum-of-trees model; no VIP summary")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "score": cmd_score,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="exportscore", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"exportscore {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("-c", "--config", help="YAML config file")
        sp.add_argument("overrides", nargs="*", metavar="key=value",
                        help="config overrides, e.g. model.kind=logit")
        sp.add_argument("--threads", type=int, default=None, help=f"worker cap (also ${THREADS_ENV})")
        sp.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def error_line(exc: BaseException) -> str:
    code = getattr(exc, "code", None) if isinstance(exc, ExportScoreError) else None
    if code is None:
        code = {FileNotFoundError: "file_not_found", PermissionError: "permission"}.get(type(exc), "internal")
    msg = str(exc) if not isinstance(exc, FileNotFoundError) else f"no such file: {exc.filename or exc}"
    msg = " ".join(msg.split())
    return f"exportscore: error code={code} type={type(exc).__name__} message={json.dumps(msg)}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.no_timestamp:
            cfg["timestamp"] = False
        apply_threads(args.threads, cfg)
        run = Run(args.command, cfg)
        run.echo_config()
        COMMANDS[args.command](run)
    except (ExportScoreError, OSError) as exc:
        print(error_line(exc), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
