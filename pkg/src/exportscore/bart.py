"""Probit sum-of-trees classifier with missingness-aware splits.

The sampler follows the usual Bayesian additive regression tree recipe for a
binary outcome: a truncated-normal latent variable per row makes the probit
likelihood conditionally Gaussian with unit variance, after which each tree
is updated in turn by a grow/prune/change Metropolis-Hastings move and a
conjugate draw of its leaf values.

When ``mia_enabled`` is set, numeric splits carry a direction for missing
values and a predictor with missing training cells may also be split on its
missingness alone, so absent cells become information rather than a reason
to drop the row.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import _treekernels as K
from .errors import DegenerateOutcomeError, MissingDataError, ParameterError, SchemaError

CAPACITY = 256
MAX_DEPTH = 32
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BartConfig:
    """Hyperparameters of the sampler.

    Parameters
    ----------
    q : int
        Number of trees.
    eta, beta : float
        A node at depth k splits with prior probability ``beta * (1 + k) ** -eta``.
    d : float
        Leaf values have prior N(0, sigma_q^2) with ``sigma_q = 3 / (d * sqrt(q))``.
    sigma2 : float
        Latent error variance; fixed at 1 by the probit link.
    burn_in, post_burn : int
        Discarded and retained sweeps.
    mia_enabled : bool
        Route missing values through the trees instead of requiring complete rows.
    proposal_probs : tuple
        Weights of grow, prune and change moves.
    """

    q: int = 50
    eta: float = 2.0
    beta: float = 0.95
    d: float = 2.0
    sigma2: float = 1.0
    burn_in: int = 250
    post_burn: int = 1000
    mia_enabled: bool = True
    seed: int = 0
    proposal_probs: tuple = (0.28, 0.28, 0.44)

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")
        if self.eta < 0:
            raise ParameterError(f"eta must be non-negative, got {self.eta}")
        if int(self.q) != self.q or self.q < 1:
            raise ParameterError(f"q must be a positive integer, got {self.q}")
        if self.sigma2 != 1.0:
            raise ParameterError("sigma2 is fixed at 1 for the probit link")
        if self.d <= 0:
            raise ParameterError(f"d must be positive, got {self.d}")
        if self.burn_in < 0 or self.post_burn < 1:
            raise ParameterError("burn_in must be >= 0 and post_burn >= 1")
        probs = tuple(float(x) for x in self.proposal_probs)
        if len(probs) != 3 or min(probs) <= 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ParameterError(f"proposal_probs must be three positive weights summing to 1, got {probs}")
        object.__setattr__(self, "proposal_probs", probs)

    @property
    def sigma_q(self) -> float:
        return leaf_prior_scale(self.q, self.d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["proposal_probs"] = list(self.proposal_probs)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BartConfig":
        kw = dict(d)
        if "proposal_probs" in kw:
            kw["proposal_probs"] = tuple(kw["proposal_probs"])
        return cls(**kw)


def split_prior(depth, beta=0.95, eta=2.0):
    """Prior probability that a node at ``depth`` is split."""
    return beta * (1.0 + np.asarray(depth, dtype=float)) ** (-eta)


def leaf_prior_scale(q, d=2.0) -> float:
    """Prior standard deviation of a single leaf value, 3 / (d sqrt(q))."""
    return 3.0 / (d * math.sqrt(q))


def leaf_posterior(residuals, sigma2=1.0, sigma_q=1.0):
    """Conjugate normal update of a leaf value.

    Returns the posterior mean and variance of a leaf with prior
    N(0, sigma_q^2) given the partial residuals of the rows it holds, each
    with noise variance ``sigma2``.
    """
    r = np.asarray(residuals, dtype=float)
    v = 1.0 / (r.size / sigma2 + 1.0 / sigma_q**2)
    return v * r.sum() / sigma2, v


def draw_latent(y, fit, rng) -> np.ndarray:
    """Latent probit variables: N(fit, 1) truncated to (0, inf) where y = 1 and (-inf, 0) where y = 0.

    Sampled by inverting the normal CDF on the truncated interval, written so
    that the interval probability is always a lower-tail mass (no cancellation).
    """
    y = np.asarray(y)
    fit = np.asarray(fit, dtype=float)
    scalar = y.ndim == 0 and fit.ndim == 0
    y, fit = np.broadcast_arrays(np.atleast_1d(y), np.atleast_1d(fit))
    u = 1.0 - rng.random(fit.shape)  # (0, 1]
    sign = np.where(y == 1, 1.0, -1.0)
    # with m = sign*fit, sign*z = m + X where X ~ N(0,1) | X > -m, and -X = ndtri(u * Phi(m))
    m = sign * fit
    mass = ndtr(m)
    with np.errstate(divide="ignore"):
        x = -ndtri(u * mass)
    out = m + x
    tail = ~np.isfinite(out)
    if tail.any():
        # far tail: exceedance over the bound is approximately exponential
        a = -m[tail]
        out[tail] = -np.log(u[tail]) / a
    out = np.maximum(out, np.nextafter(0.0, 1.0))
    out = sign * out
    return out[0] if scalar else out


# ---------------------------------------------------------------------------


def cutpoint_pools(X: np.ndarray):
    """Sorted unique observed values per column, flattened with offsets."""
    pools = [np.unique(col[~np.isnan(col)]) for col in X.T]
    lens = np.array([len(p) for p in pools], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]]).astype(np.int64)
    vals = np.concatenate(pools) if pools else np.empty(0)
    return starts, lens, vals.astype(float)


class _Chain:
    """Mutable sampler state for one chain."""

    def __init__(self, X, q, tau2, beta, eta, probs, mia, pools=None,
                 capacity=CAPACITY, max_depth=MAX_DEPTH, prior_only=False, allow_empty=False):
        self.X = np.ascontiguousarray(X, dtype=float)
        n, p = self.X.shape
        if pools is None:
            pools = cutpoint_pools(self.X)
        self.pool_start, self.pool_len, self.pool_vals = pools
        self.has_missing = np.isnan(self.X).any(axis=0) if n else np.zeros(p, bool)
        self.mia = bool(mia)
        self.tau2 = float(tau2)
        self.beta = float(beta)
        self.eta = float(eta)
        self.probs = tuple(float(x) for x in probs)
        self.max_depth = int(max_depth)
        self.prior_only = bool(prior_only)
        self.allow_empty = bool(allow_empty)
        shape = (q, capacity)
        self.kind = np.empty(shape, np.int8)
        self.var = np.full(shape, -1, np.int32)
        self.cut = np.zeros(shape)
        self.miss_left = np.zeros(shape, np.bool_)
        self.left = np.empty(shape, np.int64)
        self.right = np.empty(shape, np.int64)
        self.parent = np.empty(shape, np.int64)
        self.depth = np.empty(shape, np.int64)
        self.used = np.empty(shape, np.bool_)
        self.value = np.empty(shape)
        self.free_stack = np.empty(shape, np.int64)
        self.free_top = np.empty(q, np.int64)
        self.row_leaf = np.empty((q, n), np.int64)
        K.init_state(self.kind, self.left, self.right, self.parent, self.depth, self.used,
                     self.value, self.free_stack, self.free_top, self.row_leaf)
        self.fit = np.zeros(n)
        self.resid = np.zeros(n)
        self.idx_buf = np.empty(max(n, 1), np.int64)
        self.cnt = np.zeros(capacity)
        self.sums = np.zeros(capacity)
        self.accepted = np.zeros(3, np.int64)

    def sweep(self, z, seed):
        K.sweep(int(seed), self.X, z, self.fit, self.resid, self.row_leaf, self.idx_buf,
                self.cnt, self.sums,
                self.kind, self.var, self.cut, self.miss_left, self.left, self.right,
                self.parent, self.depth, self.used, self.value, self.free_stack, self.free_top,
                self.pool_start, self.pool_len, self.pool_vals, self.has_missing, self.mia,
                self.tau2, self.beta, self.eta, self.max_depth, *self.probs,
                self.prior_only, self.allow_empty, self.accepted)

    def export(self):
        return K.export_forest(self.kind, self.var, self.cut, self.miss_left,
                               self.left, self.right, self.used, self.value)

    def tree_depths(self) -> np.ndarray:
        out = np.zeros(self.kind.shape[0], int)
        for t in range(self.kind.shape[0]):
            leaves = self.used[t] & (self.kind[t] == K.LEAF)
            out[t] = self.depth[t][leaves].max()
        return out


@dataclass
class BartModel:
    """Retained posterior draws of a fitted sum-of-trees model.

    Trees are stored in preorder: an internal node's left child follows it
    immediately and ``right`` gives the position of its right child.
    """

    config: BartConfig
    predictors: tuple
    cutpoints: list  # per predictor, sorted unique training values
    has_missing: np.ndarray
    tree_sizes: np.ndarray  # (post_burn * q,)
    kind: np.ndarray
    var: np.ndarray
    cut: np.ndarray
    miss_left: np.ndarray
    value: np.ndarray
    accept_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tree_sizes = np.asarray(self.tree_sizes, np.int64)
        self.kind = np.asarray(self.kind, np.int8)
        self.var = np.asarray(self.var, np.int32)
        self.cut = np.asarray(self.cut, float)
        self.miss_left = np.asarray(self.miss_left, np.bool_)
        self.value = np.asarray(self.value, float)
        self.has_missing = np.asarray(self.has_missing, np.bool_)
        self.tree_start = np.concatenate([[0], np.cumsum(self.tree_sizes)[:-1]]).astype(np.int64)
        self.right = K.right_children(self.kind, self.tree_start, self.tree_sizes)

    @property
    def n_draws(self) -> int:
        return len(self.tree_sizes) // self.config.q

    def draw_trees(self, d: int):
        """Preorder node arrays of every tree in draw ``d``."""
        q = self.config.q
        out = []
        for t in range(d * q, (d + 1) * q):
            s, e = self.tree_start[t], self.tree_start[t] + self.tree_sizes[t]
            out.append(dict(kind=self.kind[s:e], var=self.var[s:e], cut=self.cut[s:e],
                            miss_left=self.miss_left[s:e], value=self.value[s:e]))
        return out

    def _matrix(self, rows, names=None):
        if hasattr(rows, "matrix"):
            names = rows.predictors if names is None else names
            unknown = [n for n in names if n not in self.predictors]
            if unknown:
                raise SchemaError(f"unknown predictor {unknown[0]!r}")
            absent = [n for n in self.predictors if n not in names]
            if absent:
                raise SchemaError(f"predictor {absent[0]!r} missing from rows")
            return rows.matrix(self.predictors)
        X = np.asarray(rows, dtype=float)
        if names is not None:
            names = list(names)
            unknown = [n for n in names if n not in self.predictors]
            if unknown:
                raise SchemaError(f"unknown predictor {unknown[0]!r}")
            X = X[:, [names.index(n) for n in self.predictors]]
        if X.ndim != 2 or X.shape[1] != len(self.predictors):
            raise SchemaError(f"expected {len(self.predictors)} predictor columns, got shape {X.shape}")
        return X

    def latent_and_prob(self, rows, names=None):
        X = self._matrix(rows, names)
        if not self.config.mia_enabled and np.isnan(X).any():
            raise MissingDataError("rows contain missing cells but the model was fitted without missingness splits")
        n = X.shape[0]
        s = np.zeros(n)
        prob = np.zeros(n)
        draw_start = np.arange(0, self.n_draws + 1, dtype=np.int64) * self.config.q
        K.predict_forests(np.ascontiguousarray(X.T), self.kind, self.var, self.cut, self.miss_left, self.value,
                          self.right, self.tree_start, draw_start, self.n_draws, s, prob)
        return s, prob


def _training_matrix(rows, names):
    if hasattr(rows, "matrix"):
        names = rows.predictors if names is None else tuple(names)
        return rows.matrix(names), tuple(names)
    X = np.asarray(rows, dtype=float)
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return X, tuple(names)


def fit(rows, labels, config: BartConfig = BartConfig(), predictor_names: Sequence[str] | None = None,
        progress=None) -> BartModel:
    """Run the sampler and keep ``config.post_burn`` draws after ``config.burn_in``.

    ``rows`` is a float matrix (NaN for missing cells) or a FirmPanel; labels
    are 0/1 per row.
    """
    X, names = _training_matrix(rows, predictor_names)
    y = np.asarray(labels).astype(int)
    if X.shape[0] != y.shape[0]:
        raise SchemaError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.isin(y, (0, 1)).all():
        raise ParameterError("labels must be 0 or 1")
    n_pos = int(y.sum())
    if n_pos < 2 or len(y) - n_pos < 2:
        raise DegenerateOutcomeError(f"need at least two rows of each class, got {n_pos} positive of {len(y)}")
    if not config.mia_enabled and np.isnan(X).any():
        raise MissingDataError(
            f"{int(np.isnan(X).any(axis=1).sum())} training rows have missing cells; "
            "enable missingness splits or pass complete cases"
        )
    rng = np.random.default_rng(config.seed)
    pools = cutpoint_pools(X)
    chain = _Chain(X, config.q, config.sigma_q**2, config.beta, config.eta,
                   config.proposal_probs, config.mia_enabled, pools)
    kept = []
    total = config.burn_in + config.post_burn
    for it in range(total):
        z = draw_latent(y, chain.fit, rng)
        chain.sweep(z, rng.integers(2**31 - 1))
        if it >= config.burn_in:
            kept.append(chain.export())
        if progress is not None:
            progress(it + 1, total)
    sizes, kind, var, cut, ml, val = (np.concatenate(parts) for parts in zip(*kept))
    starts, lens, vals = pools
    cutpoints = [vals[s:s + n] for s, n in zip(starts, lens)]
    return BartModel(config, names, cutpoints, chain.has_missing.copy(), sizes, kind, var, cut, ml, val,
                     accept_counts={"grow": int(chain.accepted[0]), "prune": int(chain.accepted[1]),
                                    "change": int(chain.accepted[2])})


def predict(model: BartModel, rows, predictor_names: Sequence[str] | None = None) -> np.ndarray:
    """Posterior mean of Phi(sum of trees) for each row."""
    return model.latent_and_prob(rows, predictor_names)[1]


def vip(model: BartModel) -> dict:
    """Share of split rules, over all retained draws, that use each predictor.

    A missingness split counts toward the predictor whose missingness it tests.
    """
    internal = model.kind != K.LEAF
    counts = np.bincount(model.var[internal], minlength=len(model.predictors)).astype(float)
    total = counts.sum()
    props = counts / total if total > 0 else counts
    return dict(zip(model.predictors, props.tolist()))


# ---------------------------------------------------------------------------
# JSON documents


def to_document(model: BartModel) -> dict:
    q = model.config.q
    draws = []
    for d in range(model.n_draws):
        t0, t1 = d * q, (d + 1) * q
        s = model.tree_start[t0]
        e = model.tree_start[t1 - 1] + model.tree_sizes[t1 - 1]
        draws.append({
            "tree_sizes": model.tree_sizes[t0:t1].tolist(),
            "kind": model.kind[s:e].tolist(),
            "predictor": model.var[s:e].tolist(),
            "cutpoint": model.cut[s:e].tolist(),
            "missing_left": model.miss_left[s:e].astype(int).tolist(),
            "value": model.value[s:e].tolist(),
        })
    return {
        "format": "exportscore-model",
        "version": FORMAT_VERSION,
        "model_kind": "bart-mia" if model.config.mia_enabled else "bart",
        "config": model.config.to_dict(),
        "predictors": list(model.predictors),
        "cutpoints": [c.tolist() for c in model.cutpoints],
        "has_missing": model.has_missing.astype(int).tolist(),
        "node_kinds": {"0": "numeric", "1": "missingness", "2": "leaf"},
        "accept_counts": model.accept_counts,
        "draws": draws,
    }


def from_document(doc: dict) -> BartModel:
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported model document version {doc.get('version')!r}")
    draws = doc["draws"]
    cat = lambda key, dt: np.array([v for d in draws for v in d[key]], dtype=dt)
    return BartModel(
        config=BartConfig.from_dict(doc["config"]),
        predictors=tuple(doc["predictors"]),
        cutpoints=[np.asarray(c, float) for c in doc["cutpoints"]],
        has_missing=np.asarray(doc["has_missing"], bool),
        tree_sizes=cat("tree_sizes", np.int64),
        kind=cat("kind", np.int8),
        var=cat("predictor", np.int32),
        cut=cat("cutpoint", float),
        miss_left=cat("missing_left", bool),
        value=cat("value", float),
        accept_counts=dict(doc.get("accept_counts", {})),
    )
