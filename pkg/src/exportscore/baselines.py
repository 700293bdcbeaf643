"""Comparison classifiers: logit, LASSO-logit, CART and random forest.

All four train on complete cases only. Rows with any missing predictor are
dropped at fit time (the count is kept on the model) and receive a NaN score
at prediction time, so every baseline is evaluated on the same row set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DegenerateOutcomeError, ParameterError, SchemaError


class SeparationWarning(UserWarning):
    """Maximum-likelihood logit estimates do not exist (perfect or quasi-perfect separation)."""


def _design(rows, names):
    if hasattr(rows, "matrix"):
        names = rows.predictors if names is None else tuple(names)
        return rows.matrix(names), tuple(names)
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return X, tuple(names)


def _complete(X, y=None):
    keep = ~np.isnan(X).any(axis=1)
    if y is None:
        return keep
    return keep, X[keep], np.asarray(y)[keep].astype(float)


def _loglik(y, eta):
    # sum of y*eta - log(1 + e^eta), stable for large |eta|
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


@dataclass
class LogitModel:
    predictors: tuple
    intercept: float
    coef: np.ndarray
    status: str = "converged"  # converged | separation | max_iter
    n_iter: int = 0
    n_obs: int = 0
    n_dropped: int = 0
    loglik: float = float("nan")
    kind: str = "logit"
    extra: dict = field(default_factory=dict)

    def decision(self, X):
        return self.intercept + X @ self.coef

    def predict(self, rows, names=None) -> np.ndarray:
        X = rows.matrix(self.predictors) if hasattr(rows, "matrix") else _design(rows, names)[0]
        out = np.full(X.shape[0], np.nan)
        keep = _complete(X)
        out[keep] = expit(self.decision(X[keep]))
        return out


def _irls(X1, y, beta0=None, tol=1e-8, max_iter=100):
    """Newton-Raphson on the logit log-likelihood; X1 includes the intercept column."""
    beta = np.zeros(X1.shape[1]) if beta0 is None else beta0.copy()
    for it in range(1, max_iter + 1):
        eta = X1 @ beta
        p = expit(eta)
        w = p * (1 - p)
        sw = np.sqrt(w)
        # rows with fitted probability exactly 0 or 1 carry no curvature; zero them out
        live = sw > 0
        work = np.zeros_like(y)
        work[live] = (y[live] - p[live]) / sw[live]
        step, *_ = np.linalg.lstsq(X1 * sw[:, None], work, rcond=None)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            return beta, it, True
    return beta, max_iter, False


def _separated(X1, y, beta, converged):
    eta = X1 @ beta
    pos, neg = eta[y == 1], eta[y == 0]
    if pos.min() >= neg.max():
        return True
    # quasi-separation: some fitted probabilities pinned at 0 or 1 and no convergence
    return not converged and np.max(np.abs(eta)) > 30


def fit_logit(rows, labels, predictor_names: Sequence[str] | None = None,
              tol: float = 1e-8, max_iter: int = 100) -> LogitModel:
    """Maximum-likelihood logit by iteratively reweighted least squares.

    Converges when the largest coefficient update falls below ``tol``.
    Under separation the iterate at the cap is returned with status
    ``"separation"`` and a :class:`SeparationWarning`.
    """
    X, names = _design(rows, predictor_names)
    y_all = np.asarray(labels)
    if X.shape[0] != y_all.shape[0]:
        raise SchemaError(f"{X.shape[0]} rows but {y_all.shape[0]} labels")
    keep, X, y = _complete(X, y_all)
    if len(np.unique(y)) < 2:
        raise DegenerateOutcomeError("logit needs both outcomes among complete cases")
    X1 = np.column_stack([np.ones(len(y)), X])
    beta, n_iter, converged = _irls(X1, y, tol=tol, max_iter=max_iter)
    status = "converged" if converged else "max_iter"
    if _separated(X1, y, beta, converged):
        status = "separation"
        warnings.warn("logit: outcome is (quasi-)separated by the predictors; "
                          "coefficients are not finite maximum-likelihood estimates", SeparationWarning)
    return LogitModel(names, float(beta[0]), beta[1:], status, n_iter, int(keep.sum()),
                      int((~keep).sum()), _loglik(y, X1 @ beta))


# ---------------------------------------------------------------------------
# LASSO-logit


@dataclass(frozen=True)
class LassoConfig:
    """Path and selection settings.

    The penalised problem ``min -loglik/n + lam * ||beta||_1`` is the
    Lagrangian form of the constrained fit ``||beta||_1 <= k``; each grid
    value of ``lam`` corresponds to one budget ``k``.
    """

    n_lambda: int = 100
    lambda_ratio: float = 1e-4
    gamma: float = 0.5
    tol: float = 1e-7
    max_iter: int = 200

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ParameterError(f"EBIC gamma must lie in [0, 1], got {self.gamma}")
        if self.n_lambda < 1 or not (0 < self.lambda_ratio < 1):
            raise ParameterError("n_lambda must be >= 1 and lambda_ratio in (0, 1)")


@dataclass
class LassoPath:
    lambdas: np.ndarray
    intercepts: np.ndarray  # original scale
    coefs: np.ndarray  # (n_lambda, p), original scale
    std_coefs: np.ndarray  # (n_lambda, p), standardized scale
    std_intercepts: np.ndarray
    loglik: np.ndarray
    ebic: np.ndarray
    selected: int
    mean: np.ndarray
    scale: np.ndarray

    @property
    def nonzero(self) -> np.ndarray:
        return (self.std_coefs != 0).sum(axis=1)


def lambda_max(Xs, y) -> float:
    """Smallest penalty at which every standardized slope is exactly zero."""
    return float(np.max(np.abs(Xs.T @ (y - y.mean()))) / len(y))


def _soft(x, t):
    return math.copysign(max(abs(x) - t, 0.0), x)


def _lasso_logit_at(Xs, y, lam, beta, b0, tol, max_iter):
    """Proximal-Newton coordinate descent at a single penalty, warm-started."""
    n, p = Xs.shape
    for _ in range(max_iter):
        eta = b0 + Xs @ beta
        pr = expit(eta)
        w = np.maximum(pr * (1 - pr), 1e-10)
        z = eta + (y - pr) / w
        sw = w.sum()
        xbar = (w @ Xs) / sw
        zbar = (w @ z) / sw
        Xc = Xs - xbar
        G = (Xc * w[:, None]).T @ Xc / n
        c = (Xc * w[:, None]).T @ (z - zbar) / n
        new = beta.copy()
        for _inner in range(10_000):
            delta = 0.0
            for j in range(p):
                if G[j, j] <= 0:
                    continue
                old = new[j]
                g = c[j] - G[j] @ new + G[j, j] * old
                new[j] = _soft(g, lam) / G[j, j]
                delta = max(delta, abs(new[j] - old))
            if delta < tol * 0.1:
                break
        new_b0 = zbar - xbar @ new
        change = max(np.max(np.abs(new - beta), initial=0.0), abs(new_b0 - b0))
        beta, b0 = new, new_b0
        if change < tol:
            break
    return beta, b0


def lasso_logit_path(rows, labels, lambdas=None, config: LassoConfig = LassoConfig(),
                     predictor_names=None) -> LassoPath:
    """Solution path over a decreasing penalty grid with EBIC for each point.

    Predictors are standardized internally (mean 0, sd 1); coefficients are
    also reported back on the original scale. EBIC is
    ``-2 loglik + df ln n + 2 gamma df ln p`` and the selected point minimises it.
    """
    X, names = _design(rows, predictor_names)
    _, X, y = _complete(X, labels)
    n, p = X.shape
    if len(np.unique(y)) < 2:
        raise DegenerateOutcomeError("LASSO-logit needs both outcomes among complete cases")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Xs = (X - mean) / scale
    if lambdas is None:
        lmax = lambda_max(Xs, y)
        lambdas = lmax * np.logspace(0, math.log10(config.lambda_ratio), config.n_lambda)
        # at lmax itself the threshold ties |gradient| up to rounding
        lambdas[0] *= 1 + 1e-12
    lambdas = np.asarray(lambdas, dtype=float)
    beta = np.zeros(p)
    ybar = y.mean()
    b0 = math.log(ybar / (1 - ybar))
    std_coefs, std_b0, ll = [], [], []
    for lam in lambdas:
        beta, b0 = _lasso_logit_at(Xs, y, lam, beta, b0, config.tol, config.max_iter)
        std_coefs.append(beta.copy())
        std_b0.append(b0)
        ll.append(_loglik(y, b0 + Xs @ beta))
    std_coefs = np.array(std_coefs)
    std_b0 = np.array(std_b0)
    ll = np.array(ll)
    df = (std_coefs != 0).sum(axis=1)
    ebic = -2 * ll + df * math.log(n) + 2 * config.gamma * df * math.log(p)
    coefs = std_coefs / scale
    intercepts = std_b0 - coefs @ mean
    return LassoPath(lambdas, intercepts, coefs, std_coefs, std_b0, ll, ebic,
                     int(np.argmin(ebic)), mean, scale)


def fit_lasso_logit(rows, labels, config: LassoConfig = LassoConfig(), predictor_names=None):
    """EBIC-selected LASSO-logit and the names of predictors with nonzero coefficients."""
    X, names = _design(rows, predictor_names)
    keep = _complete(X)
    path = lasso_logit_path(X, labels, config=config)
    k = path.selected
    selected = [nm for nm, b in zip(names, path.std_coefs[k]) if b != 0]
    model = LogitModel(names, float(path.intercepts[k]), path.coefs[k].copy(),
                       "converged", 0, int(keep.sum()), int((~keep).sum()), float(path.loglik[k]),
                       kind="lasso-logit",
                       extra={"lambda": float(path.lambdas[k]), "gamma": config.gamma,
                              "ebic": float(path.ebic[k]), "selected": selected})
    return model, selected


# ---------------------------------------------------------------------------
# trees


@dataclass
class TreeArrays:
    """A fitted binary tree: rows with x[feature] <= threshold go left."""

    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray  # share of class 1 in each node

    @classmethod
    def from_sklearn(cls, est) -> "TreeArrays":
        t = est.tree_
        value = t.value[:, 0, :]
        value = value / value.sum(axis=1, keepdims=True)
        classes = list(est.classes_)
        prob = value[:, classes.index(1)] if 1 in classes else np.zeros(t.node_count)
        feat = np.where(t.children_left < 0, -1, t.feature).astype(np.int64)
        return cls(feat, t.threshold.astype(float), t.children_left.astype(np.int64),
                   t.children_right.astype(np.int64), prob.astype(float))

    def leaves(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.prob[self.leaves(X)]

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "prob")}

    @classmethod
    def from_dict(cls, d) -> "TreeArrays":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["prob"], float))


@dataclass
class CartModel:
    predictors: tuple
    tree: TreeArrays
    ccp_alpha: float = 0.0
    n_obs: int = 0
    n_dropped: int = 0
    cv: dict = field(default_factory=dict)
    kind: str = "cart"

    def predict(self, rows, names=None) -> np.ndarray:
        X = rows.matrix(self.predictors) if hasattr(rows, "matrix") else _design(rows, names)[0]
        out = np.full(X.shape[0], np.nan)
        keep = _complete(X)
        out[keep] = self.tree.predict_proba(X[keep])
        return out


def _grow_tree(X, y, min_leaf, seed, ccp_alpha=0.0, max_features=None):
    from sklearn.tree import DecisionTreeClassifier

    est = DecisionTreeClassifier(criterion="gini", min_samples_leaf=min_leaf, ccp_alpha=ccp_alpha,
                                 max_features=max_features, random_state=seed)
    est.fit(X, y)
    return est


def fit_cart(rows, labels, predictor_names=None, min_leaf: int = 5, folds: int = 5,
             seed: int = 0, prune: bool = True, max_alphas: int = 20) -> CartModel:
    """Gini tree, cost-complexity pruned by k-fold cross-validation with the one-SE rule.

    Candidate penalties are the geometric midpoints of the pruning path,
    thinned to at most ``max_alphas`` values.
    """
    from sklearn.model_selection import StratifiedKFold

    X, names = _design(rows, predictor_names)
    keep, X, y = _complete(X, labels)
    y = y.astype(int)
    full = _grow_tree(X, y, min_leaf, seed)
    if not prune or len(np.unique(y)) < 2 or len(y) < 2 * folds:
        return CartModel(names, TreeArrays.from_sklearn(full), 0.0, len(y), int((~keep).sum()))
    path = full.cost_complexity_pruning_path(X, y)
    alphas = np.unique(path.ccp_alphas)
    mids = np.sqrt(alphas[:-1] * alphas[1:]) if len(alphas) > 1 else alphas
    mids = np.concatenate([[0.0], mids[mids > 0]])
    if len(mids) > max_alphas:
        mids = mids[np.unique(np.linspace(0, len(mids) - 1, max_alphas).round().astype(int))]
    errors = np.zeros((folds, len(mids)))
    kf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    for f, (tr, te) in enumerate(kf.split(X, y)):
        for a, alpha in enumerate(mids):
            est = _grow_tree(X[tr], y[tr], min_leaf, seed, ccp_alpha=alpha)
            errors[f, a] = np.mean(est.predict(X[te]) != y[te])
    mean = errors.mean(axis=0)
    se = errors.std(axis=0, ddof=1) / math.sqrt(folds)
    best = int(np.argmin(mean))
    ok = np.flatnonzero(mean <= mean[best] + se[best])
    chosen = float(mids[ok.max()])
    est = _grow_tree(X, y, min_leaf, seed, ccp_alpha=chosen)
    cv = {"alphas": mids.tolist(), "cv_error": mean.tolist(), "cv_se": se.tolist()}
    return CartModel(names, TreeArrays.from_sklearn(est), chosen, len(y), int((~keep).sum()), cv)


@dataclass
class ForestModel:
    """Bagged unpruned trees; the score is the share of trees voting for class 1."""

    predictors: tuple
    trees: list
    mtry: int
    tree_seeds: list
    oob_accuracy: float = float("nan")
    bootstrap: bool = True
    n_obs: int = 0
    n_dropped: int = 0
    kind: str = "forest"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def votes(self, X) -> np.ndarray:
        # a leaf whose class-1 share is exactly one half votes 0
        return np.mean([t.predict_proba(X) > 0.5 for t in self.trees], axis=0)

    def predict(self, rows, names=None) -> np.ndarray:
        X = rows.matrix(self.predictors) if hasattr(rows, "matrix") else _design(rows, names)[0]
        out = np.full(X.shape[0], np.nan)
        keep = _complete(X)
        if keep.any():
            out[keep] = self.votes(X[keep])
        return out


def fit_forest(rows, labels, n_trees: int = 500, mtry: int | None = None, predictor_names=None,
               seed: int = 0, bootstrap: bool = True, min_leaf: int = 1) -> ForestModel:
    """Random forest of Gini trees, ``mtry`` candidate predictors per split (default floor(sqrt p))."""
    from sklearn.ensemble import RandomForestClassifier

    X, names = _design(rows, predictor_names)
    keep, X, y = _complete(X, labels)
    y = y.astype(int)
    p = X.shape[1]
    mtry = max(int(math.floor(math.sqrt(p))), 1) if mtry is None else int(mtry)
    if not (1 <= mtry <= p):
        raise ParameterError(f"mtry must lie in [1, {p}], got {mtry}")
    rf = RandomForestClassifier(n_estimators=n_trees, max_features=mtry, bootstrap=bootstrap,
                                min_samples_leaf=min_leaf, random_state=seed)
    rf.fit(X, y)
    trees = [TreeArrays.from_sklearn(est) for est in rf.estimators_]
    seeds = [int(est.random_state) for est in rf.estimators_]
    oob = float("nan")
    if bootstrap:
        votes = np.zeros(len(y))
        counts = np.zeros(len(y))
        for tree, sample in zip(trees, rf.estimators_samples_):
            out = np.ones(len(y), bool)
            out[sample] = False
            votes[out] += tree.predict_proba(X[out]) > 0.5
            counts[out] += 1
        seen = counts > 0
        if seen.any():
            pred = (votes[seen] / counts[seen]) > 0.5
            oob = float(np.mean(pred == y[seen]))
    return ForestModel(names, trees, mtry, seeds, oob, bootstrap, len(y), int((~keep).sum()))
