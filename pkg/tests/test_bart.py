import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from exportscore import bart
from exportscore import _treekernels as K
from exportscore.errors import DegenerateOutcomeError, MissingDataError, ParameterError, SchemaError

FAST = bart.BartConfig(q=20, burn_in=60, post_burn=80, seed=3)


def probit_data(n=600, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    eta = 1.2 * X[:, 0] - 0.8 * X[:, 1]
    y = (rng.random(n) < stats.norm.cdf(eta)).astype(int)
    return X, y, stats.norm.cdf(eta)


def test_split_prior_values():
    np.testing.assert_allclose(bart.split_prior([0, 1, 2]), [0.95, 0.95 / 4, 0.95 / 9])


def test_leaf_prior_scale():
    assert bart.leaf_prior_scale(50, 2) == pytest.approx(3 / (2 * np.sqrt(50)))
    assert FAST.sigma_q == pytest.approx(3 / (2 * np.sqrt(20)))


@pytest.mark.parametrize("kw", [dict(beta=1.0), dict(eta=-1), dict(q=0), dict(sigma2=2.0),
                                dict(proposal_probs=(0.5, 0.5, 0.5)), dict(post_burn=0)])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        bart.BartConfig(**kw)


def test_config_dict_round_trip():
    assert bart.BartConfig.from_dict(FAST.to_dict()) == FAST


@given(st.lists(st.floats(-5, 5), min_size=0, max_size=30), st.floats(0.05, 3.0))
def test_leaf_posterior_matches_quadrature(r, sigma_q):
    r = np.array(r)
    mean, var = bart.leaf_posterior(r, 1.0, sigma_q)

    def logpost(mu):
        return -0.5 * np.sum((r - mu) ** 2) - 0.5 * mu**2 / sigma_q**2

    c = logpost(mean)
    sd = np.sqrt(var)
    # integrate over u = (mu - mean) / sd so the integrands are of order one
    w = lambda u: np.exp(logpost(mean + sd * u) - c)
    quad = lambda f: integrate.quad(f, -12, 12, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
    z = quad(w)
    m1 = mean + sd * quad(lambda u: u * w(u)) / z
    m2 = sd**2 * quad(lambda u: (u - (m1 - mean) / sd) ** 2 * w(u)) / z
    assert m1 == pytest.approx(mean, abs=1e-8)
    assert m2 == pytest.approx(var, abs=1e-8)


def test_draw_latent_signs_and_moments(rng):
    y = np.r_[np.ones(50_000), np.zeros(50_000)]
    z = bart.draw_latent(y, np.full(y.size, 0.3), rng)
    assert np.all(z[:50_000] > 0) and np.all(z[50_000:] < 0)
    mean_pos = 0.3 + stats.norm.pdf(0.3) / stats.norm.cdf(0.3)
    assert z[:50_000].mean() == pytest.approx(mean_pos, abs=0.01)


def test_draw_latent_far_tail_is_finite(rng):
    z = bart.draw_latent(np.array([1, 0]), np.array([-40.0, 40.0]), rng)
    assert np.all(np.isfinite(z)) and z[0] > 0 and z[1] < 0


def test_prior_only_depth_matches_branching_process():
    X = np.arange(6.0).reshape(6, 1)
    ch = bart._Chain(X, q=1, tau2=1.0, beta=0.95, eta=2.0, probs=(0.28, 0.28, 0.44), mia=False,
                     prior_only=True, allow_empty=True)
    rng = np.random.default_rng(0)
    depths = []
    for it in range(40_000):
        ch.sweep(np.zeros(6), rng.integers(2**31 - 1))
        depths.append(ch.tree_depths()[0])
    depths = np.array(depths[500:])

    def cdf(d, D):
        ps = 0.95 * (1 + d) ** -2.0
        return 1 - ps if d == D else (1 - ps) + ps * cdf(d + 1, D) ** 2

    pmf = np.diff([0] + [cdf(0, D) for D in range(4)])
    emp = np.bincount(depths, minlength=4)[:4] / len(depths)
    np.testing.assert_allclose(emp, pmf, atol=0.02)


def test_missingness_rule_routes_nan():
    assert K.goes_left(np.nan, K.MISSINGNESS, 0.0, False)
    assert not K.goes_left(1.0, K.MISSINGNESS, 0.0, False)
    assert K.goes_left(np.nan, K.NUMERIC, 0.5, True)
    assert not K.goes_left(np.nan, K.NUMERIC, 0.5, False)
    assert K.goes_left(0.5, K.NUMERIC, 0.5, False)


@pytest.fixture(scope="module")
def fitted():
    X, y, p = probit_data()
    return bart.fit(X, y, FAST), X, y, p


def test_fit_recovers_signal(fitted):
    model, X, y, p = fitted
    pred = bart.predict(model, X)
    assert np.all((pred > 0) & (pred < 1))
    assert stats.spearmanr(pred, p)[0] > 0.85
    assert abs(pred.mean() - y.mean()) < 0.05
    assert model.n_draws == FAST.post_burn


def test_fit_is_deterministic(fitted):
    model, X, y, _ = fitted
    again = bart.fit(X, y, FAST)
    np.testing.assert_array_equal(bart.predict(again, X), bart.predict(model, X))


def test_vip_sums_to_one_and_finds_signal(fitted):
    model, *_ = fitted
    v = bart.vip(model)
    assert sum(v.values()) == pytest.approx(1.0)
    assert v["x2"] < max(v["x0"], v["x1"])


def test_document_round_trip(fitted):
    model, X, *_ = fitted
    back = bart.from_document(bart.to_document(model))
    np.testing.assert_array_equal(bart.predict(back, X), bart.predict(model, X))


def test_predict_by_name_reorders(fitted):
    model, X, *_ = fitted
    perm = X[:, [2, 0, 1]]
    np.testing.assert_array_equal(bart.predict(model, perm, ["x2", "x0", "x1"]), bart.predict(model, X))
    with pytest.raises(SchemaError):
        bart.predict(model, X, ["a", "b", "c"])


def test_mia_uses_missingness_signal():
    rng = np.random.default_rng(1)
    n = 800
    X = rng.normal(size=(n, 2))
    y = (rng.random(n) < 0.5).astype(int)
    # missing cells are informative: only non-exporters lose x0
    X[(y == 0) & (rng.random(n) < 0.7), 0] = np.nan
    model = bart.fit(X, y, FAST)
    pred = bart.predict(model, X)
    miss = np.isnan(X[:, 0])
    assert pred[miss].mean() < pred[~miss].mean() - 0.2


def test_missing_without_mia_raises():
    X, y, _ = probit_data(100)
    X[0, 0] = np.nan
    with pytest.raises(MissingDataError):
        bart.fit(X, y, bart.BartConfig(q=5, burn_in=2, post_burn=2, mia_enabled=False))


def test_degenerate_outcome():
    X, _, _ = probit_data(50)
    with pytest.raises(DegenerateOutcomeError):
        bart.fit(X, np.r_[np.ones(49), 0], FAST)
