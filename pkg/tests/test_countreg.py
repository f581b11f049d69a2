import math

import numpy as np
import pytest
from scipy import special, stats

from remixmine import countreg as cr
from remixmine.errors import (
    EstimationError, InsufficientDataError, PreconditionError, SingularDesignError,
    UndefinedTestError,
)
from remixmine.synth import make_rng, simulate_regression


def _sim(family, n=3000, seed=0, cb=(0.5, -0.3), zb=None, alpha=0.0):
    X, Z, y = simulate_regression(family, n, cb, zb, alpha=alpha, seed=seed)
    return X[:, 1:], (None if Z is None else Z[:, 1:]), y


# ---------------------------------------------------------------- likelihood oracles

def test_poisson_loglik_matches_scipy():
    X, _, y = _sim("poisson", 500)
    m = cr.fit_poisson(X, y)
    mu = np.exp(m.params[0] + X[:, 0] * m.params[1])
    assert m.log_likelihood == pytest.approx(stats.poisson.logpmf(y, mu).sum(), rel=1e-10)


def test_negbin_loglik_matches_scipy():
    X, _, y = _sim("negbin", 800, alpha=0.7)
    m = cr.fit_negbin(X, y)
    mu = np.exp(m.params[0] + X[:, 0] * m.params[1])
    theta = 1.0 / m.dispersion
    ref = stats.nbinom.logpmf(y, theta, theta / (theta + mu)).sum()
    assert m.log_likelihood == pytest.approx(ref, rel=1e-10)


def test_negbin_huge_theta_is_stable():
    y = np.array([0, 1, 2, 5, 9], float)
    mu = np.full(5, 2.0)
    for la in (-12.0, -20.0):
        ll = cr._nb_parts(y, mu, la)[0]
        assert np.allclose(ll, stats.poisson.logpmf(y, mu), atol=1e-4)
    # the expansion and the direct formula agree where both are accurate
    t = np.array([2e4])
    k = np.array([7.0])
    direct = special.gammaln(k + t) - special.gammaln(t)
    assert cr._lgamma_ratio(k, t) == pytest.approx(direct, rel=1e-10)


def test_zinb_pi_zero_equals_nb():
    X, _, y = _sim("negbin", 600, alpha=0.5)
    nb = cr.fit_negbin(X, y)
    Xd = np.column_stack([np.ones(len(y)), X])
    fam = cr.ZeroInflated(Xd, Xd, y.astype(float), negbin=True)
    theta = np.concatenate([nb.params, [-745.0, 0.0]])
    assert fam.loglik(theta) == pytest.approx(nb.log_likelihood, rel=1e-12)


def test_truncated_density_sums_to_one():
    fam = cr.TruncNegBin(np.ones((60, 1)), np.arange(1, 61))
    assert np.exp(fam.loglik_obs(np.array([math.log(3.0), math.log(0.8)]))).sum() == \
        pytest.approx(1.0, abs=1e-6)
    fam = cr.TruncPoisson(np.ones((40, 1)), np.arange(1, 41))
    assert np.exp(fam.loglik_obs(np.array([math.log(2.5)]))).sum() == pytest.approx(1.0)


# ---------------------------------------------------------------- gradients

def _families():
    rng = make_rng(11)
    n = 300
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    Z = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = rng.negative_binomial(2, 0.4, n).astype(float)
    y[rng.random(n) < 0.3] = 0
    pos = y > 0
    yb = (y > 0).astype(float)
    return [
        (cr.Poisson(X, y), 3), (cr.NegBin(X, y), 4), (cr.Logit(X, yb), 3),
        (cr.TruncPoisson(X[pos], y[pos]), 3), (cr.TruncNegBin(X[pos], y[pos]), 4),
        (cr.ZeroInflated(X, Z, y, negbin=True), 6), (cr.ZeroInflated(X, Z, y, negbin=False), 5),
    ]


@pytest.mark.parametrize("fam,k", _families(), ids=lambda v: getattr(v, "name", str(v)))
def test_gradient_matches_finite_differences(fam, k):
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(20):
        theta = rng.uniform(-0.6, 0.6, k)
        g = fam.gradient(theta)
        fd = np.empty(k)
        for j in range(k):
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            fd[j] = (fam.loglik(up) - fam.loglik(dn)) / (2 * h)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1.0)
        assert rel < 1e-5


# ---------------------------------------------------------------- poisson

def test_intercept_only_is_log_mean():
    y = np.array([0, 1, 1, 2, 3, 5, 0, 4])
    m = cr.fit_poisson(np.empty((8, 0)), y)
    assert m.params[0] == pytest.approx(math.log(y.mean()), abs=1e-10)


def test_poisson_score_identity():
    X, _, y = _sim("poisson", 2000, seed=3)
    m = cr.fit_poisson(X, y)
    Xd = np.column_stack([np.ones(len(y)), X])
    mu = np.exp(Xd @ m.params)
    assert np.max(np.abs(Xd.T @ (y - mu))) < 1e-6
    assert m.converged and m.gradient_norm < 1e-6


def test_poisson_all_zero():
    with pytest.raises(EstimationError):
        cr.fit_poisson(np.ones((5, 1)) * np.arange(5)[:, None], np.zeros(5))


def test_singular_design():
    x = np.arange(10.0)
    with pytest.raises(SingularDesignError):
        cr.fit_poisson(np.column_stack([x, 2 * x]), np.arange(10) % 3)


def test_bad_outcomes():
    with pytest.raises(PreconditionError):
        cr.fit_poisson(np.arange(3.0), [1, -1, 2])
    with pytest.raises(PreconditionError):
        cr.fit_poisson(np.arange(3.0), [1, 0.5, 2])


# ---------------------------------------------------------------- negbin and LRT

def test_negbin_on_poisson_data():
    X, _, y = _sim("poisson", 3000, seed=4)
    p = cr.fit_poisson(X, y)
    nb = cr.fit_negbin(X, y, start=p)
    assert nb.log_likelihood >= p.log_likelihood - 1e-9
    assert nb.dispersion < 0.05
    assert nb.log_likelihood - p.log_likelihood < 2.0


def test_boundary_gives_half():
    # under-dispersed outcome: score for alpha at zero is negative
    y = np.array([2, 2, 3, 2, 3, 2, 2, 3, 2, 3])
    p = cr.fit_poisson(np.empty((10, 0)), y)
    nb = cr.fit_negbin(np.empty((10, 0)), y, start=p)
    assert nb.boundary and nb.dispersion == 0.0
    t = cr.lrt_overdispersion(p, nb)
    assert t.statistic == 0.0 and t.p_value == 0.5 and t.p_value_plain == 1.0
    assert np.isnan(nb.covariance[-1, -1])


def test_huge_variance_fixture():
    rng = make_rng(8)
    theta = 1.0 / 1032.0
    y = rng.negative_binomial(theta, theta / (theta + 1.0), 20000)
    p = cr.fit_poisson(np.empty((len(y), 0)), y)
    nb = cr.fit_negbin(np.empty((len(y), 0)), y, start=p)
    assert nb.dispersion > 100
    assert cr.lrt_overdispersion(p, nb).p_value < 0.001


def test_lrt_mismatched_data():
    X, _, y = _sim("poisson", 200)
    p = cr.fit_poisson(X, y)
    X2, _, y2 = _sim("negbin", 200, seed=9, alpha=1.0)
    nb = cr.fit_negbin(X2, y2)
    with pytest.raises(PreconditionError):
        cr.lrt_overdispersion(p, nb)
    with pytest.raises(PreconditionError):
        cr.lrt_overdispersion(nb, p)


# ---------------------------------------------------------------- two-part models

def test_hurdle_parts_add_up():
    X, Z, y = _sim("hurdle", 2000, seed=2, zb=(0.3, 0.8), alpha=0.6)
    m = cr.fit_hurdle(X, Z, y)
    assert m.log_likelihood == pytest.approx(sum(m.part_loglik.values()), rel=1e-12)
    assert m.loglik_obs.sum() == pytest.approx(m.log_likelihood, rel=1e-10)
    logit = cr.fit_logit(Z, (y > 0).astype(int))
    assert m.part_loglik["binary"] == pytest.approx(logit.log_likelihood, rel=1e-10)
    assert m.parts == ["count", "binary"]


def test_hurdle_without_zeros():
    X, _, y = _sim("negbin", 500, seed=6, cb=(1.5, 0.2), alpha=0.3)
    keep = y > 0
    m = cr.fit_hurdle(X[keep], None, y[keep])
    t = cr.fit_trunc_negbin(X[keep], y[keep])
    assert m.degenerate
    assert m.log_likelihood == pytest.approx(t.log_likelihood, rel=1e-10)
    assert np.allclose(m.params[:t.n_params], t.params)


def test_hurdle_without_positives():
    with pytest.raises(InsufficientDataError):
        cr.fit_hurdle(np.arange(5.0), None, np.zeros(5))


def test_hurdle_drops_unidentified_count_column():
    rng = make_rng(4)
    n = 400
    x = rng.standard_normal(n)
    flag = (rng.random(n) < 0.3).astype(float)
    y = rng.poisson(np.exp(0.5 + 0.3 * x))
    y[flag == 1] = 0
    m = cr.fit_hurdle(np.column_stack([x, flag]), None, y, names=["x", "flag"])
    assert ("count", "flag") not in m.param_names
    assert ("binary", "flag") in m.param_names
    assert m.notes


def test_zinb_nests_nb_on_zero_heavy_data():
    X, Z, y = _sim("zinb", 3000, seed=5, zb=(-0.5, 1.0), alpha=0.5)
    nb = cr.fit_negbin(X, y)
    zi = cr.fit_zinb(X, Z, y)
    assert zi.log_likelihood >= nb.log_likelihood
    assert zi.converged and zi.gradient_norm < 1e-6
    assert zi.parts == ["count", "inflate"]


def test_nesting_on_fixtures():
    for seed, fam in enumerate(("poisson", "negbin", "zinb", "hurdle")):
        X, Z, y = _sim(fam, 1500, seed=seed, zb=(0.0, 0.5), alpha=0.8)
        p = cr.fit_poisson(X, y)
        nb = cr.fit_negbin(X, y, start=p)
        zi = cr.fit_zinb(X, None, y)
        assert nb.log_likelihood >= p.log_likelihood - 1e-9
        assert zi.log_likelihood >= nb.log_likelihood - 1e-6


# ---------------------------------------------------------------- vuong / aic

def test_vuong_identical_models():
    X, _, y = _sim("poisson", 300)
    m = cr.fit_poisson(X, y)
    with pytest.raises(UndefinedTestError):
        cr.vuong(m, m)


def test_vuong_antisymmetry():
    X, Z, y = _sim("zinb", 2000, seed=1, zb=(-0.5, 1.0), alpha=0.5)
    a, b = cr.fit_zinb(X, Z, y), cr.fit_hurdle(X, Z, y)
    ab, ba = cr.vuong(a, b), cr.vuong(b, a)
    assert ab.statistic == pytest.approx(-ba.statistic)
    assert ab.p_value == pytest.approx(ba.p_value)
    assert ab.preferred == ba.preferred


def test_vuong_definition():
    X, _, y = _sim("negbin", 1000, seed=2, alpha=1.0)
    p, nb = cr.fit_poisson(X, y), cr.fit_negbin(X, y)
    d = nb.loglik_obs - p.loglik_obs
    z = math.sqrt(len(d)) * d.mean() / d.std(ddof=1)
    v = cr.vuong(nb, p)
    assert v.statistic == pytest.approx(z)
    assert v.p_value == pytest.approx(stats.norm.sf(abs(z)))


def test_aic_values():
    assert cr.aic((45, -60_952)) == 121_994
    assert cr.aic((0, 0.0)) == 0.0
    X, _, y = _sim("poisson", 1000, seed=12)
    small = cr.fit_poisson(X, y)
    noise = make_rng(99).standard_normal(len(y))
    big = cr.fit_poisson(np.column_stack([X, noise]), y)
    gain = big.log_likelihood - small.log_likelihood
    assert big.aic - small.aic == pytest.approx(2 - 2 * gain)
    if gain < 1:
        assert big.aic > small.aic


def test_test_result_validates_p():
    with pytest.raises(ValueError):
        cr.TestResult(1.0, 1.5, "vuong")


# ---------------------------------------------------------------- clustered SEs

def test_singleton_clusters_are_robust_ses():
    X, _, y = _sim("negbin", 800, seed=7, alpha=0.5)
    m = cr.fit_poisson(X, y)
    n, k = m.n_obs, m.n_params
    bread = m.covariance
    hc0 = bread @ (m.scores.T @ m.scores) @ bread
    got = cr.cluster_covariance(m, range(n))
    assert np.allclose(got, n / (n - k) * hc0, rtol=1e-10)


def test_single_cluster_rejected():
    X, _, y = _sim("poisson", 50)
    with pytest.raises(PreconditionError):
        cr.clustered_se(cr.fit_poisson(X, y), ["g"] * 50)


def test_two_clusters():
    X, _, y = _sim("poisson", 60)
    m = cr.fit_poisson(X, y)
    ids = ["a"] * 30 + ["b"] * 30
    se = cr.clustered_se(m, ids)
    assert np.all(np.isfinite(se))
    S = np.vstack([m.scores[:30].sum(0), m.scores[30:].sum(0)])
    V = 2.0 * (59 / 58) * m.covariance @ S.T @ S @ m.covariance
    assert np.allclose(se, np.sqrt(np.diag(V)))


def test_boundary_parameter_gets_nan():
    y = np.array([2, 2, 3, 2, 3, 2, 2, 3, 2, 3])
    nb = cr.fit_negbin(np.arange(10.0) % 2, y)
    se = cr.clustered_se(nb, [i % 5 for i in range(10)])
    assert np.isnan(se[-1]) and np.all(np.isfinite(se[:-1]))


@pytest.mark.slow
def test_clustered_exceeds_naive_under_correlation():
    wins = 0
    reps = 100
    for r in range(reps):
        rng = make_rng(1000 + r)
        G, size = 50, 20
        g = np.repeat(np.arange(G), size)
        x = rng.standard_normal(G)[g] + 0.3 * rng.standard_normal(G * size)
        u = 0.6 * rng.standard_normal(G)[g]
        y = rng.poisson(np.exp(0.2 + 0.4 * x + u))
        m = cr.fit_poisson(x, y)
        wins += cr.clustered_se(m, g)[1] > m.se[1]
    assert wins >= 0.95 * reps


# ---------------------------------------------------------------- factor change

def _stub(params, se):
    k = len(params)
    return cr.FittedModel(
        family="poisson", params=np.array(params, float),
        param_names=[("count", f"x{i}") for i in range(k)], log_likelihood=0.0, n_obs=100,
        covariance=np.diag(np.square(se)), converged=True, iterations=1,
        loglik_obs=np.zeros(100), scores=np.zeros((100, k)), y=np.zeros(100),
    )


def test_factor_change_values():
    rows = cr.factor_change(_stub([0.389, -0.481, 0.0], [0.05, 0.1, 0.3]))
    assert round(rows[0].exp_beta, 2) == 1.48
    assert round(rows[1].exp_beta, 2) == 0.62
    assert rows[2].exp_beta == 1.0
    assert rows[0].stars == "***" and rows[2].stars == ""
    assert rows[0].p_value == pytest.approx(2 * stats.norm.sf(0.389 / 0.05))


@pytest.mark.parametrize("p,s", [(0.0005, "***"), (0.005, "**"), (0.03, "*"), (0.2, ""),
                                 (float("nan"), "")])
def test_stars(p, s):
    assert cr.stars(p) == s


def test_factor_change_prefers_clustered():
    m = _stub([0.5], [0.1])
    m.clustered_covariance = np.array([[0.04]])
    assert cr.factor_change(m)[0].se == pytest.approx(0.2)


def test_factor_change_skips_log_alpha():
    X, _, y = _sim("negbin", 500, alpha=1.0)
    names = [r.predictor for r in cr.factor_change(cr.fit_negbin(X, y))]
    assert "log_alpha" not in names and names[0] == "(intercept)"


# ---------------------------------------------------------------- selection

def test_select_poisson_data():
    X, _, y = _sim("poisson", 2000, seed=21, cb=(1.2, 0.3))
    winner, trace = cr.select_model(X, y)
    assert trace.base in ("poisson", "negbin")
    assert winner.family in ("poisson", "negbin")
    assert "lrt_overdispersion" in trace.tests
    assert trace.lines[-1] == f"selected: {winner.family}"


def test_select_zinb_data():
    X, Z, y = _sim("zinb", 2000, seed=22, cb=(0.5, 0.8), zb=(-0.5, 1.0), alpha=0.5)
    winner, trace = cr.select_model(X, y)
    assert winner.family == "zinb"
    assert trace.tests["vuong_zinb"].statistic > 0
    assert winner.aic < trace.models["negbin"].aic


def test_select_zip_data():
    X, Z, y = _sim("zip", 2000, seed=23, cb=(0.8, 0.4), zb=(-0.3, 0.8))
    winner, trace = cr.select_model(X, y)
    assert winner.family == "zip"
    assert "zip" in trace.models


def test_select_with_clusters():
    X, Z, y = _sim("zinb", 1000, seed=24, cb=(0.5, 0.8), zb=(-0.5, 1.0), alpha=0.5)
    winner, trace = cr.select_model(X, y, clusters=[i % 40 for i in range(len(y))])
    assert winner.clustered_covariance is not None
    assert all(m.clustered_covariance is not None for m in trace.models.values())


# ---------------------------------------------------------------- coverage

@pytest.mark.slow
@pytest.mark.parametrize("family", ["poisson", "negbin"])
def test_wald_coverage(family):
    beta = np.array([0.5, -0.3])
    hits = np.zeros(2)
    reps = 500
    for r in range(reps):
        X, _, y = simulate_regression(family, 5000, beta, alpha=0.8, seed=10_000 + r)
        fit = cr.fit_poisson if family == "poisson" else cr.fit_negbin
        m = fit(X[:, 1:], y)
        lo = m.params[:2] - 1.96 * m.se[:2]
        hi = m.params[:2] + 1.96 * m.se[:2]
        hits += (lo <= beta) & (beta <= hi)
    cover = hits / reps
    assert np.all((cover >= 0.93) & (cover <= 0.97)), cover
