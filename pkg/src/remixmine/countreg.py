"""Count-data regression: Poisson, NB2, logit, zero-truncated, hurdle and
zero-inflated models, plus the tests used to choose between them.

Every family exposes per-observation log-likelihoods and analytic scores.
Fits use a damped Newton iteration with a backtracking line search; the
Hessian is analytic for Poisson and logit and a central difference of the
analytic gradient otherwise. Dispersion is optimised as log(alpha).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import special, stats

from .errors import (
    EstimationError, InsufficientDataError, PreconditionError, SingularDesignError,
    UndefinedTestError,
)

log = logging.getLogger(__name__)

FAMILIES = (
    "poisson", "negbin", "logit", "trunc_poisson", "trunc_negbin",
    "hurdle", "hurdle_poisson", "zinb", "zip",
)
# log(alpha) below this is treated as the Poisson boundary
BOUNDARY_LOG_ALPHA = -15.0
_MAX_STEP = 5.0


# ---------------------------------------------------------------------------
# numerics


def _lgamma_ratio(y, theta):
    """log Gamma(y + theta) - log Gamma(theta), stable for huge theta."""
    out = np.empty(np.broadcast(y, theta).shape)
    y, theta = np.broadcast_arrays(y, theta)
    big = theta > 1e4
    sm = ~big
    out[sm] = special.gammaln(y[sm] + theta[sm]) - special.gammaln(theta[sm])
    if big.any():
        t, k = theta[big], y[big]
        out[big] = ((t - 0.5) * np.log1p(k / t) + k * np.log(t + k) - k
                    + 1.0 / (12.0 * (t + k)) - 1.0 / (12.0 * t))
    return out


def _digamma_diff(y, theta):
    """psi(y + theta) - psi(theta)."""
    out = np.empty(np.broadcast(y, theta).shape)
    y, theta = np.broadcast_arrays(y, theta)
    big = theta > 1e4
    sm = ~big
    out[sm] = special.digamma(y[sm] + theta[sm]) - special.digamma(theta[sm])
    if big.any():
        t, k = theta[big], y[big]
        out[big] = (np.log1p(k / t) - 0.5 / (t + k) + 0.5 / t
                    - 1.0 / (12.0 * (t + k) ** 2) + 1.0 / (12.0 * t ** 2))
    return out


def _mu(X, beta, offset):
    eta = X @ beta
    if offset is not None:
        eta = eta + offset
    return np.exp(np.clip(eta, -700, 700))


def _nb_parts(y, mu, log_alpha):
    """Per-observation NB2 log-likelihood, d/d eta, d/d log(alpha), log P(0)."""
    alpha = math.exp(log_alpha)
    theta = 1.0 / alpha
    am = alpha * mu
    l1p = np.log1p(am)
    ll = (_lgamma_ratio(y, theta) - special.gammaln(y + 1.0) - theta * l1p
          + y * (np.log(am) - l1p))
    d_eta = (y - mu) / (1.0 + am)
    d_la = -theta * (_digamma_diff(y, theta) - l1p) + (y - mu) / (1.0 + am)
    log_p0 = -theta * l1p
    dlogp0_eta = -mu / (1.0 + am)
    dlogp0_la = theta * l1p - mu / (1.0 + am)
    return ll, d_eta, d_la, log_p0, dlogp0_eta, dlogp0_la


def _log1mexp(x):
    """log(1 - exp(x)) for x < 0."""
    return np.where(x > -0.693, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


# ---------------------------------------------------------------------------
# families


class _Family:
    name = ""
    parts = ()

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)
        self.n = len(self.y)

    def loglik_obs(self, theta):
        raise NotImplementedError

    def score_obs(self, theta):
        raise NotImplementedError

    def loglik(self, theta):
        return float(np.sum(self.loglik_obs(theta)))

    def gradient(self, theta):
        return self.score_obs(theta).sum(axis=0)

    def hessian(self, theta):
        k = len(theta)
        H = np.empty((k, k))
        for j in range(k):
            h = 1e-5 * max(1.0, abs(theta[j]))
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            H[:, j] = (self.gradient(up) - self.gradient(dn)) / (2 * h)
        return 0.5 * (H + H.T)


class Poisson(_Family):
    name = "poisson"

    def __init__(self, X, y, offset=None):
        super().__init__(y)
        self.X, self.offset = X, offset
        self._lgy = special.gammaln(self.y + 1.0)

    def loglik_obs(self, beta):
        eta = self.X @ beta + (0 if self.offset is None else self.offset)
        return self.y * eta - np.exp(np.clip(eta, -700, 700)) - self._lgy

    def score_obs(self, beta):
        return (self.y - _mu(self.X, beta, self.offset))[:, None] * self.X

    def hessian(self, beta):
        mu = _mu(self.X, beta, self.offset)
        return -(self.X * mu[:, None]).T @ self.X


class Logit(_Family):
    name = "logit"

    def __init__(self, X, y):
        super().__init__(y)
        self.X = X

    def loglik_obs(self, gamma):
        eta = self.X @ gamma
        return self.y * eta - np.logaddexp(0.0, eta)

    def score_obs(self, gamma):
        return (self.y - special.expit(self.X @ gamma))[:, None] * self.X

    def hessian(self, gamma):
        p = special.expit(self.X @ gamma)
        return -(self.X * (p * (1 - p))[:, None]).T @ self.X


class NegBin(_Family):
    name = "negbin"

    def __init__(self, X, y, offset=None):
        super().__init__(y)
        self.X, self.offset = X, offset

    def loglik_obs(self, theta):
        mu = _mu(self.X, theta[:-1], self.offset)
        return _nb_parts(self.y, mu, theta[-1])[0]

    def score_obs(self, theta):
        mu = _mu(self.X, theta[:-1], self.offset)
        _, d_eta, d_la, *_ = _nb_parts(self.y, mu, theta[-1])
        return np.column_stack([d_eta[:, None] * self.X, d_la])


class TruncPoisson(_Family):
    """Poisson conditioned on y > 0."""

    name = "trunc_poisson"

    def __init__(self, X, y):
        super().__init__(y)
        if np.any(self.y < 1):
            raise PreconditionError("zero-truncated model needs y >= 1")
        self.X = X
        self._lgy = special.gammaln(self.y + 1.0)

    def loglik_obs(self, beta):
        mu = _mu(self.X, beta, None)
        return self.y * np.log(mu) - mu - self._lgy - _log1mexp(-mu)

    def score_obs(self, beta):
        mu = _mu(self.X, beta, None)
        # P0/(1-P0) = 1/expm1(mu)
        d = self.y - mu - mu / np.expm1(mu)
        return d[:, None] * self.X


class TruncNegBin(_Family):
    """NB2 conditioned on y > 0."""

    name = "trunc_negbin"

    def __init__(self, X, y):
        super().__init__(y)
        if np.any(self.y < 1):
            raise PreconditionError("zero-truncated model needs y >= 1")
        self.X = X

    def loglik_obs(self, theta):
        mu = _mu(self.X, theta[:-1], None)
        ll, _, _, log_p0, *_ = _nb_parts(self.y, mu, theta[-1])
        return ll - _log1mexp(log_p0)

    def score_obs(self, theta):
        mu = _mu(self.X, theta[:-1], None)
        _, d_eta, d_la, log_p0, dp_eta, dp_la = _nb_parts(self.y, mu, theta[-1])
        odds = 1.0 / np.expm1(-log_p0)  # P0 / (1 - P0)
        return np.column_stack([(d_eta + odds * dp_eta)[:, None] * self.X,
                                d_la + odds * dp_la])


class ZeroInflated(_Family):
    """Mixture of structural zeros (logit link on Z) and a Poisson or NB2 count."""

    def __init__(self, X, Z, y, negbin=True):
        super().__init__(y)
        self.X, self.Z, self.negbin = X, Z, negbin
        self.name = "zinb" if negbin else "zip"
        self.px = X.shape[1] + (1 if negbin else 0)
        self.zero = self.y == 0
        self._lgy = special.gammaln(self.y + 1.0)

    def _pieces(self, theta):
        beta, gamma = theta[:self.X.shape[1]], theta[self.px:]
        mu = _mu(self.X, beta, None)
        if self.negbin:
            ll, d_eta, d_la, log_p0, dp_eta, dp_la = _nb_parts(self.y, mu, theta[self.px - 1])
        else:
            ll = self.y * np.log(mu) - mu - self._lgy
            d_eta, d_la = self.y - mu, None
            log_p0, dp_eta, dp_la = -mu, -mu, None
        eta_z = self.Z @ gamma
        log_pi = -np.logaddexp(0.0, -eta_z)
        log_1mpi = -np.logaddexp(0.0, eta_z)
        return ll, d_eta, d_la, log_p0, dp_eta, dp_la, eta_z, log_pi, log_1mpi

    def loglik_obs(self, theta):
        ll, _, _, log_p0, _, _, _, log_pi, log_1mpi = self._pieces(theta)
        return np.where(self.zero, np.logaddexp(log_pi, log_1mpi + log_p0), log_1mpi + ll)

    def score_obs(self, theta):
        ll, d_eta, d_la, log_p0, dp_eta, dp_la, eta_z, log_pi, log_1mpi = self._pieces(theta)
        log_l0 = np.logaddexp(log_pi, log_1mpi + log_p0)
        # share of the zero likelihood coming from the count process
        w = np.exp(log_1mpi + log_p0 - log_l0)
        pi = np.exp(log_pi)
        z = self.zero
        s_eta = np.where(z, w * dp_eta, d_eta)
        s_gamma = np.where(z, np.exp(log_pi + log_1mpi - log_l0) * (1 - np.exp(log_p0)), -pi)
        cols = [s_eta[:, None] * self.X]
        if self.negbin:
            cols.append(np.where(z, w * dp_la, d_la)[:, None])
        cols.append(s_gamma[:, None] * self.Z)
        return np.hstack(cols)


# ---------------------------------------------------------------------------
# optimiser


def _newton(fam: _Family, theta0, max_iter=200):
    """Maximise fam.loglik from theta0. Returns (theta, ll, converged, iters, H)."""
    theta = np.asarray(theta0, dtype=float).copy()
    ll = fam.loglik(theta)
    if not np.isfinite(ll):
        raise EstimationError(f"{fam.name}: non-finite log-likelihood at start values")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = fam.gradient(theta)
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        if gmax < 1e-8:
            converged = True
            break
        H = fam.hessian(theta)
        w, V = np.linalg.eigh(-H)
        floor = 1e-10 * max(1.0, float(np.max(np.abs(w))))
        d = V @ ((V.T @ g) / np.maximum(w, floor))
        big = float(np.max(np.abs(d)))
        if big > _MAX_STEP:
            d *= _MAX_STEP / big
        step, new_ll, new = 1.0, -np.inf, theta
        tol = 1e-12 * max(1.0, abs(ll))
        while step > 1e-10:
            cand = theta + step * d
            cand_ll = fam.loglik(cand)
            if np.isfinite(cand_ll) and cand_ll >= ll - tol:
                new, new_ll = cand, cand_ll
                break
            step *= 0.5
        if new is theta:
            converged = gmax < 1e-6
            break
        rel = abs(new_ll - ll) / max(1.0, abs(ll))
        theta, ll = new, new_ll
        if rel < 1e-10:
            gmax = float(np.max(np.abs(fam.gradient(theta))))
            if gmax < 1e-6:
                converged = True
                break
    H = fam.hessian(theta)
    return theta, ll, converged, it, H


def _covariance(H):
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(-H)
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# fitted models


@dataclass
class FittedModel:
    family: str
    params: np.ndarray
    param_names: list  # (part, name) pairs
    log_likelihood: float
    n_obs: int
    covariance: np.ndarray
    converged: bool
    iterations: int
    loglik_obs: np.ndarray = field(repr=False)
    scores: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    dispersion: Optional[float] = None
    clustered_covariance: Optional[np.ndarray] = field(default=None, repr=False)
    boundary: bool = False
    degenerate: bool = False
    gradient_norm: float = 0.0
    part_loglik: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def parts(self) -> list:
        out = []
        for part, _ in self.param_names:
            if part not in out:
                out.append(part)
        return out

    def coefficients(self, part="count") -> dict:
        return {n: float(v) for (p, n), v in zip(self.param_names, self.params)
                if p == part and n != "log_alpha"}

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    @property
    def aic(self) -> float:
        return aic(self)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    kind: str
    p_value_plain: Optional[float] = None
    preferred: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


def _prepare(X, y, intercept, names, prefix="x"):
    y = np.asarray(y)
    if y.ndim != 1:
        raise PreconditionError("outcome must be one-dimensional")
    if np.any(y < 0) or np.any(np.asarray(y, float) != np.round(np.asarray(y, float))):
        raise PreconditionError("outcome must be non-negative integers")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != len(y) and X.size:
        raise PreconditionError("design and outcome lengths differ")
    if X.size == 0:
        X = np.empty((len(y), 0))
    names = list(names) if names is not None else [f"{prefix}{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise PreconditionError("one name per design column is required")
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["(intercept)"] + names
    if X.shape[1] == 0:
        raise PreconditionError("empty design")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError(f"design of {X.shape[1]} columns is rank deficient")
    return X, y.astype(float), names


def independent_columns(X) -> list:
    """Indices of a maximal set of linearly independent columns, chosen
    greedily left to right."""
    keep = []
    for j in range(X.shape[1]):
        trial = X[:, keep + [j]]
        if np.linalg.matrix_rank(trial) == len(keep) + 1:
            keep.append(j)
    return keep


def _finish(fam, family, theta, ll, conv, iters, H, names, y, **kw):
    cov = _covariance(H)
    g = fam.gradient(theta)
    if not conv:
        log.warning("%s fit did not converge after %d iterations", family, iters)
    return FittedModel(
        family=family, params=theta, param_names=names, log_likelihood=ll,
        n_obs=len(y), covariance=cov, converged=conv, iterations=iters,
        loglik_obs=fam.loglik_obs(theta), scores=fam.score_obs(theta), y=np.asarray(y),
        gradient_norm=float(np.max(np.abs(g))) if g.size else 0.0, **kw,
    )


def fit_poisson(X, y, offset=None, names=None, intercept=True) -> FittedModel:
    X, yf, names = _prepare(X, y, intercept, names)
    if yf.sum() == 0:
        raise EstimationError("all outcomes are zero; the Poisson mean is on the boundary")
    fam = Poisson(X, yf, offset)
    start = np.zeros(X.shape[1])
    if intercept:
        start[0] = math.log(yf.mean())
    theta, ll, conv, it, H = _newton(fam, start)
    return _finish(fam, "poisson", theta, ll, conv, it, H, [("count", n) for n in names], yf)


def fit_logit(X, y, names=None, intercept=True) -> FittedModel:
    X, yf, names = _prepare(X, y, intercept, names)
    if np.any(yf > 1):
        raise PreconditionError("logit outcome must be 0/1")
    m = yf.mean()
    if m in (0.0, 1.0):
        raise EstimationError("logit outcome has a single class")
    fam = Logit(X, yf)
    start = np.zeros(X.shape[1])
    if intercept:
        start[0] = math.log(m / (1 - m))
    theta, ll, conv, it, H = _newton(fam, start)
    return _finish(fam, "logit", theta, ll, conv, it, H, [("binary", n) for n in names], yf)


def _alpha_start(y, mu):
    excess = np.sum((y - mu) ** 2 - y) / max(np.sum(mu ** 2), 1e-12)
    return math.log(min(max(excess, 0.05), 50.0))


def _boundary_nb(pois: FittedModel, fam: NegBin) -> FittedModel:
    """NB fit sitting on alpha = 0: Poisson coefficients, alpha SE undefined."""
    k = pois.n_params + 1
    cov = np.full((k, k), np.nan)
    cov[:-1, :-1] = pois.covariance
    theta = np.append(pois.params, -np.inf)
    return FittedModel(
        family="negbin", params=theta,
        param_names=pois.param_names + [("count", "log_alpha")],
        log_likelihood=pois.log_likelihood, n_obs=pois.n_obs, covariance=cov,
        converged=pois.converged, iterations=pois.iterations,
        loglik_obs=pois.loglik_obs, scores=np.column_stack([pois.scores, np.zeros(pois.n_obs)]),
        y=pois.y, dispersion=0.0, boundary=True, gradient_norm=pois.gradient_norm,
    )


def fit_negbin(X, y, offset=None, names=None, intercept=True, start=None) -> FittedModel:
    """NB2 regression. Falls back to the Poisson boundary when the score for
    alpha at alpha = 0 is non-positive or the optimum drifts there."""
    Xd, yf, cols = _prepare(X, y, intercept, names)
    pois = start if start is not None else fit_poisson(X, y, offset, names, intercept)
    mu = _mu(Xd, pois.params, offset)
    fam = NegBin(Xd, yf, offset)
    if 0.5 * np.sum((yf - mu) ** 2 - yf) <= 0:
        return _boundary_nb(pois, fam)
    theta0 = np.append(pois.params, _alpha_start(yf, mu))
    theta, ll, conv, it, H = _newton(fam, theta0)
    if theta[-1] < BOUNDARY_LOG_ALPHA or ll < pois.log_likelihood:
        return _boundary_nb(pois, fam)
    names = [("count", n) for n in cols] + [("count", "log_alpha")]
    return _finish(fam, "negbin", theta, ll, conv, it, H, names, yf,
                   dispersion=math.exp(theta[-1]))


def fit_trunc_negbin(X, y, names=None, intercept=True, start=None) -> FittedModel:
    Xd, yf, cols = _prepare(X, y, intercept, names)
    if len(yf) == 0 or np.any(yf < 1):
        raise InsufficientDataError("zero-truncated fit needs positive outcomes only")
    fam = TruncNegBin(Xd, yf)
    if start is None:
        start = np.zeros(Xd.shape[1] + 1)
        if intercept:
            start[0] = math.log(max(yf.mean() - 1.0, 0.1))
    theta, ll, conv, it, H = _newton(fam, np.asarray(start, float))
    names = [("count", n) for n in cols] + [("count", "log_alpha")]
    if theta[-1] < BOUNDARY_LOG_ALPHA:
        tp = fit_trunc_poisson(X, y, names=[n for _, n in names[1 if intercept else 0:-1]],
                               intercept=intercept)
        k = tp.n_params + 1
        cov = np.full((k, k), np.nan)
        cov[:-1, :-1] = tp.covariance
        return replace(tp, family="trunc_negbin", params=np.append(tp.params, -np.inf),
                       param_names=tp.param_names + [("count", "log_alpha")], covariance=cov,
                       scores=np.column_stack([tp.scores, np.zeros(tp.n_obs)]),
                       dispersion=0.0, boundary=True)
    return _finish(fam, "trunc_negbin", theta, ll, conv, it, H, names, yf,
                   dispersion=math.exp(theta[-1]))


def fit_trunc_poisson(X, y, names=None, intercept=True) -> FittedModel:
    Xd, yf, cols = _prepare(X, y, intercept, names)
    if len(yf) == 0 or np.any(yf < 1):
        raise InsufficientDataError("zero-truncated fit needs positive outcomes only")
    fam = TruncPoisson(Xd, yf)
    start = np.zeros(Xd.shape[1])
    if intercept:
        start[0] = math.log(max(yf.mean() - 1.0, 0.1))
    theta, ll, conv, it, H = _newton(fam, start)
    return _finish(fam, "trunc_poisson", theta, ll, conv, it, H,
                   [("count", n) for n in cols], yf)


def _two_part_inputs(X_count, X_zero, y, names, zero_names):
    if X_zero is None:
        X_zero, zero_names = X_count, names if zero_names is None else zero_names
    return X_count, X_zero, np.asarray(y), names, zero_names


def fit_hurdle(X_count, X_bin=None, y=None, names=None, bin_names=None, intercept=True,
               dist="negbin") -> FittedModel:
    """Hurdle model: logit for P(y > 0) plus a zero-truncated count part.

    The two parts share no parameters, so they are fitted separately and
    the log-likelihood is their sum.
    """
    X_count, X_bin, y, names, bin_names = _two_part_inputs(X_count, X_bin, y, names, bin_names)
    Xb, yf, bcols = _prepare(X_bin, y, intercept, bin_names)
    Xc, _, ccols = _prepare(X_count, y, intercept, names)
    pos = yf > 0
    if not pos.any():
        raise InsufficientDataError("no positive outcomes; the count part cannot be estimated")
    # the positives alone may not identify every column (e.g. a predictor
    # that is always zero once y > 0); such columns leave the count part
    keep = independent_columns(Xc[pos])
    notes = [f"count part drops {ccols[j]}: not identified on y > 0"
             for j in range(Xc.shape[1]) if j not in keep]
    for n in notes:
        log.warning(n)
    keep = [j for j in keep if not (intercept and j == 0)]
    count_names = [ccols[j] for j in keep]
    Xpos = Xc[pos][:, keep]
    if dist == "negbin":
        count = fit_trunc_negbin(Xpos, yf[pos], count_names, intercept)
    elif dist == "poisson":
        count = fit_trunc_poisson(Xpos, yf[pos], count_names, intercept)
    else:
        raise ValueError(f"unknown hurdle distribution {dist!r}")
    degenerate = bool(pos.all())
    kb = Xb.shape[1]
    if degenerate:
        log.warning("no zero outcomes; hurdle binary part is degenerate")
        bparams = np.full(kb, np.nan)
        bcov = np.full((kb, kb), np.nan)
        b_ll_obs = np.zeros(len(yf))
        b_scores = np.zeros((len(yf), kb))
        b_conv, b_it, b_grad = True, 0, 0.0
    else:
        binary = fit_logit(Xb[:, int(intercept):], pos.astype(float),
                           bcols[1:] if intercept else bcols, intercept)
        bparams, bcov = binary.params, binary.covariance
        b_ll_obs, b_scores = binary.loglik_obs, binary.scores
        b_conv, b_it, b_grad = binary.converged, binary.iterations, binary.gradient_norm
    kc = count.n_params
    c_ll = np.zeros(len(yf))
    c_ll[pos] = count.loglik_obs
    c_scores = np.zeros((len(yf), kc))
    c_scores[pos] = count.scores
    cov = np.zeros((kc + kb, kc + kb))
    cov[:kc, :kc] = count.covariance
    cov[kc:, kc:] = bcov
    family = "hurdle" if dist == "negbin" else "hurdle_poisson"
    ll_b = float(b_ll_obs.sum())
    return FittedModel(
        family=family, params=np.concatenate([count.params, bparams]),
        param_names=count.param_names + [("binary", n) for n in bcols],
        log_likelihood=ll_b + count.log_likelihood, n_obs=len(yf), covariance=cov,
        converged=count.converged and b_conv, iterations=count.iterations + b_it,
        loglik_obs=b_ll_obs + c_ll, scores=np.hstack([c_scores, b_scores]), y=yf,
        dispersion=count.dispersion, boundary=count.boundary, degenerate=degenerate,
        gradient_norm=max(count.gradient_norm, b_grad),
        part_loglik={"binary": ll_b, "count": count.log_likelihood}, notes=notes,
    )


def fit_hurdle_poisson(X_count, X_bin=None, y=None, **kw) -> FittedModel:
    return fit_hurdle(X_count, X_bin, y, dist="poisson", **kw)


def fit_zero_inflated(X_count, X_infl=None, y=None, names=None, infl_names=None,
                      intercept=True, dist="negbin", start=None) -> FittedModel:
    """Zero-inflated model; the inflation part gives P(structural zero)."""
    X_count, X_infl, y, names, infl_names = _two_part_inputs(
        X_count, X_infl, y, names, infl_names)
    Xc, yf, ccols = _prepare(X_count, y, intercept, names)
    Xz, _, zcols = _prepare(X_infl, y, intercept, infl_names)
    negbin = dist == "negbin"
    if dist not in ("negbin", "poisson"):
        raise ValueError(f"unknown zero-inflated distribution {dist!r}")
    if not (yf > 0).any():
        raise InsufficientDataError("no positive outcomes; the count part cannot be estimated")
    fam = ZeroInflated(Xc, Xz, yf, negbin)
    if start is None:
        start = _zi_start(X_count, yf, Xz, names, intercept, negbin)
    theta, ll, conv, it, H = _newton(fam, np.asarray(start, float))
    pnames = [("count", n) for n in ccols]
    if negbin:
        pnames.append(("count", "log_alpha"))
    pnames += [("inflate", n) for n in zcols]
    boundary = negbin and theta[fam.px - 1] < BOUNDARY_LOG_ALPHA
    return _finish(fam, fam.name, theta, ll, conv, it, H, pnames, yf,
                   dispersion=math.exp(theta[fam.px - 1]) if negbin else None,
                   boundary=boundary)


def _zi_start(X_count, yf, Xz, names, intercept, negbin):
    pos = yf > 0
    # count part seeded from the positives, inflation from the excess zeros
    try:
        if negbin:
            base = fit_trunc_negbin(np.asarray(X_count, float)[pos], yf[pos], names, intercept)
            cparams = base.params.copy()
            if not np.isfinite(cparams[-1]):
                cparams[-1] = -3.0
            mu = _mu(np.column_stack([np.ones(len(yf)), X_count]) if intercept
                     else np.asarray(X_count, float), cparams[:-1], None)
            p0 = np.exp(-np.log1p(math.exp(cparams[-1]) * mu) / math.exp(cparams[-1]))
        else:
            base = fit_trunc_poisson(np.asarray(X_count, float)[pos], yf[pos], names, intercept)
            cparams = base.params.copy()
            mu = _mu(np.column_stack([np.ones(len(yf)), X_count]) if intercept
                     else np.asarray(X_count, float), cparams, None)
            p0 = np.exp(-mu)
    except (EstimationError, SingularDesignError, InsufficientDataError):
        cparams = np.zeros(np.asarray(X_count).reshape(len(yf), -1).shape[1] + int(intercept)
                           + int(negbin))
        p0 = np.full(len(yf), 0.5)
    zero_frac = float(np.mean(yf == 0))
    expected = float(np.mean(p0))
    pi = min(max((zero_frac - expected) / max(1 - expected, 1e-6), 0.02), 0.95)
    gamma = np.zeros(Xz.shape[1])
    if intercept:
        gamma[0] = math.log(pi / (1 - pi))
    return np.concatenate([cparams, gamma])


def fit_zinb(X_count, X_infl=None, y=None, **kw) -> FittedModel:
    return fit_zero_inflated(X_count, X_infl, y, dist="negbin", **kw)


def fit_zip(X_count, X_infl=None, y=None, **kw) -> FittedModel:
    return fit_zero_inflated(X_count, X_infl, y, dist="poisson", **kw)


# ---------------------------------------------------------------------------
# tests and summaries


def _same_data(m1, m2):
    if m1.n_obs != m2.n_obs or not np.array_equal(m1.y, m2.y):
        raise PreconditionError("models were fitted to different outcomes")


def lrt_overdispersion(poisson: FittedModel, negbin: FittedModel) -> TestResult:
    """LR test of alpha = 0. The boundary-corrected p-value uses the
    half-half mixture of chi2(0) and chi2(1); the plain chi2(1) value is
    kept alongside."""
    if poisson.family != "poisson" or negbin.family != "negbin":
        raise PreconditionError("expects a Poisson and an NB2 model")
    _same_data(poisson, negbin)
    if poisson.n_params + 1 != negbin.n_params:
        raise PreconditionError("models do not share a design")
    stat = max(0.0, 2.0 * (negbin.log_likelihood - poisson.log_likelihood))
    plain = float(stats.chi2.sf(stat, 1))
    return TestResult(stat, 0.5 * plain, "lrt_overdispersion", p_value_plain=plain)


def vuong(m1: FittedModel, m2: FittedModel) -> TestResult:
    """Vuong z for non-nested models; positive favours ``m1``.

    The p-value is one-sided in the direction of the sign of z.
    """
    _same_data(m1, m2)
    if not (m1.converged and m2.converged):
        raise PreconditionError("Vuong test needs converged models")
    m = m1.loglik_obs - m2.loglik_obs
    n = len(m)
    if n < 2:
        raise UndefinedTestError("Vuong test needs at least two observations")
    sd = float(np.std(m, ddof=1))
    if sd <= 1e-12 * max(1.0, float(np.max(np.abs(m)))):
        raise UndefinedTestError("per-observation log-likelihood ratios have zero variance")
    z = math.sqrt(n) * float(np.mean(m)) / sd
    p = float(stats.norm.sf(abs(z)))
    preferred = m1.family if z > 0 else m2.family
    return TestResult(z, p, "vuong", preferred=preferred)


def aic(model) -> float:
    if isinstance(model, FittedModel):
        return 2.0 * model.n_params - 2.0 * model.log_likelihood
    k, ll = model
    return 2.0 * k - 2.0 * ll


def cluster_covariance(model: FittedModel, cluster_ids) -> np.ndarray:
    """CR1 sandwich covariance with per-cluster score sums.

    Parameters whose model variance is undefined (boundary dispersion,
    degenerate parts) get NaN rows and columns.
    """
    ids = list(cluster_ids)
    if len(ids) != model.n_obs:
        raise PreconditionError("one cluster id per observation is required")
    uniq, inv = np.unique(np.asarray(ids, dtype=object).astype(str), return_inverse=True)
    G = len(uniq)
    if G < 2:
        raise PreconditionError("clustered covariance needs at least two clusters")
    k = model.n_params
    ok = np.isfinite(np.diag(model.covariance)) & np.isfinite(model.params)
    bread = model.covariance[np.ix_(ok, ok)]
    S = np.zeros((G, int(ok.sum())))
    np.add.at(S, inv, model.scores[:, ok])
    meat = S.T @ S
    n = model.n_obs
    factor = (G / (G - 1)) * ((n - 1) / (n - k)) if n > k else float("nan")
    V = np.full((k, k), np.nan)
    V[np.ix_(ok, ok)] = factor * bread @ meat @ bread
    return 0.5 * (V + V.T)


def clustered_se(model: FittedModel, cluster_ids) -> np.ndarray:
    V = cluster_covariance(model, cluster_ids)
    return np.sqrt(np.clip(np.diag(V), 0, None))


def with_clusters(model: FittedModel, cluster_ids) -> FittedModel:
    return replace(model, clustered_covariance=cluster_covariance(model, cluster_ids))


def stars(p) -> str:
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class FactorRow:
    part: str
    predictor: str
    beta: float
    exp_beta: float
    se: float
    z: float
    p_value: float
    stars: str


def factor_change(model: FittedModel) -> list:
    """exp(beta) per part and predictor with normal-approximation stars.

    Uses clustered SEs when present, model SEs otherwise. log(alpha) is
    excluded; it is reported as the dispersion instead.
    """
    cov = model.clustered_covariance if model.clustered_covariance is not None \
        else model.covariance
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    se = np.where(np.isfinite(np.diag(cov)), se, np.nan)
    rows = []
    for (part, name), b, s in zip(model.param_names, model.params, se):
        if name == "log_alpha":
            continue
        z = b / s if s and np.isfinite(s) and s > 0 else float("nan")
        p = float(2 * stats.norm.sf(abs(z))) if np.isfinite(z) else float("nan")
        rows.append(FactorRow(part, name, float(b), float(np.exp(b)), float(s),
                              float(z), p, stars(p)))
    return rows


# ---------------------------------------------------------------------------
# selection protocol


@dataclass
class SelectionTrace:
    lines: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    tests: dict = field(default_factory=dict)
    base: str = ""
    winner: str = ""

    def note(self, msg):
        log.info(msg)
        self.lines.append(msg)


def select_model(X, y, clusters=None, names=None, alpha=0.05, intercept=True):
    """Choose among one-part and two-part count models.

    Poisson against NB2 by the overdispersion LRT; the winner's hurdle and
    zero-inflated variants are each compared to it with a Vuong test; the
    ones that beat it significantly are ranked by AIC. Returns the chosen
    model and a trace holding every fitted model and statistic.
    """
    tr = SelectionTrace()
    y = np.asarray(y)
    tr.note(f"n={len(y)} zeros={int(np.sum(y == 0))} mean={np.mean(y):.4f} "
            f"variance={np.var(y, ddof=1) if len(y) > 1 else 0.0:.4f}")
    pois = fit_poisson(X, y, names=names, intercept=intercept)
    nb = fit_negbin(X, y, names=names, intercept=intercept, start=pois)
    tr.models["poisson"], tr.models["negbin"] = pois, nb
    lrt = lrt_overdispersion(pois, nb)
    tr.tests["lrt_overdispersion"] = lrt
    tr.note(f"poisson loglik={pois.log_likelihood:.4f} aic={aic(pois):.4f}")
    tr.note(f"negbin loglik={nb.log_likelihood:.4f} aic={aic(nb):.4f} "
            f"alpha={nb.dispersion:.6g}{' (boundary)' if nb.boundary else ''}")
    tr.note(f"LRT overdispersion chi2={lrt.statistic:.4f} p(boundary)={lrt.p_value:.4g} "
            f"p(plain)={lrt.p_value_plain:.4g}")
    overdispersed = lrt.p_value < alpha
    base = nb if overdispersed else pois
    dist = "negbin" if overdispersed else "poisson"
    tr.base = base.family
    tr.note(f"base distribution: {base.family}")
    candidates = []
    if np.any(y == 0) and np.any(y > 0):
        hurdle = fit_hurdle(X, None, y, names=names, intercept=intercept, dist=dist)
        zi = fit_zero_inflated(X, None, y, names=names, intercept=intercept, dist=dist)
        for m in (hurdle, zi):
            tr.models[m.family] = m
            tr.note(f"{m.family} loglik={m.log_likelihood:.4f} aic={aic(m):.4f} "
                    f"converged={m.converged}")
            try:
                v = vuong(m, base)
            except (UndefinedTestError, PreconditionError) as exc:
                tr.note(f"Vuong {m.family} vs {base.family}: undefined ({exc})")
                continue
            tr.tests[f"vuong_{m.family}"] = v
            better = v.statistic > 0 and v.p_value < alpha
            tr.note(f"Vuong {m.family} vs {base.family}: z={v.statistic:.4f} "
                    f"p={v.p_value:.4g} -> {'two-part preferred' if better else 'not preferred'}")
            if better:
                candidates.append(m)
    else:
        tr.note("outcome has no zeros or no positives; two-part models skipped")
    if candidates:
        winner = min(candidates, key=lambda m: (aic(m), m.family))
        if len(candidates) > 1:
            tr.note("AIC " + " vs ".join(f"{m.family}={aic(m):.4f}" for m in candidates))
    else:
        winner = base
    if winner.family in ("hurdle", "zinb"):
        # zero inflation alone inflates the marginal variance, so re-test
        # alpha = 0 inside the chosen two-part structure
        fit = fit_hurdle if winner.family == "hurdle" else fit_zero_inflated
        alt = fit(X, None, y, names=names, intercept=intercept, dist="poisson")
        tr.models[alt.family] = alt
        stat = max(0.0, 2.0 * (winner.log_likelihood - alt.log_likelihood))
        plain = float(stats.chi2.sf(stat, 1))
        t = TestResult(stat, 0.5 * plain, "lrt_overdispersion", p_value_plain=plain)
        tr.tests[f"lrt_{winner.family}_vs_{alt.family}"] = t
        keep = t.p_value < alpha
        tr.note(f"LRT {winner.family} vs {alt.family} chi2={stat:.4f} "
                f"p(boundary)={t.p_value:.4g} -> keep {winner.family if keep else alt.family}")
        if not keep:
            winner = alt
    tr.winner = winner.family
    tr.note(f"selected: {winner.family}")
    if clusters is not None:
        for key, m in list(tr.models.items()):
            try:
                tr.models[key] = with_clusters(m, clusters)
            except PreconditionError as exc:
                tr.note(f"clustered SEs unavailable for {key}: {exc}")
        winner = tr.models[winner.family]
    return winner, tr
