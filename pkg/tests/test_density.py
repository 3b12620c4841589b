import math

import numpy as np
import pytest
from scipy import integrate, stats

from vitalsurv.core import FLAT, ModelParams
from vitalsurv.density import (ClinicalPredictive, joint_density, log_interval_censored_mass, log_joint_density,
                               log_marginal_density, marginal_density)
from vitalsurv.errors import DomainError
from vitalsurv.revival import CovarianceModel, MeanModel, conditional_moments
from vitalsurv.survival import SurvivalFamily

from conftest import make_params


def t_free_params(family=SurvivalFamily("weibull", (1.5, 4.0))):
    # alpha = 0, m0 = 0: conditional moments do not depend on t
    return ModelParams(family, MeanModel(alpha=(0.0,), curve=(0.0, 0.0)), CovarianceModel(0.0, 0.0, 1.0, 1.0))


def test_joint_density_example():
    p = ModelParams(SurvivalFamily("exponential", (1.0,)), MeanModel(alpha=(0.0,), curve=(0.0, 0.0)),
                    CovarianceModel(0.0, 0.0, 1.0, 1.0))
    assert joint_density([0.5], [0.0], 1.0, 0, p) == pytest.approx(math.exp(-1) / math.sqrt(2 * math.pi), rel=1e-15)


def test_joint_density_against_scipy(params):
    ts, y, t = [0.0, 1.0, 2.5], [3.0, 2.5, 1.0], 4.2
    g, S = conditional_moments(ts, t, 1, params.mean, params.cov)
    ref = stats.weibull_min(1.5, scale=10).logpdf(t) + stats.multivariate_normal(g, S).logpdf(y)
    assert log_joint_density(ts, y, t, 1, params) == pytest.approx(ref, rel=1e-13)


def test_joint_density_zero_before_last_time(params):
    assert joint_density([0.0, 2.0], [1.0, 1.0], 1.5, 0, params) == 0.0


def test_empty_grid_is_survival_density(params):
    for t in (0.3, 5.0):
        assert log_joint_density([], [], t, 0, params) == pytest.approx(float(params.survival.logpdf(t)), rel=1e-15)
    assert marginal_density([], [], 0, params) == pytest.approx(1.0, abs=1e-15)


def test_t_free_marginal_is_gaussian_times_survivor():
    p = t_free_params()
    ts, y = [0.0, 1.0, 2.0], [0.3, -0.5, 1.2]
    expected = stats.norm.logpdf(y).sum() + float(p.survival.logsf(2.0))
    assert log_marginal_density(ts, y, 0, p) == pytest.approx(expected, rel=1e-8)


def test_marginal_matches_scipy_quad(params):
    ts, y = [0.0, 0.5, 1.0], [4.0, 3.6, 3.9]

    def q(t):
        return math.exp(log_joint_density(ts, y, t, 0, params))

    ref, _ = integrate.quad(q, 1.0, np.inf, epsabs=0, epsrel=1e-12, limit=500)
    assert marginal_density(ts, y, 0, params) == pytest.approx(ref, rel=1e-8)


def riemann_oracle(ts, y, arm, p: ModelParams, upper, n_panels=1_000_000, lower=None):
    """Midpoint rule with n panels on (max ts, upper); the tail beyond ``upper`` is negligible."""
    ts = np.asarray(ts, float)
    y = np.asarray(y, float)
    a = ts[-1] if lower is None else lower
    h = (upper - a) / n_panels
    t = a + h * (np.arange(n_panels) + 0.5)
    mm, cm = p.mean, p.cov
    # mean written out from the model definition: alpha1 t + c1 log(1+z) + c2 z + beta (s > 0)
    z = t[:, None] - ts[None, :]
    beta = np.where(ts > 0, mm.beta[arm], 0.0)
    mu = mm.alpha[0] * t[:, None] + mm.curve[0] * np.log1p(z) + mm.curve[1] * z + beta[None, :]
    d = np.abs(ts[:, None] - ts[None, :])
    S = cm.sigma_b2 + cm.sigma_g2 * np.exp(-d / cm.rho) + cm.sigma_e2 * np.eye(ts.size)
    Sinv = np.linalg.inv(S)
    _, logdet = np.linalg.slogdet(S)
    r = y[None, :] - mu
    quad = np.einsum("ij,jk,ik->i", r, Sinv, r)
    k_, lam = p.survival.params
    logf = math.log(k_ / lam) + (k_ - 1) * np.log(t / lam) - (t / lam) ** k_
    lq = logf - 0.5 * (ts.size * math.log(2 * math.pi) + logdet + quad)
    m = lq.max()
    return m + math.log(np.sum(np.exp(lq - m)) * h)


@pytest.mark.parametrize("ts,y,arm", [
    ([0.0, 0.25, 0.5], [5.0, 4.8, 5.1], 0),
    ([0.0, 1.0, 2.0, 3.0], [3.0, 2.4, 1.9, 1.0], 1),
    ([0.0], [7.0], 1),
])
def test_marginal_matches_riemann_oracle(params, ts, y, arm):
    ref = riemann_oracle(ts, y, arm, params, upper=200.0)
    got = log_marginal_density(ts, y, arm, params)
    assert abs(math.exp(got - ref) - 1) < 1e-6


def test_censored_lower_limit(params):
    ts, y = [0.0, 0.5], [4.0, 3.0]
    ref = riemann_oracle(ts, y, 0, params, upper=200.0, lower=6.0)
    got = log_marginal_density(ts, y, 0, params, lower=6.0)
    assert abs(math.exp(got - ref) - 1) < 1e-6


def test_interval_censored_mass(params):
    ts = [0.0, 1.0, 2.0, 3.0]
    vals = [4.0, 3.2, FLAT, FLAT]

    def q(t):
        return math.exp(log_joint_density(ts[:2], vals[:2], t, 0, params))

    ref, _ = integrate.quad(q, 1.0, 2.0, epsabs=0, epsrel=1e-12)
    assert math.exp(log_interval_censored_mass(ts, vals, 0, params)) == pytest.approx(ref, rel=1e-9)
    # all FLAT: probability of death before the first appointment
    m = log_interval_censored_mass([0.5, 1.0], [FLAT, FLAT], 0, params)
    assert math.exp(m) == pytest.approx(1 - float(params.survival.sf(0.5)), rel=1e-12)


def test_interval_censored_requires_flat(params):
    with pytest.raises(DomainError):
        log_interval_censored_mass([0.0, 1.0], [1.0, 2.0], 0, params)
    with pytest.raises(DomainError):
        log_interval_censored_mass([0.0, 1.0, 2.0], [FLAT, 1.0, FLAT], 0, params)


def test_predictive_normalised(params):
    pred = ClinicalPredictive([0.0, 1.0, 2.0], [3.0, 2.1, 1.5], 1, params)
    total, _ = integrate.quad(lambda t: float(pred.pdf(t)[0]), pred.lower, np.inf, epsabs=0, epsrel=1e-11, limit=500)
    assert abs(total - 1) < 1e-6
    grid = np.linspace(2.0, 30.0, 40)
    s = pred.sf(grid)
    assert np.all(np.diff(s) <= 1e-12)
    assert pred.sf(2.0)[0] == 1.0
    q = pred.ppf(0.5)
    assert float(pred.sf(q)[0]) == pytest.approx(0.5, abs=1e-8)


def test_predictive_empty_history_is_prior(params):
    pred = ClinicalPredictive([], [], 0, params)
    t = np.array([0.5, 3.0, 12.0])
    np.testing.assert_allclose(pred.pdf(t), params.survival.pdf(t), rtol=1e-12)
    np.testing.assert_allclose(pred.sf(t), params.survival.sf(t), rtol=1e-9)


def test_predictive_depends_on_values(params):
    # low health values at the last visit point to imminent death
    sick = ClinicalPredictive([0.0, 1.0], [3.0, 0.5], 0, params)
    well = ClinicalPredictive([0.0, 1.0], [6.0, 6.5], 0, params)
    assert sick.ppf(0.5) < well.ppf(0.5)
