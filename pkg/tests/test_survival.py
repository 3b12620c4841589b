import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from vitalsurv import survival
from vitalsurv.errors import ParameterDomainError
from vitalsurv.survival import SurvivalFamily

FAMS = [
    (SurvivalFamily("exponential", (0.7,)), stats.expon(scale=1 / 0.7)),
    (SurvivalFamily("weibull", (1.5, 10.0)), stats.weibull_min(1.5, scale=10.0)),
    (SurvivalFamily("weibull", (0.6, 2.0)), stats.weibull_min(0.6, scale=2.0)),
    (SurvivalFamily("gamma", (2.0, 1.0)), stats.gamma(2.0, scale=1.0)),
    (SurvivalFamily("gamma", (0.5, 3.0)), stats.gamma(0.5, scale=1 / 3.0)),
]


@pytest.mark.parametrize("fam,ref", FAMS)
def test_against_scipy_distributions(fam, ref):
    t = np.array([1e-3, 0.1, 0.5, 1.0, 2.5, 7.0, 20.0])
    np.testing.assert_allclose(fam.logpdf(t), ref.logpdf(t), rtol=1e-12)
    np.testing.assert_allclose(fam.logsf(t), ref.logsf(t), rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(fam.ppf([0.1, 0.5, 0.9]), ref.ppf([0.1, 0.5, 0.9]), rtol=1e-10)
    assert fam.mean() == pytest.approx(ref.mean(), rel=1e-12)


def test_density_examples():
    assert survival.density(0.0, SurvivalFamily("exponential", (1.0,))) == 1.0
    assert survival.density(1.0, SurvivalFamily("gamma", (2.0, 1.0))) == pytest.approx(math.exp(-1), rel=1e-14)
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(SurvivalFamily("weibull", (1.0, 2.5)).pdf(t),
                               SurvivalFamily("exponential", (0.4,)).pdf(t), rtol=1e-14)


def test_gamma_density_from_hazard_integral():
    # f(t) = h(t) exp(-int_0^t h), integrating the hazard numerically
    fam = SurvivalFamily("gamma", (2.0, 1.0))
    H, _ = integrate.quad(lambda s: float(fam.hazard(s)), 0, 1.0, epsabs=1e-13)
    assert float(fam.hazard(1.0)) * math.exp(-H) == pytest.approx(0.36787944117144233, rel=1e-9)


def test_survivor_examples():
    for fam, _ in FAMS:
        assert survival.survivor(0.0, fam) == 1.0
    assert survival.survivor(math.log(2), SurvivalFamily("exponential", (1.0,))) == pytest.approx(0.5, rel=1e-15)
    fam = SurvivalFamily("weibull", (1.5, 10.0))
    eps = 1e-6
    for t in (0.5, 3.0, 12.0):
        assert (fam.sf(t) - fam.sf(t + eps)) / eps == pytest.approx(float(fam.pdf(t + eps / 2)), rel=1e-7)


@pytest.mark.parametrize("fam,ref", FAMS)
def test_survivor_equals_tail_integral(fam, ref):
    for t in (0.0, 0.3, 1.0, 4.0):
        tail, _ = integrate.quad(lambda s: float(fam.pdf(s)), t, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        assert abs(float(fam.sf(t)) - tail) < 1e-8


def test_negative_time_is_rejected():
    fam = SurvivalFamily()
    with pytest.raises(ParameterDomainError):
        survival.survivor(-1.0, fam)
    with pytest.raises(ParameterDomainError):
        survival.density(-0.1, fam)


@pytest.mark.parametrize("family,params", [("weibull", (0.0, 1.0)), ("exponential", (-1.0,)),
                                           ("gamma", (1.0,)), ("lognormal", (1.0, 1.0)),
                                           ("weibull", (math.inf, 1.0))])
def test_invalid_parameters(family, params):
    with pytest.raises(ParameterDomainError):
        SurvivalFamily(family, params)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["exponential", "weibull", "gamma"]), st.floats(0.2, 5.0), st.floats(0.1, 10.0),
       st.lists(st.floats(0.0, 50.0), min_size=2, max_size=10))
def test_hazard_nonnegative_and_survivor_monotone(family, p1, p2, ts):
    params = (p1,) if family == "exponential" else (p1, p2)
    fam = SurvivalFamily(family, params)
    t = np.sort(np.asarray(ts))
    s = fam.sf(t)
    assert np.all(np.diff(s) <= 1e-15)
    h = fam.hazard(t[s > 0])
    assert np.all(h[np.isfinite(h)] >= 0)


def test_sampling_exponential_mean():
    rng = np.random.default_rng(1)
    x = SurvivalFamily("exponential", (2.0,)).sample(rng, 100_000)
    assert abs(x.mean() - 0.5) < 3 * 0.5 / math.sqrt(x.size)


def test_sampling_weibull_median():
    rng = np.random.default_rng(2)
    x = SurvivalFamily("weibull", (1.5, 10.0)).sample(rng, 100_000)
    med = 10 * math.log(2) ** (2 / 3)
    assert med == pytest.approx(7.8321, abs=1e-4)
    f = float(SurvivalFamily("weibull", (1.5, 10.0)).pdf(med))
    se = 1 / (2 * f * math.sqrt(x.size))  # asymptotic SE of the sample median
    assert abs(np.median(x) - med) < 3 * se


@pytest.mark.parametrize("fam,ref", FAMS)
def test_sampling_ks(fam, ref):
    rng = np.random.default_rng(3)
    x = fam.sample(rng, 100_000)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_inverse_cdf_boundary():
    for fam, _ in FAMS:
        assert float(fam.ppf(0.0)) == 0.0


def test_log_interval_mass():
    fam = SurvivalFamily("weibull", (1.5, 10.0))
    assert float(fam.log_interval_mass(2.0, 5.0)) == pytest.approx(math.log(fam.sf(2.0) - fam.sf(5.0)), rel=1e-13)
