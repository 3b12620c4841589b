import math

import numpy as np
import pytest

from vitalsurv.core import ModelParams
from vitalsurv.revival import CovarianceModel, MeanModel
from vitalsurv.survival import SurvivalFamily


def make_params(shape=1.5, scale=10.0, alpha=(0.1,), curve=(2.0, 0.0), beta=(0.0, 1.0),
                sigma_b2=1.0, sigma_g2=2.0, rho=1.0, sigma_e2=0.25, kernel="ou"):
    return ModelParams(
        SurvivalFamily("weibull", (shape, scale)),
        MeanModel(alpha=alpha, curve=curve, beta=beta),
        CovarianceModel(sigma_b2, sigma_g2, rho, sigma_e2, kernel=kernel),
    )


@pytest.fixture
def params():
    return make_params()


@pytest.fixture
def small_params():
    """Short survival so that small desk-scale datasets contain many deaths."""
    return make_params(shape=1.5, scale=3.0, sigma_b2=0.5, sigma_g2=1.0, rho=0.7, sigma_e2=0.3)


def gauss_logpdf(y, mean, cov):
    from scipy.stats import multivariate_normal
    return float(multivariate_normal(mean=mean, cov=cov).logpdf(y))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


LOG2 = math.log(2.0)
