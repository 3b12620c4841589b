from __future__ import annotations

import math

import numpy as np
from scipy import linalg

from .errors import NumericalError

LOG_2PI = math.log(2.0 * math.pi)


def cholesky(S: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor; on failure retry once with 1e-10 * trace / k jitter."""
    S = np.asarray(S, dtype=float)
    k = S.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    try:
        return linalg.cholesky(S, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        pass
    jitter = 1e-10 * float(np.trace(S)) / k
    try:
        return linalg.cholesky(S + jitter * np.eye(k), lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} matrix is not positive definite ({exc})") from None


def mvn_logpdf_chol(resid: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Gaussian log-density of residual vector(s) given the Cholesky factor.

    ``resid`` is ``(k,)`` or ``(k, m)``; returns scalar or ``(m,)``.
    """
    k = L.shape[0]
    if k == 0:
        return np.zeros(resid.shape[1:]) if resid.ndim > 1 else 0.0
    z = linalg.solve_triangular(L, resid, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (k * LOG_2PI + logdet + np.sum(z * z, axis=0))


def gaussian_condition(mean, cov, idx_obs, values):
    """Condition N(mean, cov) on coordinates ``idx_obs`` taking ``values``.

    Returns (conditional mean, conditional covariance) of the remaining
    coordinates, in their original order.
    """
    n = len(mean)
    obs = np.asarray(idx_obs, dtype=int)
    rest = np.setdiff1d(np.arange(n), obs)
    if obs.size == 0:
        return mean[rest], cov[np.ix_(rest, rest)]
    Loo = cholesky(cov[np.ix_(obs, obs)], "observation covariance")
    Kro = cov[np.ix_(rest, obs)]
    A = linalg.cho_solve((Loo, True), Kro.T, check_finite=False).T
    m = mean[rest] + A @ (np.asarray(values, dtype=float) - mean[obs])
    C = cov[np.ix_(rest, rest)] - A @ Kro.T
    return m, 0.5 * (C + C.T)
