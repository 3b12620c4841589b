"""Finite-dimensional densities of the Gaussian survival process.

q(y, t) = f(t) * N(y; gamma(t), Sigma) for t > max(ts), zero otherwise, and
the marginal p(y) = integral of q over t, evaluated by adaptive quadrature
on the log scale.  Because Sigma does not depend on t, one Cholesky factor
serves every quadrature node and every record sharing the same grid.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg, optimize

from ._linalg import LOG_2PI, cholesky, mvn_logpdf_chol
from .core import FLAT, ModelParams
from .errors import DomainError, UndefinedConditionalError
from .quadrature import QuadratureConfig, integrate_log
from .revival import conditional_moments


def _grid(ts, y=None):
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if ts.size and np.any(np.diff(ts) <= 0):
        raise DomainError("time grid must be strictly increasing")
    if y is not None:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != ts.size:
            raise DomainError(f"{y.size} values for {ts.size} sampling times")
        return ts, y
    return ts


class GaussianBatch:
    """Gaussian factor for m records that share a sampling grid.

    ``log_gauss(tvec)`` returns the (m, len(tvec)) array of
    log N(y_i; gamma_i(t), Sigma) for t > max(ts) and -inf elsewhere.
    """

    def __init__(self, ts, Y, arms, params: ModelParams, L: np.ndarray | None = None):
        self.ts = np.asarray(ts, dtype=float)
        self.Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.arms = np.atleast_1d(np.asarray(arms, dtype=int))
        self.params = params
        k = self.ts.size
        self.k = k
        self.tmax = float(self.ts[-1]) if k else 0.0
        if k == 0:
            return
        self.L = cholesky(params.cov.matrix(self.ts)) if L is None else L
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.L))))
        mm = params.mean
        off = np.stack([mm.offsets(self.ts, a) for a in self.arms])  # (m, k)
        A = linalg.solve_triangular(self.L, (self.Y - off).T, lower=True, check_finite=False)
        self.A = A  # (k, m)
        self.A2 = np.sum(A * A, axis=0)
        self.const = -0.5 * (k * LOG_2PI + self.logdet)

    def log_gauss(self, tvec) -> np.ndarray:
        tvec = np.asarray(tvec, dtype=float)
        m = self.Y.shape[0]
        if self.k == 0:
            return np.zeros((m, tvec.size))
        mm = self.params.mean
        alive = tvec > self.tmax
        out = np.full((m, tvec.size), -np.inf)
        if not np.any(alive):
            return out
        tv = tvec[alive]
        base = mm.mean_matrix(self.ts, tv, 0)  # null-arm mean, (nt, k)
        B = linalg.solve_triangular(self.L, base.T, lower=True, check_finite=False)  # (k, nt)
        quad = self.A2[:, None] - 2.0 * (self.A.T @ B) + np.sum(B * B, axis=0)[None, :]
        out[:, alive] = self.const - 0.5 * np.maximum(quad, 0.0)
        return out

    def log_joint(self, tvec) -> np.ndarray:
        tvec = np.asarray(tvec, dtype=float)
        return self.log_gauss(tvec) + self.params.survival.logpdf(tvec)[None, :]

    def log_integral(self, lower: float, upper: float = math.inf, qc: QuadratureConfig | None = None) -> np.ndarray:
        """log of the integral of q over (lower, upper) for each record."""
        a = max(float(lower), self.tmax)
        m = self.Y.shape[0]
        if not upper > a:
            return np.full(m, -np.inf)
        fam = self.params.survival
        if self.k == 0:
            if math.isinf(upper):
                return np.full(m, float(fam.logsf(a)))
            return np.full(m, float(fam.log_interval_mass(a, upper)))
        res = integrate_log(self.log_joint, a, upper, qc)
        return np.asarray(res.log_value).reshape(m)


def log_joint_density(ts, y, t: float, arm: int, params: ModelParams) -> float:
    ts, y = _grid(ts, y)
    lf = float(params.survival.logpdf(t))
    if ts.size == 0:
        return lf
    if t <= ts[-1]:
        return -math.inf
    gamma, Sigma = conditional_moments(ts, t, arm, params.mean, params.cov)
    return lf + float(mvn_logpdf_chol(y - gamma, cholesky(Sigma)))


def joint_density(ts, y, t: float, arm: int, params: ModelParams) -> float:
    return math.exp(log_joint_density(ts, y, t, arm, params))


def log_marginal_density(ts, y, arm: int, params: ModelParams, qc: QuadratureConfig | None = None,
                         lower: float | None = None) -> float:
    """log p(y): integral of q over t > max(ts) (or over t > lower if later)."""
    ts, y = _grid(ts, y)
    a = 0.0 if lower is None else float(lower)
    return float(GaussianBatch(ts, y[None, :], [arm], params).log_integral(a, math.inf, qc)[0])


def marginal_density(ts, y, arm: int, params: ModelParams, qc: QuadratureConfig | None = None,
                     lower: float | None = None) -> float:
    return math.exp(log_marginal_density(ts, y, arm, params, qc, lower))


def _split_flat(ts, values):
    ts = _grid(ts)
    vals = list(values)
    if len(vals) != ts.size:
        raise DomainError(f"{len(vals)} values for {ts.size} sampling times")
    n = 0
    while n < len(vals) and vals[n] is not FLAT:
        n += 1
    if n == len(vals):
        raise DomainError("interval-censored mass needs at least one trailing FLAT value")
    if any(v is not FLAT for v in vals[n:]):
        raise DomainError("FLAT values must form a trailing block")
    lo = float(ts[n - 1]) if n else 0.0
    return ts[:n], np.array(vals[:n], dtype=float), lo, float(ts[n])


def log_interval_censored_mass(ts, values, arm: int, params: ModelParams,
                               qc: QuadratureConfig | None = None) -> float:
    """log of the integral of q(y', t) over t between the last real and first FLAT time."""
    ts_r, y_r, lo, hi = _split_flat(ts, values)
    return float(GaussianBatch(ts_r, y_r[None, :], [arm], params).log_integral(lo, hi, qc)[0])


def interval_censored_mass(ts, values, arm: int, params: ModelParams, qc: QuadratureConfig | None = None) -> float:
    return math.exp(log_interval_censored_mass(ts, values, arm, params, qc))


class ClinicalPredictive:
    """Law of T given finitely many appointment values, on (max(ts), inf).

    Density q(y, t) / p(y); survivor and quantile evaluators integrate the
    same log density numerically.
    """

    def __init__(self, ts, y, arm: int, params: ModelParams, qc: QuadratureConfig | None = None,
                 lower: float | None = None):
        ts, y = _grid(ts, y)
        self.params = params
        self.qc = qc
        self._batch = GaussianBatch(ts, y[None, :], [arm], params)
        self.lower = max(self._batch.tmax, 0.0 if lower is None else float(lower))
        self.log_norm = float(self._batch.log_integral(self.lower, math.inf, qc)[0])
        if not math.isfinite(self.log_norm):
            raise UndefinedConditionalError("marginal density of the observed values is zero")

    def logpdf(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self._batch.log_joint(t)[0] - self.log_norm
        return np.where(t > self.lower, out, -np.inf)

    def pdf(self, t):
        return np.exp(self.logpdf(t))

    def logsf(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.size)
        for i, ti in enumerate(t):
            if ti <= self.lower:
                out[i] = 0.0
            else:
                out[i] = min(0.0, float(self._batch.log_integral(ti, math.inf, self.qc)[0]) - self.log_norm)
        return out

    def sf(self, t):
        return np.exp(self.logsf(t))

    def cdf(self, t):
        return -np.expm1(self.logsf(t))

    def ppf(self, q: float) -> float:
        if not 0.0 <= q < 1.0:
            raise DomainError("quantile level must lie in [0, 1)")
        if q == 0.0:
            return self.lower
        target = math.log1p(-q)
        hi = self.lower + 1.0
        while float(self.logsf(hi)[0]) > target:
            hi = self.lower + 2.0 * (hi - self.lower)
        return optimize.brentq(lambda x: float(self.logsf(x)[0]) - target, self.lower, hi, xtol=1e-12)


def clinical_predictive(ts, y, arm: int, params: ModelParams, qc: QuadratureConfig | None = None,
                        lower: float | None = None) -> ClinicalPredictive:
    return ClinicalPredictive(ts, y, arm, params, qc, lower)
