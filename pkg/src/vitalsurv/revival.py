"""Conditional Gaussian law of the health process given the survival time.

Given T = t, health values at times s < t are jointly Gaussian with

    mean  mu_t(s)     = alpha(t) + m0(t - s) + beta[arm]
    cov   K(s, s')    = sigma_b2 + k(s, s') + sigma_e2 * [s == s']

where ``t - s`` is the revival time (time remaining before death), alpha is a
polynomial without constant term, m0 is the characteristic mean curve, and k
is a stationary temporal kernel.  Treatment offsets switch on after
recruitment: at s = 0 every patient is at the null level (offset 0) unless
``null_at_recruitment`` is disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._linalg import cholesky
from .errors import DomainError, ParameterDomainError

KERNELS = ("ou", "matern32")


@dataclass(frozen=True)
class CurveBasis:
    """Basis for the characteristic mean curve m0(z).

    ``log1p_linear``: columns log(1 + z), z.
    ``natural_spline``: natural cubic spline with the given knots
    (intercept, linear term and K - 2 truncated-power columns).
    """

    kind: str = "log1p_linear"
    knots: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        if self.kind not in ("log1p_linear", "natural_spline"):
            raise ParameterDomainError(f"unknown curve basis {self.kind!r}")
        if self.kind == "natural_spline":
            if len(self.knots) < 2 or any(b <= a for a, b in zip(self.knots, self.knots[1:])):
                raise ParameterDomainError("natural_spline needs at least two increasing knots")

    @property
    def n_coef(self) -> int:
        return 2 if self.kind == "log1p_linear" else len(self.knots)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "log1p_linear":
            return np.stack([np.log1p(z), z], axis=-1)
        xi = np.asarray(self.knots)
        K = xi.size

        def d(j):
            return (np.maximum(z - xi[j], 0.0) ** 3 - np.maximum(z - xi[-1], 0.0) ** 3) / (xi[-1] - xi[j])

        cols = [np.ones_like(z), z]
        dlast = d(K - 2)
        cols += [d(j) - dlast for j in range(K - 2)]
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class MeanModel:
    alpha: tuple[float, ...] = (0.0,)
    curve: tuple[float, ...] = (1.0, 0.0)
    beta: tuple[float, ...] = (0.0,)
    basis: CurveBasis = CurveBasis()
    null_at_recruitment: bool = True

    def __post_init__(self):
        for name in ("alpha", "curve", "beta"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.curve) != self.basis.n_coef:
            raise ParameterDomainError(
                f"curve has {len(self.curve)} coefficients, basis {self.basis.kind} needs {self.basis.n_coef}"
            )
        if not self.beta or self.beta[0] != 0.0:
            raise ParameterDomainError("beta must start with the null-arm offset 0")
        vals = self.alpha + self.curve + self.beta
        if not all(math.isfinite(v) for v in vals):
            raise ParameterDomainError("mean-model coefficients must be finite")

    @property
    def n_arms(self) -> int:
        return len(self.beta)

    @property
    def coef(self) -> np.ndarray:
        """Coefficients multiplying the columns of :meth:`design`."""
        return np.array(self.alpha + self.curve + self.beta[1:])

    def with_coef(self, coef) -> "MeanModel":
        coef = [float(c) for c in coef]
        na, nc = len(self.alpha), len(self.curve)
        return MeanModel(
            alpha=tuple(coef[:na]),
            curve=tuple(coef[na:na + nc]),
            beta=(0.0,) + tuple(coef[na + nc:]),
            basis=self.basis,
            null_at_recruitment=self.null_at_recruitment,
        )

    def _check_arm(self, arm: int) -> int:
        arm = int(arm)
        if not 0 <= arm < self.n_arms:
            raise ParameterDomainError(f"arm {arm} outside 0..{self.n_arms - 1}")
        return arm

    def alpha_fn(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for j, a in enumerate(self.alpha, start=1):
            out = out + a * t**j
        return out

    def offsets(self, ts, arm: int) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        b = self.beta[self._check_arm(arm)]
        if self.null_at_recruitment:
            return np.where(ts > 0, b, 0.0)
        return np.full(ts.shape, b)

    def mean(self, s: float, t: float, arm: int = 0) -> float:
        return float(self.mean_matrix([s], [t], arm)[0, 0])

    def mean_matrix(self, ts, tvec, arm: int = 0) -> np.ndarray:
        """Conditional means, shape ``(len(tvec), len(ts))``; no domain check."""
        ts = np.asarray(ts, dtype=float)
        tvec = np.asarray(tvec, dtype=float)
        z = tvec[:, None] - ts[None, :]
        m = self.basis(z) @ np.asarray(self.curve)
        return self.alpha_fn(tvec)[:, None] + m + self.offsets(ts, arm)[None, :]

    def design(self, ts, t: float, arm: int = 0) -> np.ndarray:
        """Design matrix X (k x p) with mean = X @ coef."""
        ts = np.asarray(ts, dtype=float)
        k = ts.size
        arm = self._check_arm(arm)
        cols = [np.full(k, float(t) ** j) for j in range(1, len(self.alpha) + 1)]
        B = self.basis(float(t) - ts).reshape(k, -1)
        cols += [B[:, j] for j in range(B.shape[1])]
        active = (ts > 0) if self.null_at_recruitment else np.ones(k, dtype=bool)
        for a in range(1, self.n_arms):
            cols.append(np.where(active & (arm == a), 1.0, 0.0))
        return np.column_stack(cols) if cols else np.zeros((k, 0))


@dataclass(frozen=True)
class CovarianceModel:
    sigma_b2: float = 1.0
    sigma_g2: float = 1.0
    rho: float = 1.0
    sigma_e2: float = 1.0
    kernel: str = "ou"
    extra: tuple[Callable, ...] = ()  # additional kernels k(ts, ts) -> matrix

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ParameterDomainError(f"unknown kernel {self.kernel!r}; choose from {KERNELS}")
        vals = (self.sigma_b2, self.sigma_g2, self.rho, self.sigma_e2)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterDomainError("covariance parameters must be finite")
        if self.sigma_b2 < 0 or self.sigma_g2 < 0:
            raise ParameterDomainError("sigma_b2 and sigma_g2 must be non-negative")
        if self.sigma_e2 <= 0:
            raise ParameterDomainError("sigma_e2 must be strictly positive")
        if self.rho <= 0:
            raise ParameterDomainError("rho must be strictly positive")

    def temporal(self, s1, s2) -> np.ndarray:
        d = np.abs(np.subtract.outer(np.asarray(s1, dtype=float), np.asarray(s2, dtype=float)))
        if self.kernel == "ou":
            return self.sigma_g2 * np.exp(-d / self.rho)
        r = math.sqrt(3.0) * d / self.rho
        return self.sigma_g2 * (1.0 + r) * np.exp(-r)

    def matrix(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        S = self.sigma_b2 + self.temporal(ts, ts)
        S[np.diag_indices_from(S)] += self.sigma_e2
        for k in self.extra:
            S = S + np.asarray(k(ts, ts), dtype=float)
        return S


def _check_grid(ts, t):
    ts = np.asarray(ts, dtype=float)
    if ts.ndim != 1:
        raise DomainError("time grid must be one-dimensional")
    if ts.size and np.any(np.diff(ts) <= 0):
        raise DomainError("time grid must be strictly increasing")
    if ts.size and ts[-1] >= t:
        raise DomainError(f"mean is not defined for s >= t (s = {ts[-1]:g}, t = {t:g})")
    return ts


def conditional_mean(s: float, t: float, arm: int, mm: MeanModel) -> float:
    if not 0 <= s < t:
        raise DomainError(f"mean is not defined for s = {s:g} outside [0, t = {t:g})")
    return mm.mean(s, t, arm)


def conditional_moments(ts, t: float, arm: int, mm: MeanModel, cm: CovarianceModel):
    ts = _check_grid(ts, t)
    gamma = mm.mean_matrix(ts, [t], arm)[0]
    Sigma = cm.matrix(ts)
    return gamma, Sigma


def sample_conditional(ts, t: float, arm: int, mm: MeanModel, cm: CovarianceModel,
                       rng: np.random.Generator, size=None) -> np.ndarray:
    gamma, Sigma = conditional_moments(ts, t, arm, mm, cm)
    L = cholesky(Sigma)
    if size is None:
        return gamma + L @ rng.standard_normal(gamma.size)
    z = rng.standard_normal((int(size), gamma.size))
    return gamma[None, :] + z @ L.T
