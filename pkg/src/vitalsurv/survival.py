"""Parametric survival-time families used as the marginal law of T.

Parameter conventions
---------------------
=============  ==================  ==================================
family         params              survivor S(t)
=============  ==================  ==================================
exponential    (rate,)             exp(-rate t)
weibull        (shape, scale)      exp(-(t / scale) ** shape)
gamma          (shape, rate)       Q(shape, rate t)  (regularised)
=============  ==================  ==================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ParameterDomainError

FAMILIES = {
    "exponential": ("rate",),
    "weibull": ("shape", "scale"),
    "gamma": ("shape", "rate"),
}


@dataclass(frozen=True)
class SurvivalFamily:
    family: str = "weibull"
    params: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if fam not in FAMILIES:
            raise ParameterDomainError(f"unknown survival family {self.family!r}")
        if len(self.params) != len(FAMILIES[fam]):
            raise ParameterDomainError(
                f"{fam} takes {len(FAMILIES[fam])} parameter(s) {FAMILIES[fam]}, got {len(self.params)}"
            )
        for name, p in zip(FAMILIES[fam], self.params):
            if not (math.isfinite(p) and p > 0):
                raise ParameterDomainError(f"{fam} {name} must be positive and finite, got {p}")

    @property
    def param_names(self) -> tuple[str, ...]:
        return FAMILIES[self.family]

    def with_params(self, params) -> "SurvivalFamily":
        return SurvivalFamily(self.family, tuple(params))

    # -- log-scale primitives -------------------------------------------
    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "exponential":
                (rate,) = self.params
                out = math.log(rate) - rate * t
            elif self.family == "weibull":
                k, scale = self.params
                z = t / scale
                out = math.log(k / scale) + (k - 1.0) * np.log(z) - z**k
                if k == 1.0:
                    out = math.log(1.0 / scale) - z
            else:
                a, b = self.params
                out = a * math.log(b) + (a - 1.0) * np.log(t) - b * t - special.gammaln(a)
                if a == 1.0:
                    out = math.log(b) - b * t
        return np.where(t < 0, -np.inf, out)

    def logsf(self, t):
        t = np.asarray(t, dtype=float)
        tt = np.maximum(t, 0.0)
        with np.errstate(divide="ignore"):
            if self.family == "exponential":
                out = -self.params[0] * tt
            elif self.family == "weibull":
                k, scale = self.params
                out = -((tt / scale) ** k)
            else:
                a, b = self.params
                lower = special.gammainc(a, b * tt)
                # log1p branch keeps precision while S is close to 1
                out = np.where(lower < 0.5, np.log1p(-lower), np.log(special.gammaincc(a, b * tt)))
        return out

    def cumhazard(self, t):
        return -self.logsf(t)

    def pdf(self, t):
        return np.exp(self.logpdf(t))

    def sf(self, t):
        return np.exp(self.logsf(t))

    def cdf(self, t):
        return -np.expm1(self.logsf(t))

    def hazard(self, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.exp(self.logpdf(t) - self.logsf(t))

    def log_interval_mass(self, a, b):
        """log(S(a) - S(b)) for a < b, computed without cancellation."""
        la = self.logsf(a)
        lb = self.logsf(b)
        with np.errstate(divide="ignore"):
            return la + np.log(-np.expm1(lb - la))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            e = -np.log1p(-u)  # unit-exponential quantile
        if self.family == "exponential":
            return e / self.params[0]
        if self.family == "weibull":
            k, scale = self.params
            return scale * e ** (1.0 / k)
        a, b = self.params
        return special.gammaincinv(a, u) / b

    def mean(self) -> float:
        if self.family == "exponential":
            return 1.0 / self.params[0]
        if self.family == "weibull":
            k, scale = self.params
            return scale * math.gamma(1.0 + 1.0 / k)
        a, b = self.params
        return a / b

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draws for exponential/Weibull; numpy's gamma sampler for gamma."""
        if self.family == "gamma":
            a, b = self.params
            return rng.gamma(a, 1.0 / b, size)
        u = rng.random(size)
        return self.ppf(u)


def density(t, fam: SurvivalFamily):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterDomainError("survival density requires t >= 0")
    return fam.pdf(t)


def survivor(t, fam: SurvivalFamily):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterDomainError("survivor function requires t >= 0")
    return fam.sf(t)


def hazard(t, fam: SurvivalFamily):
    return fam.hazard(t)


def sample(fam: SurvivalFamily, rng: np.random.Generator, size=None):
    return fam.sample(rng, size)
