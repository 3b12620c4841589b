"""Exposure processes acting on the hazard, and the latent joint model.

Given a Gaussian exposure X observed at a few times, the conditional
survivor pr(T > t | X[ts] = x) = E[exp(-int_0^t h(X(s)) ds) | X[ts] = x] is an
infinite-dimensional Gaussian integral.  It is estimated here by drawing
conditional paths of X on an inner grid covering [0, t], integrating the
hazard by the trapezoid rule and averaging.  Common random numbers are
used wherever two estimates are compared.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.stats import qmc
from scipy.special import ndtri

from ._linalg import LOG_2PI, cholesky
from .core import Censored, Death, PatientRecord
from .errors import DomainError, NumericalError, ParameterDomainError
from .quadrature import QuadratureConfig
from .revival import CovarianceModel, MeanModel
from .streams import stream

LINKS = ("exp", "identity")


class PrecisionWarning(UserWarning):
    pass


class BiasWarning(UserWarning):
    pass


def _kernel(kind: str, variance: float, range_: float, s1, s2) -> np.ndarray:
    d = np.abs(np.subtract.outer(np.asarray(s1, dtype=float), np.asarray(s2, dtype=float)))
    if kind == "ou":
        return variance * np.exp(-d / range_)
    if kind == "matern32":
        r = math.sqrt(3.0) * d / range_
        return variance * (1.0 + r) * np.exp(-r)
    raise ParameterDomainError(f"unknown kernel {kind!r}")


@dataclass(frozen=True)
class _HazardLink:
    a: float = math.log(0.3)
    b: float = 0.0
    link: str = "exp"

    def hazard(self, x):
        x = np.asarray(x, dtype=float)
        if self.link == "exp":
            return np.exp(self.a + self.b * x)
        return np.maximum(self.a + self.b * x, 0.0)


@dataclass(frozen=True)
class ExposureModel:
    """X ~ GP(mu0, K0) with hazard h(X(t)) depending on the current exposure only.

    ``mu0`` is a constant or a callable of time.  The identity link
    h(x) = max(a + b x, 0) is truncated at zero; the truncation biases the
    hazard upward wherever a + b x < 0 is likely.
    """

    mu0: float | Callable = 0.0
    variance: float = 1.0
    range: float = 1.0
    kernel: str = "ou"
    a: float = math.log(0.3)
    b: float = 0.0
    link: str = "exp"

    def __post_init__(self):
        if self.link not in LINKS:
            raise ParameterDomainError(f"unknown link {self.link!r}; choose from {LINKS}")
        if not (self.variance >= 0 and self.range > 0):
            raise ParameterDomainError("need variance >= 0 and range > 0")
        if self.link == "identity":
            warnings.warn("identity hazard link is truncated at zero, which biases the hazard upward",
                          BiasWarning, stacklevel=3)
        _kernel(self.kernel, 1.0, 1.0, [0.0], [0.0])

    def mean(self, s):
        s = np.asarray(s, dtype=float)
        if callable(self.mu0):
            return np.asarray(self.mu0(s), dtype=float) * np.ones_like(s)
        return np.full(s.shape, float(self.mu0))

    def cov(self, s1, s2):
        return _kernel(self.kernel, self.variance, self.range, s1, s2)

    def hazard(self, x):
        return _HazardLink(self.a, self.b, self.link).hazard(x)

    @property
    def noise_var(self) -> float:
        return 0.0

    def to_dict(self) -> dict:
        if callable(self.mu0):
            raise ParameterDomainError("callable mean functions cannot be serialised")
        return {"type": "exposure", "mu0": self.mu0, "variance": self.variance, "range": self.range,
                "kernel": self.kernel, "a": self.a, "b": self.b, "link": self.link}


@dataclass(frozen=True)
class LatentJointModel:
    """Hazard driven by a latent Gaussian eta; observations X = eta + white noise.

    On a finite grid eta | X is Gaussian with mean K (K + noise_var I)^{-1} x,
    which is K (I + K)^{-1} x after rescaling K by the noise variance.
    """

    variance: float = 1.0
    range: float = 1.0
    noise_var: float = 1.0
    kernel: str = "ou"
    mu: float = 0.0
    a: float = math.log(0.3)
    b: float = 0.0
    link: str = "exp"

    def __post_init__(self):
        if self.link not in LINKS:
            raise ParameterDomainError(f"unknown link {self.link!r}; choose from {LINKS}")
        if not (self.variance >= 0 and self.range > 0 and self.noise_var >= 0):
            raise ParameterDomainError("need variance >= 0, range > 0 and noise_var >= 0")
        _kernel(self.kernel, 1.0, 1.0, [0.0], [0.0])

    def mean(self, s):
        return np.full(np.shape(s), float(self.mu))

    def cov(self, s1, s2):
        return _kernel(self.kernel, self.variance, self.range, s1, s2)

    def hazard(self, x):
        return _HazardLink(self.a, self.b, self.link).hazard(x)

    def to_dict(self) -> dict:
        return {"type": "latent", "variance": self.variance, "range": self.range, "noise_var": self.noise_var,
                "kernel": self.kernel, "mu": self.mu, "a": self.a, "b": self.b, "link": self.link}


def model_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", "exposure")
    try:
        if kind == "exposure":
            return ExposureModel(**d)
        if kind == "latent":
            return LatentJointModel(**d)
    except TypeError as exc:
        raise ParameterDomainError(f"bad exposure model specification: {exc}") from None
    raise ParameterDomainError(f"unknown exposure model type {kind!r}")


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 10_000
    dt: float | None = None     # inner grid step; default t / 200
    seed: int = 0
    chunk: int = 10_000
    quasi: bool = False         # scrambled Sobol points instead of pseudo-random normals
    precision_warn: float = 0.01
    key: str = "mc"             # stream key; equal keys give common random numbers

    def __post_init__(self):
        if self.n_paths < 1 or self.chunk < 1:
            raise ParameterDomainError("n_paths and chunk must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ParameterDomainError("dt must be positive")

    def step(self, t: float) -> float:
        return self.dt if self.dt is not None else t / 200.0


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    n_paths: int

    def __iter__(self):
        return iter((self.value, self.se))


def inner_grid(t: float, dt: float) -> np.ndarray:
    n = max(1, int(math.ceil(t / dt - 1e-9)))
    return np.linspace(0.0, t, n + 1)


def _psd_factor(C: np.ndarray) -> np.ndarray:
    """F with F F' = C for a possibly singular PSD matrix."""
    if C.size == 0:
        return C
    w, V = linalg.eigh(C)
    scale = max(float(w[-1]), 1e-300)
    if w[0] < -1e-8 * scale:
        raise NumericalError("conditional covariance of the exposure path is not positive semi-definite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def conditional_path_law(model, ts, x, grid):
    """Mean and PSD factor of the driving process on ``grid`` given observations x at ts."""
    ts = np.asarray(ts, dtype=float)
    x = np.asarray(x, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if ts.shape != x.shape:
        raise DomainError(f"{x.size} exposure values for {ts.size} times")
    m = model.mean(grid)
    Kgg = model.cov(grid, grid)
    if ts.size == 0:
        return m, _psd_factor(Kgg)
    Koo = model.cov(ts, ts) + model.noise_var * np.eye(ts.size)
    Kgo = model.cov(grid, ts)
    Lo = cholesky(Koo, "exposure observation covariance")
    A = linalg.cho_solve((Lo, True), Kgo.T, check_finite=False).T
    m = m + A @ (x - model.mean(ts))
    C = Kgg - A @ Kgo.T
    return m, _psd_factor(0.5 * (C + C.T))


def _normals(mc: MCConfig, n: int, dim: int, start: int, rng=None):
    if mc.quasi:
        sob = qmc.Sobol(dim, scramble=True, seed=rng)
        if start:
            sob.fast_forward(start)
        u = sob.random(n)
        return ndtri(np.clip(u, 1e-16, 1 - 1e-16))
    return rng.standard_normal((n, dim))


def _path_chunks(model, ts, x, grid, mc: MCConfig):
    """Yield (grid, paths) chunks of conditional paths; same config -> same normals."""
    m, F = conditional_path_law(model, ts, x, grid)
    rng = stream(mc.seed, mc.key, "paths")
    done = 0
    # keep each block of paths to a few million doubles
    chunk = min(mc.chunk, max(1, 2_000_000 // max(grid.size, 1)))
    while done < mc.n_paths:
        n = min(chunk, mc.n_paths - done)
        Z = _normals(mc, n, grid.size, done, rng)
        yield m[None, :] + Z @ F.T
        done += n


def path_survivor(grid, paths, hazard, t: float) -> np.ndarray:
    """exp(-trapezoid integral of h(X) over [0, t]) for each path; grid points beyond t are ignored."""
    keep = grid <= t
    g = grid[keep]
    h = hazard(paths[:, keep])
    if g.size < 2:
        return np.ones(paths.shape[0])
    H = np.sum(0.5 * (h[:, 1:] + h[:, :-1]) * np.diff(g)[None, :], axis=1)
    return np.exp(-H)


def _estimate(per_path_chunks) -> MCEstimate:
    vals = np.concatenate(list(per_path_chunks))
    n = vals.size
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return MCEstimate(float(np.mean(vals)), se, n)


def _check_t(t):
    if not t >= 0:
        raise DomainError("time must be non-negative")


def _per_path(model, ts, x, t, mc, density: bool):
    grid = inner_grid(t, mc.step(t))
    for P in _path_chunks(model, ts, x, grid, mc):
        S = path_survivor(grid, P, model.hazard, t)
        yield model.hazard(P[:, -1]) * S if density else S


def survival_density_given_exposure(ts, x, t: float, em, mc: MCConfig | None = None) -> MCEstimate:
    """E[h(X(t)) exp(-int_0^t h(X)) | X[ts] = x] by conditional-path Monte Carlo."""
    mc = mc or MCConfig()
    _check_t(t)
    if t == 0:
        return _estimate(_per_path_t0(em, ts, x, mc))
    return _estimate(_per_path(em, ts, x, t, mc, True))


def _per_path_t0(model, ts, x, mc):
    grid = np.array([0.0])
    for P in _path_chunks(model, ts, x, grid, mc):
        yield model.hazard(P[:, 0])


def survivor_given_exposure(ts, x, t: float, em, mc: MCConfig | None = None) -> MCEstimate:
    """pr(T > t | X[ts] = x); exactly 1 at t = 0."""
    mc = mc or MCConfig()
    _check_t(t)
    if t == 0:
        return MCEstimate(1.0, 0.0, mc.n_paths)
    return _estimate(_per_path(em, ts, x, t, mc, False))


def latent_conditional_survivor(ts, x, t: float, ljm: LatentJointModel, mc: MCConfig | None = None) -> MCEstimate:
    """pr(T > t | X[ts] = x) when the hazard is driven by the latent eta and X = eta + noise."""
    if not isinstance(ljm, LatentJointModel):
        raise ParameterDomainError("latent_conditional_survivor needs a LatentJointModel")
    return survivor_given_exposure(ts, x, t, ljm, mc)


# -- exogeneity probe --------------------------------------------------------------

@dataclass(frozen=True)
class ProbeReport:
    t: float
    index: int
    delta: float
    base: float
    perturbed: float
    change: float           # |perturbed - base|, observation level
    se: float               # MC standard error of the paired difference
    construction_change: float | None  # perturbing the path after t; None when not applicable
    verdict: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def exogeneity_probe(model, ts, x, t: float, j: int, delta: float, mc: MCConfig | None = None,
                     z: float = 3.0) -> ProbeReport:
    """Effect of a future observation x_j (ts_j > t) on the conditional survivor at t.

    Both evaluations use the same normals, so the paired difference has
    small variance and delta = 0 gives exactly zero.  For an ExposureModel
    the construction-level statement is also checked: the survivor
    computed from a simulated path is unchanged when the path is altered
    after t.
    """
    mc = mc or MCConfig()
    ts = np.asarray(ts, dtype=float)
    x = np.asarray(x, dtype=float)
    if not 0 <= j < ts.size:
        raise DomainError(f"index {j} outside the observation grid")
    if not ts[j] > t:
        raise DomainError(f"probe index must refer to a future observation (ts[{j}] = {ts[j]:g} <= t = {t:g})")
    x2 = x.copy()
    x2[j] += delta
    grid = inner_grid(t, mc.step(t))
    base, pert = [], []
    for P1, P2 in zip(_path_chunks(model, ts, x, grid, mc), _path_chunks(model, ts, x2, grid, mc)):
        base.append(path_survivor(grid, P1, model.hazard, t))
        pert.append(path_survivor(grid, P2, model.hazard, t))
    b = np.concatenate(base)
    p = np.concatenate(pert)
    d = p - b
    se = float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.inf
    change = abs(float(np.mean(p)) - float(np.mean(b)))

    construction = None
    if isinstance(model, ExposureModel):
        construction = construction_probe(model, ts, x, t, delta, mc)
    if change > z * se and change > 0:
        verdict = "future observation changes the conditional survivor"
    else:
        verdict = "no detectable effect of the future observation"
    if construction is not None:
        verdict += "; hazard construction uses no path values after t" if construction == 0.0 else \
            "; hazard construction depends on future path values"
    return ProbeReport(float(t), int(j), float(delta), float(np.mean(b)), float(np.mean(p)), change, se,
                       construction, verdict)


def construction_probe(model: ExposureModel, ts, x, t: float, delta: float, mc: MCConfig | None = None) -> float:
    """Max |change| of pathwise survivors at t after shifting the simulated path on (t, t_end] by delta."""
    mc = mc or MCConfig()
    ts = np.asarray(ts, dtype=float)
    t_end = max(float(ts.max()) if ts.size else t, t) + 1.0
    step = mc.step(t)
    grid = np.union1d(inner_grid(t, step), np.linspace(t, t_end, 21))
    worst = 0.0
    for P in _path_chunks(model, ts, x, grid, mc):
        s1 = path_survivor(grid, P, model.hazard, t)
        P2 = P.copy()
        P2[:, grid > t] += delta
        s2 = path_survivor(grid, P2, model.hazard, t)
        worst = max(worst, float(np.max(np.abs(s2 - s1))))
    return worst


# -- likelihood with exposure ------------------------------------------------------

@dataclass(frozen=True)
class ExposureRecord:
    """Exposure measured at ``exposure_times`` (possibly after death) plus a health record.

    Health measurement times must be a subset of the exposure times.
    """

    patient_id: str
    exposure_times: tuple[float, ...]
    exposure_values: tuple[float, ...]
    health: PatientRecord


@dataclass(frozen=True)
class ExposureLoglik:
    exposure: float
    survival: float
    health: float
    total: float
    se: float  # MC standard error on the log scale


def _exposure_at(rec: ExposureRecord, times) -> np.ndarray:
    idx = {t: i for i, t in enumerate(rec.exposure_times)}
    try:
        return np.array([rec.exposure_values[idx[t]] for t in times], dtype=float)
    except KeyError as exc:
        raise DomainError(f"health time {exc.args[0]:g} has no exposure measurement") from None


def exposure_record_loglik(rec: ExposureRecord, em: ExposureModel, mean: MeanModel, cov: CovarianceModel,
                           gamma_x: float = 0.0, mc: MCConfig | None = None,
                           qc: QuadratureConfig | None = None) -> ExposureLoglik:
    """log p(x) + log p(T | x) + log p(y | x, T); health mean mu(s, t) + gamma_x X(s).

    For censored records the last two factors are replaced by the integral
    over t > c of f(t | x) N(y; mean(t), Sigma), evaluated on the Monte Carlo
    path grid (trapezoid rule, grid extended until the conditional survivor
    is negligible).
    """
    mc = mc or MCConfig()
    ets = np.asarray(rec.exposure_times, dtype=float)
    ex = np.asarray(rec.exposure_values, dtype=float)
    if ets.size:
        Le = cholesky(em.cov(ets, ets), "exposure covariance")
        r = linalg.solve_triangular(Le, ex - em.mean(ets), lower=True)
        lx = float(-0.5 * (ets.size * LOG_2PI + 2.0 * np.sum(np.log(np.diag(Le))) + r @ r))
    else:
        lx = 0.0
    h = rec.health
    hts = np.asarray(h.real_times, dtype=float)
    hy = np.asarray(h.real_values, dtype=float)
    xs = _exposure_at(rec, h.real_times) if hts.size else np.zeros(0)
    L = cholesky(cov.matrix(hts)) if hts.size else None

    def log_health(t):
        if not hts.size:
            return 0.0
        if t <= hts[-1]:
            return -math.inf
        mu = mean.mean_matrix(hts, [t], h.arm)[0] + gamma_x * xs
        z = linalg.solve_triangular(L, hy - mu, lower=True)
        return float(-0.5 * (hts.size * LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + z @ z))

    if isinstance(h.terminal, Death):
        T = h.terminal.time
        est = survival_density_given_exposure(ets, ex, T, em, mc)
        ls = math.log(est.value) if est.value > 0 else -math.inf
        se = est.se / est.value if est.value > 0 else math.inf
        lh = log_health(T)
    else:
        c = h.terminal.time
        est = survivor_given_exposure(ets, ex, c, em, mc)
        ls = math.log(est.value) if est.value > 0 else -math.inf
        se = est.se / est.value if est.value > 0 else math.inf
        if hts.size:
            lh = _censored_health(ets, ex, c, em, mc, log_health) - ls
        else:
            lh = 0.0
    total = lx + ls + lh
    if math.isfinite(total) and se > mc.precision_warn * max(abs(total), 1e-300):
        warnings.warn(f"record {rec.health.patient_id!r}: MC standard error {se:.3g} is large relative "
                      f"to the log-likelihood {total:.6g}", PrecisionWarning, stacklevel=2)
    return ExposureLoglik(lx, ls, lh, total, se)


def _tail_grid(c: float, step: float, upper: float, ratio: float = 1.002) -> np.ndarray:
    """Regular grid on [0, c], then steps growing geometrically by ``ratio`` up to ``upper``."""
    head = inner_grid(c, step) if c > 0 else np.array([0.0])
    n = int(math.ceil(math.log1p((upper - c) * (ratio - 1.0) / step) / math.log(ratio)))
    ext = c + step * np.expm1(np.arange(1, n + 1) * math.log(ratio)) / (ratio - 1.0)
    return np.concatenate([head, ext])


def _censored_health(ets, ex, c, em, mc: MCConfig, log_health) -> float:
    """log of the integral over t > c of f(t | x) N(y; mean(t), Sigma)."""
    step = mc.step(c) if c > 0 else (mc.dt or 0.01)
    upper = max(2.0 * c, c + 1.0)
    for _ in range(12):
        grid = _tail_grid(c, step, upper)
        acc_f = np.zeros(grid.size)
        acc_tail = 0.0
        n = 0
        for P in _path_chunks(em, ets, ex, grid, mc):
            hz = em.hazard(P)
            H = np.concatenate([np.zeros((P.shape[0], 1)),
                                np.cumsum(0.5 * (hz[:, 1:] + hz[:, :-1]) * np.diff(grid)[None, :], axis=1)], axis=1)
            acc_f += np.sum(hz * np.exp(-H), axis=0)
            acc_tail += float(np.sum(np.exp(-H[:, -1])))
            n += P.shape[0]
        f = acc_f / n
        tail = acc_tail / n
        if tail < 1e-10:
            break
        upper = c + 2.0 * (upper - c)
    sel = grid >= c
    g = grid[sel]
    lg = np.array([log_health(t) for t in g])
    mx = np.max(lg)
    if not np.isfinite(mx):
        return -math.inf
    w = f[sel] * np.exp(lg - mx)
    integral = float(np.sum(0.5 * (w[1:] + w[:-1]) * np.diff(g)))
    return math.log(integral) + mx if integral > 0 else -math.inf
