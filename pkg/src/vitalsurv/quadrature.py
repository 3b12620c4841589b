"""Adaptive Gauss-Kronrod (7/15) quadrature for log-scale integrands.

The integrand is supplied as a *log* density evaluated on a whole vector of
nodes at once, optionally for a batch of m integrands sharing the same
domain (``logfunc(t) -> (n,)`` or ``(m, n)``).  Each integrand is rescaled by
its running peak before exponentiation so that densities of order
exp(-700) integrate without underflow.

Semi-infinite ranges use ``t = a + c u / (1 - u)``, u in (0, 1).  Error
estimates follow QUADPACK's qk15 heuristic.  Panels are bisected when their
error exceeds their share (by width) of the tolerance; all panels of one
round are evaluated in a single vectorised call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterDomainError, QuadratureError

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

# 15 nodes in [-1, 1] with Kronrod and embedded Gauss weights
NODES = np.concatenate([-_XGK[:7], [0.0], _XGK[6::-1]])
W_KRONROD = np.concatenate([_WGK[:7], [_WGK[7]], _WGK[6::-1]])
W_GAUSS = np.zeros(15)
W_GAUSS[[1, 3, 5]] = _WG[:3]
W_GAUSS[7] = _WG[3]
W_GAUSS[[13, 11, 9]] = _WG[:3]

_EPMACH = np.finfo(float).eps


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for the adaptive integrator.

    ``atol`` is absolute *relative to the peak of the integrand* (each
    integrand is scaled to maximum 1 before integration), which is the only
    meaningful reading when integrands are handled on the log scale.
    """

    rtol: float = 1e-8
    atol: float = 1e-12
    max_subdivisions: int = 2000
    tail_scale: float = 1.0
    initial_panels: int = 8

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ParameterDomainError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1 or self.initial_panels < 1 or self.tail_scale <= 0:
            raise ParameterDomainError("max_subdivisions, initial_panels must be >= 1; tail_scale > 0")


@dataclass
class QuadResult:
    log_value: np.ndarray | float
    abs_error: np.ndarray | float  # natural scale
    n_eval: int
    n_panels: int

    @property
    def value(self):
        return np.exp(self.log_value)


def _map(u, a, b, c):
    """Map u in [0, 1] to t and return (t, log dt/du)."""
    if math.isinf(b):
        one_minus = 1.0 - u
        return a + c * u / one_minus, math.log(c) - 2.0 * np.log(one_minus)
    return a + (b - a) * u, np.full(u.shape, math.log(b - a))


def integrate_log(logfunc, a: float, b: float = math.inf, config: QuadratureConfig | None = None) -> QuadResult:
    """Integrate exp(logfunc(t)) over (a, b); returns the log integral."""
    cfg = config or QuadratureConfig()
    if not b > a:
        raise ValueError(f"empty integration range ({a}, {b})")
    edges = np.linspace(0.0, 1.0, cfg.initial_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    M = None           # running log peak per component
    K = E = None       # per-panel Kronrod estimate and error, scaled by exp(-M)
    plo = phi = None   # accepted-or-pending panel bounds
    n_eval = 0
    scalar = False

    while True:
        half = 0.5 * (hi - lo)
        centre = 0.5 * (hi + lo)
        u = centre[:, None] + half[:, None] * NODES[None, :]
        t, logjac = _map(u, a, b, cfg.tail_scale)
        raw = np.asarray(logfunc(t.ravel()), dtype=float)
        if raw.ndim == 1:
            scalar = True
            raw = raw[None, :]
        m = raw.shape[0]
        n_eval += t.size
        lv = raw.reshape(m, *t.shape) + logjac[None]
        lv = np.where(np.isnan(lv), -np.inf, lv)
        newmax = lv.max(axis=(1, 2))
        if M is None:
            M = newmax.copy()
        else:
            upd = newmax > M
            if np.any(upd):
                shift = np.where(upd, np.exp(np.where(np.isfinite(M), M - newmax, -np.inf)), 1.0)
                K = K * shift[:, None]
                E = E * shift[:, None]
                M = np.where(upd, newmax, M)
        with np.errstate(invalid="ignore", over="ignore"):
            Mf = np.where(np.isfinite(M), M, 0.0)
            f = np.exp(lv - Mf[:, None, None])
        rk = (f * W_KRONROD).sum(-1) * half
        rg = (f * W_GAUSS).sum(-1) * half
        mean_f = (f * W_KRONROD).sum(-1) * 0.5
        rasc = (np.abs(f - mean_f[..., None]) * W_KRONROD).sum(-1) * half
        err = np.abs(rk - rg)
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = np.where(rasc > 0, rasc * np.minimum(1.0, (200.0 * err / np.where(rasc > 0, rasc, 1.0)) ** 1.5), err)
        err = np.maximum(scaled, 50.0 * _EPMACH * rk)

        if K is None:
            K, E, plo, phi = rk, err, lo, hi
        else:
            K = np.concatenate([K, rk], axis=1)
            E = np.concatenate([E, err], axis=1)
            plo = np.concatenate([plo, lo])
            phi = np.concatenate([phi, hi])

        total = K.sum(axis=1)
        tot_err = E.sum(axis=1)
        tol = np.maximum(cfg.atol, cfg.rtol * np.abs(total))
        if np.all(tot_err <= tol):
            break
        width = phi - plo
        bad = np.any(E > tol[:, None] * width[None, :], axis=0)
        if not np.any(bad):
            # individually acceptable but collectively not: split the worst
            bad = np.zeros_like(bad)
            bad[np.argmax((E / tol[:, None]).max(axis=0))] = True
        if K.shape[1] + bad.sum() > cfg.max_subdivisions:
            j = int(np.argmax(tot_err / tol))
            rel = float(tot_err[j] / total[j]) if total[j] > 0 else float("inf")
            raise QuadratureError(
                "adaptive quadrature did not converge within the subdivision limit",
                abs_error=float(tot_err[j] * math.exp(Mf[j])), rel_error=rel,
            )
        mid = 0.5 * (plo[bad] + phi[bad])
        lo = np.concatenate([plo[bad], mid])
        hi = np.concatenate([mid, phi[bad]])
        keep = ~bad
        K, E, plo, phi = K[:, keep], E[:, keep], plo[keep], phi[keep]

    with np.errstate(divide="ignore"):
        logI = np.where(np.isfinite(M), M + np.log(total), -np.inf)
        abs_err = np.where(np.isfinite(M), tot_err * np.exp(np.where(np.isfinite(M), M, 0.0)), 0.0)
    if scalar:
        return QuadResult(float(logI[0]), float(abs_err[0]), n_eval, K.shape[1])
    return QuadResult(logI, abs_err, n_eval, K.shape[1])
