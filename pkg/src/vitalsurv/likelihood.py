"""Likelihood evaluation, four-factor decomposition and maximum likelihood fits.

Each uncensored record contributes log q(y, t) = log f(t) + log N(y; gamma(t), Sigma),
each right-censored record log p(y) with the survival integral running from
the censoring time, and each interval-censored record (trailing FLAT
values) the integral of q between its last real-valued and first FLAT
sampling times.

Splitting each contribution into a survival part (log f, log S, or
log(S(a) - S(b))) and the remainder gives the four factors A, B, C, D; A + B
depends on lambda only and C on psi only.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, optimize, special, stats

from ._linalg import LOG_2PI, cholesky
from .core import Dataset, ModelParams, PatientRecord
from .density import GaussianBatch
from .errors import FitError, LikelihoodError, NumericalError, ParameterDomainError
from .quadrature import QuadratureConfig, integrate_log
from .revival import CovarianceModel, MeanModel
from .survival import SurvivalFamily


class BoundaryWarning(UserWarning):
    pass


class SingularInformationWarning(UserWarning):
    pass


# -- parameter layout ----------------------------------------------------------

COV_NAMES = ("sigma_b2", "sigma_g2", "rho", "sigma_e2")


class ParamLayout:
    """Maps ModelParams to an unconstrained vector and back.

    Positive quantities (survival parameters, variances, range) are
    optimised on the log scale; mean coefficients are unconstrained.
    Zero variance components in the template are held fixed.
    """

    def __init__(self, template: ModelParams, fixed: tuple[str, ...] = ()):
        self.template = template
        mm, cm, fam = template.mean, template.cov, template.survival
        names, logs, blocks = [], [], []
        for pn in fam.param_names:
            names.append(f"lambda.{pn}")
            logs.append(True)
            blocks.append("lambda")
        for i in range(len(mm.alpha)):
            names.append(f"alpha{i + 1}")
            logs.append(False)
            blocks.append("mean")
        for i in range(len(mm.curve)):
            names.append(f"curve{i + 1}")
            logs.append(False)
            blocks.append("mean")
        for i in range(1, mm.n_arms):
            names.append(f"beta{i}")
            logs.append(False)
            blocks.append("mean")
        for n in COV_NAMES:
            names.append(n)
            logs.append(True)
            blocks.append("cov")
        self.all_names = tuple(names)
        self._log = np.array(logs)
        self._block = np.array(blocks)
        auto_fixed = {n for n in ("sigma_b2", "sigma_g2") if getattr(cm, n) == 0.0}
        if cm.sigma_g2 == 0.0:
            auto_fixed.add("rho")
        self.fixed = frozenset(fixed) | auto_fixed
        unknown = self.fixed - set(names)
        if unknown:
            raise ParameterDomainError(f"unknown parameter name(s) {sorted(unknown)}")
        self.free = np.array([n not in self.fixed for n in names])
        self.names = tuple(n for n, f in zip(names, self.free) if f)

    def natural(self, params: ModelParams) -> np.ndarray:
        """All parameters in natural units, ordered as ``all_names``."""
        cm = params.cov
        return np.concatenate([
            np.asarray(params.survival.params),
            params.mean.coef,
            [cm.sigma_b2, cm.sigma_g2, cm.rho, cm.sigma_e2],
        ])

    def from_natural(self, nat) -> ModelParams:
        t = self.template
        nat = np.asarray(nat, dtype=float)
        nl = len(t.survival.params)
        nmean = t.mean.coef.size
        fam = t.survival.with_params(nat[:nl])
        mm = t.mean.with_coef(nat[nl:nl + nmean])
        c = nat[nl + nmean:]
        cm = CovarianceModel(c[0], c[1], c[2], c[3], kernel=t.cov.kernel, extra=t.cov.extra)
        return ModelParams(fam, mm, cm)

    def pack(self, params: ModelParams) -> np.ndarray:
        nat = self.natural(params)
        with np.errstate(divide="ignore"):
            eta = np.where(self._log, np.log(np.where(self._log, nat, 1.0)), nat)
        return eta[self.free]

    def unpack(self, eta) -> ModelParams:
        full = self.pack_full(self.template)
        full[self.free] = np.asarray(eta, dtype=float)
        nat = np.where(self._log, np.exp(full), full)
        return self.from_natural(nat)

    def pack_full(self, params: ModelParams) -> np.ndarray:
        nat = self.natural(params)
        with np.errstate(divide="ignore"):
            return np.where(self._log, np.log(np.where(self._log & (nat > 0), nat, 1.0)), nat)

    def jacobian_diag(self, params: ModelParams) -> np.ndarray:
        """d natural / d eta for the free parameters."""
        nat = self.natural(params)
        return np.where(self._log, nat, 1.0)[self.free]

    def block_mask(self, block: str) -> np.ndarray:
        return (self._block == block)[self.free] if block != "psi" else np.isin(self._block, ("mean", "cov"))[self.free]


# -- per-record terms ------------------------------------------------------------

@dataclass
class RecordTerms:
    kind: np.ndarray      # 0 death, 1 right-censored, 2 interval-censored
    surv: np.ndarray      # log f / log S / log(S(a) - S(b))
    rest: np.ndarray      # Gaussian log density, or log p - log S for censored records
    total: np.ndarray     # record log-likelihood


def _terms_for_group(key, idx, records, params: ModelParams, qc, chol_cache):
    """Evaluate the records ``idx`` that share (kind, grid, limits)."""
    kind, ts, lo, hi = key
    ts_arr = np.asarray(ts, dtype=float)
    fam = params.survival
    L = None
    if ts:
        L = chol_cache.get(ts)
        if L is None:
            L = cholesky(params.cov.matrix(ts_arr))
            chol_cache[ts] = L
    recs = [records[i] for i in idx]
    m = len(recs)
    if kind == 0:
        T = np.array([r.terminal.time for r in recs])
        lf = fam.logpdf(T)
        if not ts:
            return lf, np.zeros(m), lf
        Y = np.array([r.real_values for r in recs])
        mm = params.mean
        gam = np.stack([mm.mean_matrix(ts_arr, [r.terminal.time], r.arm)[0] for r in recs])
        alive = T > ts_arr[-1]
        Z = linalg.solve_triangular(L, (Y - gam).T, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        lg = -0.5 * (ts_arr.size * LOG_2PI + logdet + np.sum(Z * Z, axis=0))
        lg = np.where(alive, lg, -np.inf)
        return lf, lg, lf + lg
    if kind == 1:
        surv = np.full(m, float(fam.logsf(lo)))
    else:
        surv = np.full(m, float(fam.log_interval_mass(lo, hi)))
    if not ts:
        return surv, np.zeros(m), surv.copy()
    Y = np.array([r.real_values for r in recs])
    arms = [r.arm for r in recs]
    batch = GaussianBatch(ts_arr, Y, arms, params, L=L)
    logp = batch.log_integral(lo, hi, qc)
    with np.errstate(invalid="ignore"):
        return surv, logp - surv, logp


def _group_records(records) -> dict:
    groups: dict = {}
    for i, r in enumerate(records):
        ts = r.real_times
        if not r.is_censored:
            key = (0, ts, 0.0, math.inf)
        elif r.has_flat:
            lo, hi = r.death_interval()
            key = (2, ts, lo, hi)
        else:
            key = (1, ts, r.terminal.time, math.inf)
        groups.setdefault(key, []).append(i)
    return groups


def record_terms(ds, params: ModelParams, qc: QuadratureConfig | None = None, workers: int = 1) -> RecordTerms:
    records = ds.records if isinstance(ds, Dataset) else tuple(ds)
    n = len(records)
    kind = np.empty(n, dtype=int)
    surv = np.empty(n)
    rest = np.empty(n)
    total = np.empty(n)
    groups = _group_records(records)
    cache: dict = {}

    def run(item):
        key, idx = item
        try:
            return key, idx, _terms_for_group(key, idx, records, params, qc, cache)
        except Exception as exc:  # locate the offending record
            for i in idx:
                try:
                    _terms_for_group(key, [i], records, params, qc, {})
                except Exception as inner:
                    raise LikelihoodError(records[i].patient_id, inner) from inner
            raise LikelihoodError(records[idx[0]].patient_id, exc) from exc

    items = list(groups.items())
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, items))
    else:
        results = [run(it) for it in items]
    for key, idx, (s, r, tot) in results:
        kind[idx] = key[0]
        surv[idx] = s
        rest[idx] = r
        total[idx] = tot
    return RecordTerms(kind, surv, rest, total)


def record_loglik(record: PatientRecord, params: ModelParams, qc: QuadratureConfig | None = None) -> float:
    return float(record_terms([record], params, qc).total[0])


def dataset_loglik(ds, params: ModelParams, qc: QuadratureConfig | None = None, workers: int = 1) -> float:
    """Sum of record log-likelihoods (exactly rounded, so order-independent)."""
    return math.fsum(record_terms(ds, params, qc, workers).total)


@dataclass(frozen=True)
class FourFactors:
    A: float  # sum over uncensored of log f(t)
    B: float  # sum over censored of log S(t) (log(S(a) - S(b)) if interval-censored)
    C: float  # sum over uncensored of log q - log f
    D: float  # sum over censored of log p - log S
    total: float

    @property
    def residual(self) -> float:
        return self.A + self.B + self.C + self.D - self.total


def four_factor(ds, params: ModelParams, qc: QuadratureConfig | None = None, workers: int = 1) -> FourFactors:
    rt = record_terms(ds, params, qc, workers)
    unc = rt.kind == 0
    ff = FourFactors(
        A=math.fsum(rt.surv[unc]),
        B=math.fsum(rt.surv[~unc]),
        C=math.fsum(rt.rest[unc]),
        D=math.fsum(rt.rest[~unc]),
        total=math.fsum(rt.total),
    )
    if math.isfinite(ff.total) and abs(ff.residual) > 1e-8:
        raise NumericalError(f"four-factor identity violated by {ff.residual:.3g}")
    return ff


def gaussian_factor(ds, mean: MeanModel, cov: CovarianceModel) -> float:
    """C: conditional Gaussian log-likelihood of the uncensored records (psi only)."""
    tot = []
    cache: dict = {}
    for r in ds:
        if r.is_censored or r.n_real == 0:
            continue
        ts = np.asarray(r.real_times)
        L = cache.get(r.real_times)
        if L is None:
            L = cache[r.real_times] = cholesky(cov.matrix(ts))
        gam = mean.mean_matrix(ts, [r.terminal.time], r.arm)[0]
        z = linalg.solve_triangular(L, np.asarray(r.real_values) - gam, lower=True, check_finite=False)
        tot.append(-0.5 * (ts.size * LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + z @ z))
    return math.fsum(tot)


def survival_factor(ds, fam: SurvivalFamily) -> float:
    """A + B: marginal survival log-likelihood (lambda only)."""
    d, c, lo, hi = _survival_data(ds)
    return math.fsum(np.concatenate([fam.logpdf(d), fam.logsf(c), fam.log_interval_mass(lo, hi)]))


def _survival_data(ds):
    d, c, lo, hi = [], [], [], []
    for r in ds:
        if not r.is_censored:
            d.append(r.terminal.time)
        elif r.has_flat:
            a, b = r.death_interval()
            lo.append(a)
            hi.append(b)
        else:
            c.append(r.terminal.time)
    return tuple(np.asarray(x, dtype=float) for x in (d, c, lo, hi))


# -- fit results ----------------------------------------------------------------

@dataclass
class FitResult:
    params: dict
    names: list
    estimates: list
    se: list
    loglik: float
    init_loglik: float
    converged: bool
    iterations: int
    n_evals: int = 0
    message: str = ""
    boundary: bool = False
    singular_information: bool = False
    four_factors: dict | None = None
    extra: dict = field(default_factory=dict)

    def model_params(self) -> ModelParams:
        return ModelParams.from_dict(self.params)

    def survival_family(self) -> SurvivalFamily:
        lam = self.params["lambda"]
        return SurvivalFamily(lam["family"], tuple(lam["params"]))

    def to_dict(self) -> dict:
        return _json_safe(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(**_json_restore(d))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _json_restore(obj):
    if isinstance(obj, str) and obj in ("NaN", "Infinity", "-Infinity"):
        return float(obj.replace("Infinity", "inf"))
    if isinstance(obj, dict):
        return {k: _json_restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_restore(v) for v in obj]
    return obj


# -- optimisation helpers -------------------------------------------------------

def _fd_gradient(f, x, rel_step=1e-5):
    g = np.empty(x.size)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_hessian(f, x, rel_step=1e-4):
    """Central second differences of a scalar function."""
    n = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def _standard_errors(negll, eta, jac):
    """SEs in natural units from the observed information in eta-space."""
    H = fd_hessian(negll, eta)
    H = 0.5 * (H + H.T)
    try:
        Lh = linalg.cholesky(H, lower=True)
    except linalg.LinAlgError:
        warnings.warn("observed information is not positive definite; standard errors unavailable",
                      SingularInformationWarning, stacklevel=3)
        return np.full(eta.size, np.nan), True, H
    cov = linalg.cho_solve((Lh, True), np.eye(eta.size))
    return np.sqrt(np.diag(cov)) * np.abs(jac), False, H


def _minimize(negll, x0, method, maxiter, tol):
    trace = []

    def f(x):
        v = negll(x)
        trace.append(float(v))
        return v

    if method == "nelder-mead":
        res = optimize.minimize(
            f, x0, method="Nelder-Mead",
            options={"xatol": tol, "fatol": tol, "maxiter": maxiter, "maxfev": 50 * maxiter, "adaptive": True},
        )
    else:
        res = optimize.minimize(
            f, x0, method="BFGS", jac=lambda x: _fd_gradient(negll, x),
            options={"gtol": tol, "maxiter": maxiter},
        )
    return res, trace


def _choose_method(n: int, method: str | None) -> str:
    if method:
        return method
    return "nelder-mead" if n <= 8 else "bfgs"


# -- staged estimation ----------------------------------------------------------

def fit_marginal_survival(ds, family: str = "weibull", init=None, maxiter: int = 2000) -> FitResult:
    """Maximise the marginal survival likelihood A + B over lambda."""
    d, c, lo, hi = _survival_data(ds)
    exposure = d.sum() + c.sum() + lo.sum() + 0.5 * (hi - lo).sum()
    n_events = d.size + lo.size
    boundary = n_events == 0
    rate0 = (n_events if n_events else 0.5) / max(exposure, 1e-12)
    if init is None:
        init = {"exponential": (rate0,), "weibull": (1.0, 1.0 / rate0), "gamma": (1.0, rate0)}[family]
    fam0 = SurvivalFamily(family, tuple(init))
    x0 = np.log(np.asarray(fam0.params))

    def negll(eta):
        if np.any(np.abs(eta) > 700):
            return math.inf
        try:
            fam = fam0.with_params(np.exp(eta))
        except ParameterDomainError:
            return math.inf
        v = math.fsum(np.concatenate([fam.logpdf(d), fam.logsf(c), fam.log_interval_mass(lo, hi)]))
        return -v if math.isfinite(v) else math.inf

    init_ll = -negll(x0)
    method = _choose_method(x0.size, None)
    res, trace = _minimize(negll, x0, method, maxiter, 1e-10)
    eta = res.x
    if np.any(np.abs(eta) > 25):
        boundary = True
    if boundary:
        warnings.warn("survival likelihood is maximised on the parameter boundary (no observed deaths)",
                      BoundaryWarning, stacklevel=2)
    elif not res.success:
        raise FitError(f"marginal survival fit did not converge: {res.message}", trace[-20:])
    fam = fam0.with_params(np.exp(eta))
    if boundary:
        se, singular = np.full(eta.size, np.nan), False
    else:
        se, singular, _ = _standard_errors(negll, eta, np.exp(eta))
    return FitResult(
        params={"lambda": {"family": fam.family, "params": list(fam.params)}},
        names=[f"lambda.{p}" for p in fam.param_names],
        estimates=list(fam.params),
        se=list(se),
        loglik=-float(res.fun),
        init_loglik=init_ll,
        converged=bool(res.success) and not boundary,
        iterations=int(res.nit),
        n_evals=int(res.nfev),
        message="parameter boundary: no observed deaths" if boundary else str(res.message),
        boundary=boundary,
        singular_information=singular,
    )


class _GaussianData:
    """Uncensored records pre-grouped by sampling grid for repeated C evaluation."""

    def __init__(self, ds, mean: MeanModel):
        self.groups = {}
        for r in ds:
            if r.is_censored or r.n_real == 0:
                continue
            self.groups.setdefault(r.real_times, []).append(r)
        if not self.groups:
            raise FitError("conditional Gaussian fit needs an uncensored record with a measurement")
        self.blocks = []
        for ts, recs in self.groups.items():
            ts_arr = np.asarray(ts)
            X = np.stack([mean.design(ts_arr, r.terminal.time, r.arm) for r in recs])  # (m, k, p)
            Y = np.array([r.real_values for r in recs])  # (m, k)
            self.blocks.append((ts_arr, X, Y))
        self.p = self.blocks[0][1].shape[2]
        self.n_obs = sum(Y.size for _, _, Y in self.blocks)

    def whitened(self, cov: CovarianceModel):
        out = []
        for ts, X, Y in self.blocks:
            L = cholesky(cov.matrix(ts))
            m, k, p = X.shape
            Xw = linalg.solve_triangular(L, X.transpose(1, 0, 2).reshape(k, m * p), lower=True,
                                         check_finite=False).reshape(k, m, p).transpose(1, 0, 2)
            Yw = linalg.solve_triangular(L, Y.T, lower=True, check_finite=False).T
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            out.append((Xw, Yw, m * logdet))
        return out

    def gls(self, cov: CovarianceModel):
        """Profile the mean coefficients: returns (coef, C at coef)."""
        wh = self.whitened(cov)
        XtX = np.zeros((self.p, self.p))
        Xty = np.zeros(self.p)
        for Xw, Yw, _ in wh:
            XtX += np.einsum("mkp,mkq->pq", Xw, Xw)
            Xty += np.einsum("mkp,mk->p", Xw, Yw)
        try:
            coef = linalg.solve(XtX, Xty, assume_a="pos")
        except linalg.LinAlgError:
            raise FitError("mean coefficients are not identifiable from the uncensored records") from None
        return coef, self.loglik(coef, wh)

    def loglik(self, coef, wh) -> float:
        tot = -0.5 * self.n_obs * LOG_2PI
        for Xw, Yw, ld in wh:
            r = Yw - Xw @ coef
            tot += -0.5 * (ld + np.sum(r * r))
        return float(tot)


def fit_conditional_gaussian(ds, template: ModelParams, fixed_cov: bool = False, maxiter: int = 4000) -> FitResult:
    """Maximise C over psi using uncensored records only.

    Mean coefficients are profiled out by generalised least squares; the
    covariance parameters are optimised on the log scale.  With
    ``fixed_cov`` the template covariance is kept and only the GLS step runs.
    """
    layout = ParamLayout(template)
    data = _GaussianData(ds, template.mean)
    cm0 = template.cov
    cov_free = [n for n in COV_NAMES if n not in layout.fixed]

    def cov_from(eta):
        vals = {n: getattr(cm0, n) for n in COV_NAMES}
        for n, e in zip(cov_free, eta):
            vals[n] = math.exp(e)
        return CovarianceModel(kernel=cm0.kernel, extra=cm0.extra, **vals)

    def neg_profile(eta):
        if np.any(np.abs(eta) > 50):
            return math.inf
        try:
            return -data.gls(cov_from(eta))[1]
        except (NumericalError, ParameterDomainError):
            return math.inf

    x0 = np.log([getattr(cm0, n) for n in cov_free])
    if fixed_cov:
        cov = cm0
        res = None
        init_ll = data.gls(cm0)[1]
    else:
        init_ll = -neg_profile(x0)
        res, trace = _minimize(neg_profile, x0, "nelder-mead", maxiter, 1e-10)
        if not res.success:
            raise FitError(f"conditional Gaussian fit did not converge: {res.message}", trace[-20:])
        cov = cov_from(res.x)
    coef, ll = data.gls(cov)
    mean = template.mean.with_coef(coef)
    fitted = ModelParams(template.survival, mean, cov)

    # standard errors from the full (unprofiled) C over the psi block
    psi_mask = layout.block_mask("psi")
    if fixed_cov:
        psi_mask = layout.block_mask("mean")
    eta_full = layout.pack(fitted)

    def neg_c(eta_sub):
        e = eta_full.copy()
        e[psi_mask] = eta_sub
        try:
            p = layout.unpack(e)
            return -math.fsum([data.loglik(p.mean.coef, data.whitened(p.cov))])
        except (NumericalError, ParameterDomainError):
            return math.inf

    se, singular, _ = _standard_errors(neg_c, eta_full[psi_mask], layout.jacobian_diag(fitted)[psi_mask])
    names = [n for n, m in zip(layout.names, psi_mask) if m]
    nat = layout.natural(fitted)[layout.free][psi_mask]
    return FitResult(
        params={"psi": fitted.psi},
        names=names,
        estimates=list(nat),
        se=list(se),
        loglik=ll,
        init_loglik=init_ll,
        converged=True if res is None else bool(res.success),
        iterations=0 if res is None else int(res.nit),
        n_evals=0 if res is None else int(res.nfev),
        message="GLS with fixed covariance" if res is None else str(res.message),
        singular_information=singular,
    )


def staged_estimates(ds, template: ModelParams) -> ModelParams:
    """Marginal survival fit for lambda, conditional Gaussian fit for psi."""
    lam = fit_marginal_survival(ds, template.survival.family)
    psi = fit_conditional_gaussian(ds, template)
    p = ModelParams.from_dict({"lambda": lam.params["lambda"], "psi": psi.params["psi"]})
    cov = p.cov
    cov = CovarianceModel(cov.sigma_b2, cov.sigma_g2, cov.rho, cov.sigma_e2,
                          kernel=template.cov.kernel, extra=template.cov.extra)
    return ModelParams(p.survival, p.mean, cov)


# -- joint estimation -----------------------------------------------------------

def fit_joint(ds, init: ModelParams | None = None, qc: QuadratureConfig | None = None, *,
              template: ModelParams | None = None, method: str | None = None, maxiter: int = 500,
              gtol: float = 1e-3, fixed: tuple[str, ...] = (), compute_se: bool = True,
              workers: int = 1) -> FitResult:
    """Maximise the full log-likelihood, starting from staged estimates by default."""
    if init is None:
        if template is None:
            raise ParameterDomainError("fit_joint needs either init or a template for staged estimation")
        init = staged_estimates(ds, template)
    layout = ParamLayout(init, fixed)
    ds = ds if isinstance(ds, Dataset) else Dataset(tuple(ds))

    def negll(eta):
        if np.any(np.abs(eta) > 700):
            return math.inf
        try:
            p = layout.unpack(eta)
            v = dataset_loglik(ds, p, qc, workers)
        except (ParameterDomainError, NumericalError):
            return math.inf
        return -v if math.isfinite(v) else math.inf

    x0 = layout.pack(init)
    init_ll = -negll(x0)
    if not math.isfinite(init_ll):
        raise FitError("log-likelihood is not finite at the initial parameters")
    meth = _choose_method(x0.size, method)
    res, trace = _minimize(negll, x0, meth, maxiter, gtol if meth == "bfgs" else 1e-9)
    eta = res.x
    ll = -float(res.fun)
    converged = bool(res.success)
    message = str(res.message)
    if meth == "bfgs" and not converged and "precision" in message.lower():
        # line search stalls once finite-difference noise dominates; accept if stationary
        g = _fd_gradient(negll, eta)
        converged = bool(np.max(np.abs(g)) < 10 * gtol)
    if not ll >= init_ll:
        eta, ll, converged = x0, init_ll, False
        message = "optimizer did not improve on the initial value"
    if not math.isfinite(ll):
        raise FitError("optimisation left the region of finite likelihood", trace[-20:])
    fitted = layout.unpack(eta)
    boundary = bool(np.any(np.abs(eta) > 25))
    if compute_se:
        se, singular, _ = _standard_errors(negll, eta, layout.jacobian_diag(fitted))
    else:
        se, singular = np.full(eta.size, np.nan), False
    ff = four_factor(ds, fitted, qc, workers)
    return FitResult(
        params=fitted.to_dict(),
        names=list(layout.names),
        estimates=list(layout.natural(fitted)[layout.free]),
        se=list(se),
        loglik=ll,
        init_loglik=init_ll,
        converged=converged,
        iterations=int(res.nit),
        n_evals=int(res.nfev),
        message=message,
        boundary=boundary,
        singular_information=singular,
        four_factors=asdict(ff),
        extra={"method": meth, "init": init.to_dict()},
    )


# -- censored-record compatibility -------------------------------------------------

@dataclass
class CompatibilityReport:
    patient_ids: list
    scores: list          # E[Phi(z(T)) | y, T > c] for censored records
    z_scores: list        # Phi^{-1}(score)
    reference_scores: list  # Phi(z) for uncensored records
    statistic: float      # standardised rank-sum statistic
    p_value: float
    flagged: bool
    skipped: list

    def rows(self):
        return [{"patient_id": p, "score": s, "z": z} for p, s, z in zip(self.patient_ids, self.scores, self.z_scores)]


def censored_compatibility(ds, params: ModelParams, qc: QuadratureConfig | None = None,
                           level: float = 0.05) -> CompatibilityReport:
    """Compare health values of censored records with those of uncensored records.

    Each record's values are summarised by the standardised residual
    z(t) = 1' L^{-1} (y - gamma(t)) / sqrt(k), which is N(0, 1) given T = t.
    Uncensored records use their death time; censored records average
    Phi(z(T)) over the predictive law of T given the values and survival
    past the censoring time.  A two-sided rank-sum test compares the two
    groups of scores.
    """
    cens_ids, cens_scores, skipped, ref = [], [], [], []
    cache: dict = {}
    for r in ds:
        k = r.n_real
        if k == 0:
            if r.is_censored:
                skipped.append((r.patient_id, "no health measurements"))
            continue
        ts = np.asarray(r.real_times)
        L = cache.get(r.real_times)
        if L is None:
            L = cache[r.real_times] = cholesky(params.cov.matrix(ts))
        y = np.asarray(r.real_values)
        if not r.is_censored:
            gam = params.mean.mean_matrix(ts, [r.terminal.time], r.arm)[0]
            z = linalg.solve_triangular(L, y - gam, lower=True).sum() / math.sqrt(k)
            ref.append(float(special.ndtr(z)))
            continue
        batch = GaussianBatch(ts, y[None, :], [r.arm], params, L=L)
        if r.has_flat:
            lo, hi = r.death_interval()
        else:
            lo, hi = r.terminal.time, math.inf
        # 1' L^{-1} r = r . w with w = L^{-T} 1
        w = linalg.solve_triangular(L.T, np.ones(k), lower=False) / math.sqrt(k)

        def log_weighted(tv, batch=batch, w=w, y=y, arm=r.arm):
            tv = np.asarray(tv)
            lq = batch.log_joint(tv)[0]
            z = (y[None, :] - params.mean.mean_matrix(ts, tv, arm)) @ w
            return np.stack([lq, lq + special.log_ndtr(z)])

        try:
            res = integrate_log(log_weighted, max(lo, batch.tmax), hi, qc)
            score = float(np.exp(res.log_value[1] - res.log_value[0]))
        except NumericalError as exc:
            skipped.append((r.patient_id, str(exc)))
            continue
        cens_ids.append(r.patient_id)
        cens_scores.append(min(max(score, 0.0), 1.0))
    zs = [float(special.ndtri(s)) for s in cens_scores]
    if not cens_scores or not ref:
        return CompatibilityReport(cens_ids, cens_scores, zs, ref, math.nan, math.nan, False, skipped)
    n1, n2 = len(cens_scores), len(ref)
    U = stats.mannwhitneyu(cens_scores, ref, alternative="two-sided", method="asymptotic")
    stat = (U.statistic - n1 * n2 / 2.0) / math.sqrt(n1 * n2 * (n1 + n2 + 1) / 12.0)
    return CompatibilityReport(cens_ids, cens_scores, zs, ref, float(stat), float(U.pvalue),
                               bool(U.pvalue < level), skipped)


def dataset_loglik_with_policy(ds, params: ModelParams, policy, qc: QuadratureConfig | None = None) -> float:
    """Full sampling density of sequentially scheduled data, including the appointment factor."""
    from .simulate import policy_loglik
    return dataset_loglik(ds, params, qc) + policy_loglik(ds, policy)
