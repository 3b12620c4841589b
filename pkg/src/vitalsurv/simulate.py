"""Data generation under fixed and sequential appointment schemes.

Both schemes draw the survival time T first and then health values at
pre-death appointments from the Gaussian law given T.  Under the sequential
scheme the next appointment is booked at each visit from an appointment
policy that sees only the observed history; the booked time is kept as the
``next_scheduled`` annotation so that off-schedule visits can be detected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import cholesky
from .core import Censored, Dataset, Death, ModelParams, PatientRecord
from .errors import ConfigError, MissingAnnotationError, ParameterDomainError, PolicyError
from .revival import sample_conditional
from .streams import PatientStreams, as_streams


@dataclass(frozen=True)
class FixedSchedule:
    horizon: float
    times: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        ts = np.asarray(self.times)
        if not self.horizon > 0:
            raise ParameterDomainError("horizon must be positive")
        if ts.size and (np.any(np.diff(ts) <= 0) or ts[0] < 0 or ts[-1] > self.horizon):
            raise ParameterDomainError("schedule times must be increasing within [0, horizon]")

    @classmethod
    def regular(cls, horizon: float, step: float, start: float = 0.0) -> "FixedSchedule":
        n = int(math.floor((horizon - start) / step + 1e-9))
        return cls(horizon, tuple(start + step * j for j in range(n + 1)))


class ValueDependentPolicy:
    """Next gap = min_gap + Exponential(rate), rate = base_rate * exp(-sensitivity * y_last).

    Low (sick) health values bring the next appointment forward.
    """

    def __init__(self, base_rate: float = 4.0, sensitivity: float = 0.5, min_gap: float = 0.05):
        if base_rate <= 0 or min_gap < 0 or not math.isfinite(sensitivity):
            raise ParameterDomainError("need base_rate > 0, min_gap >= 0 and finite sensitivity")
        if min_gap == 0:
            raise ParameterDomainError("min_gap must be positive so that gaps are strictly positive")
        self.base_rate = float(base_rate)
        self.sensitivity = float(sensitivity)
        self.min_gap = float(min_gap)

    def _rate(self, values) -> float:
        y = values[-1] if len(values) else 0.0
        return self.base_rate * math.exp(-self.sensitivity * y)

    def sample_next(self, times, values, rng: np.random.Generator) -> float:
        return times[-1] + self.min_gap + rng.exponential(1.0 / self._rate(values))

    def logpdf_next(self, times, values, t_next: float) -> float:
        gap = t_next - times[-1] - self.min_gap
        if gap < 0:
            return -math.inf
        r = self._rate(values)
        return math.log(r) - r * gap

    def to_dict(self) -> dict:
        return {"kind": "value_dependent", "base_rate": self.base_rate,
                "sensitivity": self.sensitivity, "min_gap": self.min_gap}


class ConstantGapPolicy:
    """Deterministic gap; reproduces the regular fixed schedule 0, gap, 2 gap, ..."""

    def __init__(self, gap: float):
        if not gap > 0:
            raise ParameterDomainError("gap must be positive")
        self.gap = float(gap)

    def sample_next(self, times, values, rng) -> float:
        return times[-1] + self.gap

    def logpdf_next(self, times, values, t_next: float) -> float:
        # point mass: density with respect to counting measure
        return 0.0 if t_next == times[-1] + self.gap else -math.inf

    def to_dict(self) -> dict:
        return {"kind": "constant", "gap": self.gap}


def policy_from_dict(d: dict):
    kind = d.get("kind", "value_dependent")
    args = {k: v for k, v in d.items() if k != "kind"}
    try:
        if kind == "value_dependent":
            return ValueDependentPolicy(**args)
        if kind == "constant":
            return ConstantGapPolicy(**args)
    except TypeError as exc:
        raise ConfigError(f"bad policy specification: {exc}") from None
    raise ConfigError(f"unknown policy kind {kind!r}")


def simulate_fixed(sched: FixedSchedule, arm: int, params: ModelParams, rng, patient_id="0") -> PatientRecord:
    st = as_streams(rng)
    T = float(params.survival.sample(st.survival))
    ts = [s for s in sched.times if s < T]
    y = sample_conditional(ts, T, arm, params.mean, params.cov, st.health) if ts else np.zeros(0)
    terminal = Death(T) if T <= sched.horizon else Censored(sched.horizon)
    return PatientRecord(patient_id, tuple(ts), tuple(y), terminal, arm=arm)


def simulate_sequential(policy, horizon: float, arm: int, params: ModelParams, rng,
                        patient_id="0", max_visits: int = 100_000) -> PatientRecord:
    """Alternate between observing Y(t_j) and booking t_{j+1} until t_j >= T or t_j > L."""
    st = as_streams(rng)
    T = float(params.survival.sample(st.survival))
    times: list[float] = []
    values: list[float] = []
    booked: list[float] = []
    t = 0.0
    while t < T and t <= horizon:
        times.append(t)
        ts = np.asarray(times)
        mu = params.mean.mean_matrix(ts, [T], arm)[0]
        S = params.cov.matrix(ts)
        k = len(times)
        if k == 1:
            m, v = mu[0], S[0, 0]
        else:
            # conditional law of the newest value given those already drawn
            L = cholesky(S[:-1, :-1])
            w = np.linalg.solve(L.T, np.linalg.solve(L, S[:-1, -1]))
            m = mu[-1] + w @ (np.asarray(values) - mu[:-1])
            v = S[-1, -1] - S[:-1, -1] @ w
        values.append(float(m + math.sqrt(max(v, 0.0)) * st.health.standard_normal()))
        t_next = float(policy.sample_next(times, values, st.schedule))
        if not t_next > t:
            raise PolicyError(f"policy proposed non-increasing time {t_next!r} after {t!r}")
        booked.append(t_next)
        t = t_next
        if len(times) >= max_visits:
            raise PolicyError(f"more than {max_visits} appointments booked before the horizon")
    terminal = Death(T) if T <= horizon else Censored(horizon)
    return PatientRecord(patient_id, tuple(times), tuple(values), terminal, arm=arm,
                         next_scheduled=tuple(booked))


def policy_log_density(record: PatientRecord, policy) -> float:
    """log of the product of p(t_{j+1} | observed history up to t_j) over booked appointments."""
    if record.next_scheduled is None:
        raise MissingAnnotationError(f"record {record.patient_id!r} has no next-appointment annotations")
    out = []
    for j, t_next in enumerate(record.next_scheduled):
        out.append(policy.logpdf_next(record.times[: j + 1], record.values[: j + 1], t_next))
    return math.fsum(out)


def policy_loglik(ds, policy) -> float:
    return math.fsum(policy_log_density(r, policy) for r in ds)


@dataclass(frozen=True)
class Breach:
    index: int
    scheduled: float
    actual: float

    @property
    def deviation(self) -> float:
        return self.actual - self.scheduled


def detect_off_schedule(record: PatientRecord, tol: float = 0.0) -> list[Breach]:
    """Visits whose time differs from the time booked at the previous visit by more than ``tol``."""
    if record.next_scheduled is None:
        raise MissingAnnotationError(
            f"record {record.patient_id!r} has no next-appointment annotations; breach detection not applicable")
    out = []
    for j in range(1, len(record.times)):
        sched = record.next_scheduled[j - 1]
        if abs(record.times[j] - sched) > tol:
            out.append(Breach(j, sched, record.times[j]))
    return out


# -- dataset-level helpers -----------------------------------------------------------

def patient_ids(n: int) -> list[str]:
    width = max(4, len(str(n)))
    return [f"p{i + 1:0{width}d}" for i in range(n)]


def _arm(streams: PatientStreams, n_arms: int) -> int:
    return int(streams.arm.integers(n_arms)) if n_arms > 1 else 0


def simulate_dataset(n: int, params: ModelParams, seed: int, schedule: FixedSchedule | None = None,
                     policy=None, horizon: float | None = None, ids=None) -> Dataset:
    """n patients, arms drawn uniformly; each record depends only on (seed, patient_id)."""
    if (schedule is None) == (policy is None):
        raise ConfigError("give exactly one of schedule (fixed scheme) or policy (sequential scheme)")
    ids = patient_ids(n) if ids is None else list(ids)
    out = []
    for pid in ids:
        st = PatientStreams(seed, pid)
        arm = _arm(st, params.mean.n_arms)
        if schedule is not None:
            out.append(simulate_fixed(schedule, arm, params, st, pid))
        else:
            if horizon is None:
                raise ConfigError("sequential scheme needs a horizon")
            out.append(simulate_sequential(policy, horizon, arm, params, st, pid))
    return Dataset(tuple(out))


def scheme_from_dict(d: dict):
    """Parse a scheme spec: returns (schedule, policy, horizon, n)."""
    try:
        kind = d.get("type", "fixed")
        L = float(d["horizon"])
        n = int(d.get("n", 100))
        if kind == "fixed":
            if "times" in d:
                return FixedSchedule(L, tuple(d["times"])), None, L, n
            return FixedSchedule.regular(L, float(d.get("step", 0.25))), None, L, n
        if kind == "sequential":
            return None, policy_from_dict(d.get("policy", {})), L, n
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scheme specification: {exc}") from None
    raise ConfigError(f"unknown scheme type {kind!r}")
