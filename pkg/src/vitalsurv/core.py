"""Domain data model: state values, patient records, datasets, parameters.

File formats
------------
* data CSV (long format): ``patient_id,time,value[,next_scheduled]`` where
  ``value`` is a real number or the token ``FLAT`` (the absorbing death state).
* events CSV: ``patient_id,terminal_time,status,arm`` with status 1 = death,
  0 = censored.
* model JSON: ``{"lambda": {"family": ..., "params": [...]}, "psi": {...}}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from .errors import ConfigError, DataError
from .revival import CovarianceModel, CurveBasis, MeanModel
from .survival import SurvivalFamily

FLAT_TOKEN = "FLAT"


class _Flat:
    """The absorbing state; a singleton distinct from every real number."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return FLAT_TOKEN

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash(FLAT_TOKEN)

    def __reduce__(self):
        return (_Flat, ())


FLAT = _Flat()
StateValue = Union[float, _Flat]


def is_flat(v) -> bool:
    return v is FLAT


def state_value(v) -> StateValue:
    """Coerce a parsed token or number to a StateValue."""
    if v is FLAT or (isinstance(v, str) and v.strip().upper() == FLAT_TOKEN):
        return FLAT
    x = float(v)
    if not math.isfinite(x):
        raise DataError(f"health value must be finite, got {v!r}")
    return x


@dataclass(frozen=True)
class Death:
    time: float


@dataclass(frozen=True)
class Censored:
    time: float


Terminal = Union[Death, Censored]


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    times: tuple[float, ...]
    values: tuple
    terminal: Terminal
    arm: int = 0
    covariates: tuple[float, ...] = ()
    # next_scheduled[j] is the appointment time booked at visit j
    next_scheduled: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "patient_id", str(self.patient_id))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(v if v is FLAT else float(v) for v in self.values))
        object.__setattr__(self, "covariates", tuple(float(c) for c in self.covariates))
        object.__setattr__(self, "arm", int(self.arm))
        if self.next_scheduled is not None:
            object.__setattr__(self, "next_scheduled", tuple(float(t) for t in self.next_scheduled))

    @property
    def is_censored(self) -> bool:
        return isinstance(self.terminal, Censored)

    @property
    def n_real(self) -> int:
        n = 0
        for v in self.values:
            if v is FLAT:
                break
            n += 1
        return n

    @property
    def real_times(self) -> tuple[float, ...]:
        return self.times[: self.n_real]

    @property
    def real_values(self) -> tuple[float, ...]:
        return self.values[: self.n_real]

    @property
    def has_flat(self) -> bool:
        return any(v is FLAT for v in self.values)

    @property
    def is_interval_censored(self) -> bool:
        return self.is_censored and self.has_flat

    def death_interval(self) -> tuple[float, float]:
        """(last real-valued time, first FLAT time) for interval-censored records."""
        n = self.n_real
        lo = self.times[n - 1] if n else 0.0
        return lo, self.times[n]


def validate(record: PatientRecord) -> list[str]:
    """List every violated record invariant; an empty list means valid."""
    out: list[str] = []
    times, values = record.times, record.values
    if any(not math.isfinite(t) for t in times):
        out.append("non-finite sampling time")
    if any(t < 0 for t in times):
        out.append("negative sampling time")
    if any(b <= a for a, b in zip(times, times[1:])):
        out.append("non-increasing times")
    if len(values) != len(times):
        out.append(f"values length {len(values)} != times length {len(times)}")
    if any(v is not FLAT and not math.isfinite(v) for v in values):
        out.append("non-finite health value")
    seen_flat = False
    for v in values:
        if v is FLAT:
            seen_flat = True
        elif seen_flat:
            out.append("non-contiguous FLAT values")
            break
    term = record.terminal
    if not math.isfinite(term.time) or term.time < 0:
        out.append("terminal time must be finite and non-negative")
    pairs = list(zip(times, values))
    if isinstance(term, Death):
        if term.time <= 0:
            out.append("death time must be positive")
        if any(v is not FLAT and t >= term.time for t, v in pairs):
            out.append("real-valued observation at or after death")
        if any(v is FLAT and t < term.time for t, v in pairs):
            out.append("FLAT value before the recorded death time")
    else:
        if times and term.time < times[-1]:
            out.append("censoring time precedes last sampling time")
    if record.next_scheduled is not None and len(record.next_scheduled) != len(times):
        out.append("next_scheduled length does not match times")
    if record.arm < 0:
        out.append("negative arm index")
    return out


@dataclass(frozen=True)
class Dataset:
    records: tuple[PatientRecord, ...]
    censored_index: frozenset = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(
            self, "censored_index", frozenset(i for i, r in enumerate(self.records) if r.is_censored)
        )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def uncensored(self) -> "Dataset":
        return Dataset(tuple(r for r in self.records if not r.is_censored))

    def censored(self) -> "Dataset":
        return Dataset(tuple(r for r in self.records if r.is_censored))


@dataclass(frozen=True)
class ModelParams:
    """theta = (lambda, psi): survival family, mean model and covariance model."""

    survival: SurvivalFamily
    mean: MeanModel
    cov: CovarianceModel

    @property
    def lambda_(self) -> tuple[float, ...]:
        return self.survival.params

    @property
    def psi(self) -> dict:
        return _psi_to_dict(self.mean, self.cov)

    def to_dict(self) -> dict:
        return {"lambda": {"family": self.survival.family, "params": list(self.survival.params)},
                "psi": self.psi}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        try:
            lam = d["lambda"]
            survival = SurvivalFamily(lam["family"], tuple(lam["params"]))
            mean, cov = _psi_from_dict(d["psi"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model parameters: missing {exc}") from None
        return cls(survival, mean, cov)


def _psi_to_dict(mm: MeanModel, cm: CovarianceModel) -> dict:
    return {
        "alpha": list(mm.alpha),
        "curve": {"basis": mm.basis.kind, "knots": list(mm.basis.knots), "coef": list(mm.curve)},
        "beta": list(mm.beta),
        "null_at_recruitment": mm.null_at_recruitment,
        "kernel": cm.kernel,
        "sigma_b2": cm.sigma_b2,
        "sigma_g2": cm.sigma_g2,
        "rho": cm.rho,
        "sigma_e2": cm.sigma_e2,
    }


def _psi_from_dict(p: dict):
    curve = p.get("curve", {"basis": "log1p_linear", "coef": [1.0, 0.0]})
    basis = CurveBasis(curve.get("basis", "log1p_linear"), tuple(curve.get("knots", ())))
    mm = MeanModel(
        alpha=tuple(p.get("alpha", (0.0,))),
        curve=tuple(curve["coef"]),
        beta=tuple(p.get("beta", (0.0,))),
        basis=basis,
        null_at_recruitment=bool(p.get("null_at_recruitment", True)),
    )
    cm = CovarianceModel(
        sigma_b2=float(p["sigma_b2"]),
        sigma_g2=float(p["sigma_g2"]),
        rho=float(p["rho"]),
        sigma_e2=float(p["sigma_e2"]),
        kernel=p.get("kernel", "ou"),
    )
    return mm, cm


def load_params(path) -> ModelParams:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read parameter file {path}: {exc}") from None
    return ModelParams.from_dict(d)


def save_params(params: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


# -- CSV serialisation --------------------------------------------------------

def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_value(v) -> str:
    return FLAT_TOKEN if v is FLAT else fmt(v)


def write_data_csv(records: Iterable[PatientRecord], path) -> None:
    records = list(records)
    annotated = any(r.next_scheduled is not None for r in records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "time", "value"] + (["next_scheduled"] if annotated else []))
        for r in records:
            for j, (t, v) in enumerate(zip(r.times, r.values)):
                row = [r.patient_id, fmt(t), _fmt_value(v)]
                if annotated:
                    row.append(fmt(r.next_scheduled[j]) if r.next_scheduled is not None else "")
                w.writerow(row)


def write_events_csv(records: Iterable[PatientRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "terminal_time", "status", "arm"])
        for r in records:
            status = 0 if r.is_censored else 1
            w.writerow([r.patient_id, fmt(r.terminal.time), status, r.arm])


def read_dataset(data_path, events_path) -> Dataset:
    """Join long-format measurements with the event table, in event-file order."""
    obs: dict[str, list] = {}
    if data_path is not None:
        try:
            with open(data_path, newline="") as fh:
                rd = csv.DictReader(fh)
                missing = {"patient_id", "time", "value"} - set(rd.fieldnames or ())
                if missing:
                    raise DataError(f"{data_path}: missing columns {sorted(missing)}")
                for lineno, row in enumerate(rd, start=2):
                    try:
                        nxt = row.get("next_scheduled")
                        obs.setdefault(row["patient_id"], []).append(
                            (float(row["time"]), state_value(row["value"]),
                             float(nxt) if nxt not in (None, "") else None)
                        )
                    except (ValueError, DataError) as exc:
                        raise DataError(f"{data_path}:{lineno}: {exc}") from None
        except OSError as exc:
            raise DataError(f"cannot read {data_path}: {exc}") from None
    records = []
    try:
        with open(events_path, newline="") as fh:
            rd = csv.DictReader(fh)
            missing = {"patient_id", "terminal_time", "status"} - set(rd.fieldnames or ())
            if missing:
                raise DataError(f"{events_path}: missing columns {sorted(missing)}")
            for lineno, row in enumerate(rd, start=2):
                pid = row["patient_id"]
                try:
                    t = float(row["terminal_time"])
                    status = int(row["status"])
                    arm = int(row.get("arm") or 0)
                except ValueError as exc:
                    raise DataError(f"{events_path}:{lineno}: {exc}") from None
                if status not in (0, 1):
                    raise DataError(f"{events_path}:{lineno}: status must be 0 or 1")
                rows = obs.pop(pid, [])
                nxt = [r[2] for r in rows]
                records.append(
                    PatientRecord(
                        patient_id=pid,
                        times=tuple(r[0] for r in rows),
                        values=tuple(r[1] for r in rows),
                        terminal=Death(t) if status == 1 else Censored(t),
                        arm=arm,
                        next_scheduled=tuple(nxt) if rows and all(x is not None for x in nxt) else None,
                    )
                )
    except OSError as exc:
        raise DataError(f"cannot read {events_path}: {exc}") from None
    if obs:
        raise DataError(f"measurements for patients absent from the event file: {sorted(obs)[:5]}")
    return Dataset(tuple(records))


def check_dataset(ds: Dataset) -> None:
    bad = {r.patient_id: v for r in ds for v in [validate(r)] if v}
    if bad:
        pid, v = next(iter(bad.items()))
        raise DataError(f"{len(bad)} invalid record(s); first {pid!r}: {'; '.join(v)}")
