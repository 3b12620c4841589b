"""Command-line entry point.

Subcommands: simulate, fit, predict, diagnose, check-exogeneity,
check-vitality.  Errors are reported as a JSON object on stderr and mapped
to exit codes 2 (configuration), 3 (data), 4 (numerical) and 5 (fit did
not converge).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import checkers
from .core import ModelParams, check_dataset, fmt, read_dataset, write_data_csv, write_events_csv
from .density import ClinicalPredictive
from .errors import ConfigError, VitalsurvError
from .exogenous import MCConfig, exogeneity_probe, model_from_dict
from .likelihood import FitResult, censored_compatibility, fit_joint, four_factor
from .quadrature import QuadratureConfig
from .simulate import scheme_from_dict, simulate_dataset


def _read_json(path, what="configuration"):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc}") from None


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise ConfigError(f"--{n.replace('_', '-')} is required for {args.command}")


class _Outputs:
    """Refuses to overwrite existing artifacts unless --force was given."""

    def __init__(self, out, force: bool, is_dir: bool = True):
        self.out = Path(out)
        self.force = force
        if is_dir:
            self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str | None = None) -> Path:
        p = self.out / name if name else self.out
        if p.exists() and not self.force:
            raise ConfigError(f"{p} exists; pass --force to overwrite")
        return p


def _qc(args) -> QuadratureConfig:
    return QuadratureConfig(rtol=args.tol) if args.tol else QuadratureConfig()


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_dataset(args):
    _require(args, "events")
    ds = read_dataset(args.data, args.events)
    check_dataset(ds)
    return ds


def _model_params(args) -> ModelParams:
    _require(args, "model")
    d = _read_json(args.model, "model")
    return ModelParams.from_dict(d)


# -- commands ------------------------------------------------------------------

def cmd_simulate(args):
    _require(args, "model", "seed", "out")
    model = _read_json(args.model, "model")
    params = ModelParams.from_dict(model)
    scheme = _read_json(args.scheme, "scheme") if args.scheme else model.get("scheme")
    if scheme is None:
        raise ConfigError("no scheme given: use --scheme or a 'scheme' block in the model file")
    schedule, policy, horizon, n = scheme_from_dict(scheme)
    if args.n is not None:
        n = args.n
    ds = simulate_dataset(n, params, args.seed, schedule=schedule, policy=policy, horizon=horizon)
    out = _Outputs(args.out, args.force)
    write_data_csv(ds, out.path("data.csv"))
    write_events_csv(ds, out.path("events.csv"))
    return {"patients": len(ds), "censored": len(ds.censored_index)}


def cmd_fit(args):
    _require(args, "out")
    ds = _load_dataset(args)
    template = _model_params(args)
    out = _Outputs(args.out, args.force)
    fit_path, comp_path = out.path("fit.json"), out.path("compatibility.csv")
    qc = _qc(args)
    init = template if args.init == "model" else None
    res = fit_joint(ds, init=init, template=template, qc=qc, workers=args.workers)
    _write_json(fit_path, res.to_dict())
    report = censored_compatibility(ds, res.model_params(), qc)
    _write_compatibility(comp_path, report)
    if not res.converged:
        from .errors import FitError
        raise FitError(f"joint fit did not converge: {res.message}")
    return {"loglik": res.loglik, "converged": res.converged, "compatibility_statistic": report.statistic}


def _write_compatibility(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "score", "z"])
        for row in report.rows():
            w.writerow([row["patient_id"], fmt(row["score"]), fmt(row["z"])])


def _params_from_fit_or_model(args) -> ModelParams:
    if args.fit:
        return FitResult.from_json(Path(args.fit).read_text()).model_params()
    return _model_params(args)


def _parse_grid(text: str) -> np.ndarray:
    try:
        parts = [float(v) for v in text.split(":")]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected start:stop:step") from None
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise ConfigError(f"bad grid {text!r}; expected start:stop:step with positive step")
    n = int(np.floor((parts[1] - parts[0]) / parts[2] + 1e-9))
    return parts[0] + parts[2] * np.arange(n + 1)


def cmd_predict(args):
    _require(args, "out")
    params = _params_from_fit_or_model(args)
    ts, y, arm, lower = (), (), args.arm, None
    if args.patient is not None:
        ds = _load_dataset(args)
        rec = next((r for r in ds if r.patient_id == args.patient), None)
        if rec is None:
            from .errors import DataError
            raise DataError(f"patient {args.patient!r} not found")
        ts, y, arm = rec.real_times, rec.real_values, rec.arm
        if args.given_survival and rec.is_censored:
            lower = rec.terminal.time
    pred = ClinicalPredictive(ts, y, arm, params, _qc(args), lower)
    grid = _parse_grid(args.grid)
    dens = pred.pdf(grid)
    surv = pred.sf(grid)
    path = _Outputs(Path(args.out).parent, args.force).path(Path(args.out).name)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "density", "survivor"])
        for t, d, s in zip(grid, dens, surv):
            w.writerow([fmt(t), fmt(d), fmt(s)])
    return {"n_points": int(grid.size), "support_start": pred.lower}


def cmd_diagnose(args):
    _require(args, "fit", "out")
    res = FitResult.from_json(Path(args.fit).read_text())
    ds = _load_dataset(args)
    params = res.model_params()
    qc = _qc(args)
    ff = four_factor(ds, params, qc, args.workers)
    report = censored_compatibility(ds, params, qc)
    out = _Outputs(args.out, args.force)
    _write_json(out.path("fit.json"), res.to_dict())
    _write_compatibility(out.path("compatibility.csv"), report)
    summary = {
        "four_factors": {"A": ff.A, "B": ff.B, "C": ff.C, "D": ff.D, "total": ff.total},
        "compatibility": {"statistic": report.statistic, "p_value": report.p_value, "flagged": report.flagged,
                          "n_censored": len(report.scores), "skipped": [list(s) for s in report.skipped]},
    }
    _write_json(out.path("diagnose.json"), _nan_safe(summary))
    return summary["compatibility"]


def _nan_safe(obj):
    from .likelihood import _json_safe
    return _json_safe(obj)


def cmd_check_exogeneity(args):
    _require(args, "model", "seed", "out")
    cfg = _read_json(args.model, "exposure model")
    probe = _read_json(args.probe, "probe") if args.probe else cfg.get("probe")
    if probe is None:
        raise ConfigError("no probe given: use --probe or a 'probe' block in the model file")
    model = model_from_dict(cfg.get("model", cfg))
    mc = MCConfig(n_paths=args.mc_paths or 10_000, seed=args.seed)
    try:
        rep = exogeneity_probe(model, probe["ts"], probe["x"], float(probe["t"]), int(probe["index"]),
                               float(probe.get("delta", 1.0)), mc)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad probe specification: {exc}") from None
    path = _Outputs(Path(args.out).parent, args.force).path(Path(args.out).name)
    d = {"estimate": rep.change, "se": rep.se, "verdict": rep.verdict, **rep.to_dict()}
    _write_json(path, d)
    return {"change": rep.change, "se": rep.se}


def cmd_check_vitality(args):
    _require(args, "spec", "out")
    spec = _read_json(args.spec, "trajectory table")
    if args.kind == "vitality":
        v = checkers.vitality_check(spec)
    else:
        v = checkers.independent_evolution_check(spec, args.direction)
    path = _Outputs(Path(args.out).parent, args.force).path(Path(args.out).name)
    _write_json(path, v.to_dict())
    return {"holds": v.holds, "verdict": v.label}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "diagnose": cmd_diagnose,
    "check-exogeneity": cmd_check_exogeneity,
    "check-vitality": cmd_check_vitality,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flag defaults (flags given on the command line win)")
    common.add_argument("--data", help="long-format measurement CSV")
    common.add_argument("--events", help="event CSV (one row per patient)")
    common.add_argument("--model", help="model configuration JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--tol", type=float, help="quadrature relative tolerance")
    common.add_argument("--mc-paths", type=int, dest="mc_paths")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = argparse.ArgumentParser(prog="vitalsurv", description="Survival analysis with vital health processes")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--scheme", help="scheme JSON (overrides the model file's 'scheme' block)")
    s.add_argument("--n", type=int, help="number of patients")
    s = sub.add_parser("fit", parents=[common])
    s.add_argument("--init", choices=("staged", "model"), default="staged")
    s = sub.add_parser("predict", parents=[common])
    s.add_argument("--fit", help="FitResult JSON (instead of --model)")
    s.add_argument("--patient")
    s.add_argument("--arm", type=int, default=0)
    s.add_argument("--grid", default="0:20:0.5", help="start:stop:step")
    s.add_argument("--given-survival", action="store_true", dest="given_survival",
                   help="also condition on survival to the censoring time")
    s = sub.add_parser("diagnose", parents=[common])
    s.add_argument("--fit")
    s = sub.add_parser("check-exogeneity", parents=[common])
    s.add_argument("--probe", help="probe JSON: ts, x, t, index, delta")
    s = sub.add_parser("check-vitality", parents=[common])
    s.add_argument("--spec", help="trajectory-table JSON")
    s.add_argument("--kind", choices=("vitality", "independent-evolution"), default="vitality")
    s.add_argument("--direction", choices=("x", "y"), default="y")
    return p


def _apply_config(args, argv):
    if not args.config:
        return args
    cfg = _read_json(args.config)
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for k, v in cfg.items():
        k = k.replace("-", "_")
        if not hasattr(args, k):
            raise ConfigError(f"unknown configuration key {k!r}")
        if k not in given:
            setattr(args, k, v)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        args = _apply_config(args, argv)
        if args.workers is None:
            args.workers = os.cpu_count() or 1
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            summary = COMMANDS[args.command](args)
    except VitalsurvError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if getattr(exc, "patient_id", None) is not None:
            err["patient_id"] = exc.patient_id
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 2}), file=sys.stderr)
        return 2
    print(json.dumps(_nan_safe(summary)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
