import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from vitalsurv.checkers import lagged_copy_spec, recoded_survival_spec
from vitalsurv.cli import main
from vitalsurv.core import read_dataset
from vitalsurv.likelihood import FitResult, dataset_loglik


@pytest.fixture
def model_file(tmp_path, small_params):
    d = small_params.to_dict()
    d["scheme"] = {"type": "fixed", "horizon": 4.0, "step": 0.5, "n": 60}
    p = tmp_path / "model.json"
    p.write_text(json.dumps(d))
    return p


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_simulate_is_deterministic(tmp_path, model_file, capsys):
    for name in ("a", "b"):
        code, out, _ = _run(capsys, "simulate", "--model", model_file, "--seed", 5, "--out", tmp_path / name)
        assert code == 0 and json.loads(out)["patients"] == 60
    for f in ("data.csv", "events.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    code, _, err = _run(capsys, "simulate", "--model", model_file, "--seed", 5, "--out", tmp_path / "a")
    assert code == 2 and "--force" in json.loads(err)["message"]
    code, _, _ = _run(capsys, "simulate", "--model", model_file, "--seed", 5, "--out", tmp_path / "a", "--force")
    assert code == 0


def test_fit_predict_diagnose_round_trip(tmp_path, model_file, small_params, capsys):
    sim = tmp_path / "sim"
    _run(capsys, "simulate", "--model", model_file, "--seed", 1, "--out", sim)
    data, events = sim / "data.csv", sim / "events.csv"
    code, out, err = _run(capsys, "fit", "--model", model_file, "--data", data, "--events", events,
                          "--out", tmp_path / "fit", "--workers", 1, "--init", "model")
    assert code == 0, err
    res = FitResult.from_json((tmp_path / "fit" / "fit.json").read_text())
    ds = read_dataset(data, events)
    ff = res.four_factors
    assert abs(ff["A"] + ff["B"] + ff["C"] + ff["D"] - res.loglik) < 1e-8
    assert res.loglik == pytest.approx(dataset_loglik(ds, res.model_params()), abs=1e-8)
    with open(tmp_path / "fit" / "compatibility.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(ds.censored_index) and set(rows[0]) == {"patient_id", "score", "z"}

    code, out, err = _run(capsys, "diagnose", "--fit", tmp_path / "fit" / "fit.json", "--data", data,
                          "--events", events, "--out", tmp_path / "diag", "--workers", 1)
    assert code == 0, err
    summary = json.loads((tmp_path / "diag" / "diagnose.json").read_text())
    assert summary["four_factors"]["total"] == pytest.approx(res.loglik, abs=1e-8)
    assert json.loads((tmp_path / "diag" / "fit.json").read_text()) == res.to_dict()

    pid = ds.records[0].patient_id
    code, out, err = _run(capsys, "predict", "--fit", tmp_path / "fit" / "fit.json", "--data", data,
                          "--events", events, "--patient", pid, "--grid", "0:40:0.25",
                          "--out", tmp_path / "pred.csv")
    assert code == 0, err
    arr = np.loadtxt(tmp_path / "pred.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(arr[:, 2]) <= 1e-15)
    assert np.all(arr[:, 1] >= 0)


def test_predict_with_empty_history_is_prior(tmp_path, model_file, small_params, capsys):
    code, _, err = _run(capsys, "predict", "--model", model_file, "--grid", "0.5:6:0.5", "--out", tmp_path / "p.csv")
    assert code == 0, err
    arr = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(arr[:, 1], small_params.survival.pdf(arr[:, 0]), rtol=1e-8)
    np.testing.assert_allclose(arr[:, 2], small_params.survival.sf(arr[:, 0]), rtol=1e-8)
    first = (tmp_path / "p.csv").read_text().splitlines()[1].split(",")
    # full round-trip precision in the CSV
    assert float(first[1]) == float(np.float64(first[1]))


def test_exit_codes(tmp_path, model_file, capsys):
    assert _run(capsys, "simulate", "--seed", 1, "--out", tmp_path / "x")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(capsys, "simulate", "--model", bad, "--seed", 1, "--out", tmp_path / "x")[0] == 2
    data = tmp_path / "data.csv"
    events = tmp_path / "events.csv"
    data.write_text("patient_id,time,value\np1,0.0,1.0\np1,2.0,1.0\n")
    events.write_text("patient_id,terminal_time,status,arm\np1,1.0,1,0\n")
    code, _, err = _run(capsys, "fit", "--model", model_file, "--data", data, "--events", events,
                        "--out", tmp_path / "f")
    # a real-valued measurement after death is a data error
    assert code == 3
    err = json.loads(err)
    assert err["exit_code"] == 3 and "p1" in err["message"]
    events.write_text("patient_id,when,status\np1,1.0,1\n")
    assert _run(capsys, "fit", "--model", model_file, "--data", data, "--events", events,
                "--out", tmp_path / "f2")[0] == 3
    assert _run(capsys, "predict", "--model", model_file, "--grid", "3:1:1", "--out", tmp_path / "g.csv")[0] == 2


def test_check_vitality(tmp_path, capsys):
    for name, spec, kind, holds in (("v", recoded_survival_spec(), "vitality", True),
                                    ("l", lagged_copy_spec(), "independent-evolution", False)):
        sp = tmp_path / f"{name}.json"
        sp.write_text(json.dumps(spec))
        code, out, _ = _run(capsys, "check-vitality", "--spec", sp, "--kind", kind, "--out", tmp_path / f"{name}o.json")
        assert code == 0
        assert json.loads(out)["holds"] is holds
        assert json.loads((tmp_path / f"{name}o.json").read_text())["holds"] is holds


def test_check_exogeneity(tmp_path, capsys):
    cfg = {"model": {"type": "latent", "variance": 1.0, "range": 1.0, "noise_var": 1.0, "b": 0.5},
           "probe": {"ts": [0.5, 1.5, 3.0], "x": [0.2, -0.1, 1.0], "t": 1.0, "index": 2, "delta": 1.0}}
    mp = tmp_path / "exo.json"
    mp.write_text(json.dumps(cfg))
    outs = []
    for k in range(2):
        code, out, err = _run(capsys, "check-exogeneity", "--model", mp, "--seed", 3, "--mc-paths", 2000,
                              "--out", tmp_path / f"probe{k}.json")
        assert code == 0, err
        outs.append(json.loads((tmp_path / f"probe{k}.json").read_text()))
    assert outs[0] == outs[1]
    assert {"estimate", "se", "verdict"} <= set(outs[0])
    assert _run(capsys, "check-exogeneity", "--model", mp, "--out", tmp_path / "p.json")[0] == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "vitalsurv", "check-vitality", "--spec", tmp_path / "none.json",
                        "--out", tmp_path / "o.json"], capture_output=True, text=True)
    assert r.returncode == 2
    assert json.loads(r.stderr)["error"] == "ConfigError"
