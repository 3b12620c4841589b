import pickle

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitalsurv.core import (FLAT, Censored, Dataset, Death, ModelParams, PatientRecord, is_flat, read_dataset,
                            state_value, validate, write_data_csv, write_events_csv)
from vitalsurv.errors import ConfigError, DataError

from conftest import make_params


def test_flat_is_a_singleton_equal_only_to_itself():
    assert FLAT == FLAT
    assert FLAT != 0.0 and FLAT != "FLAT" and FLAT is not None
    assert pickle.loads(pickle.dumps(FLAT)) is FLAT
    assert state_value("FLAT") is FLAT and state_value(" flat ") is FLAT
    assert is_flat(FLAT) and not is_flat(1.0)


@pytest.mark.parametrize("bad", ["nan", "inf", "-inf"])
def test_state_value_rejects_non_finite(bad):
    with pytest.raises(DataError):
        state_value(bad)


def test_validate_examples():
    ok = PatientRecord("a", (1, 2, 3), (0.1, 0.2, 0.3), Death(5))
    assert validate(ok) == []
    bad_order = PatientRecord("b", (1, 3, 2), (0.1, 0.2, 0.3), Death(5))
    assert validate(bad_order) == ["non-increasing times"]
    gap = PatientRecord("c", (1, 2, 3), (0.1, FLAT, 0.3), Censored(3))
    assert validate(gap) == ["non-contiguous FLAT values"]


def test_validate_reports_each_violation():
    r = PatientRecord("d", (1, 0.5, 6), (0.1, 0.2, 0.3), Death(5))
    v = validate(r)
    assert "non-increasing times" in v
    assert any("after death" in m or "at or after death" in m for m in v)


def test_validate_censoring_before_last_time():
    r = PatientRecord("e", (1, 2), (0.1, 0.2), Censored(1.5))
    assert validate(r)


def test_trailing_flat_interval():
    r = PatientRecord("f", (0, 1, 2, 3), (0.5, 0.4, FLAT, FLAT), Censored(3))
    assert validate(r) == []
    assert r.is_interval_censored and r.n_real == 2
    assert r.death_interval() == (1.0, 2.0)


def test_dataset_censored_index():
    recs = [PatientRecord("a", (), (), Death(1)), PatientRecord("b", (), (), Censored(2)),
            PatientRecord("c", (0,), (1.0,), Censored(3))]
    ds = Dataset(recs)
    assert ds.censored_index == frozenset({1, 2})
    assert len(ds.uncensored()) == 1 and len(ds.censored()) == 2


def test_params_dict_round_trip():
    p = make_params()
    assert ModelParams.from_dict(p.to_dict()) == p


def test_params_malformed():
    with pytest.raises(ConfigError):
        ModelParams.from_dict({"lambda": {"family": "weibull"}})


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def records(draw, pid):
    k = draw(st.integers(0, 6))
    gaps = draw(st.lists(st.floats(1e-3, 5.0), min_size=k, max_size=k))
    times, t = [], draw(st.floats(0, 1))
    for g in gaps:
        times.append(t)
        t += g
    n_flat = draw(st.integers(0, k)) if k else 0
    vals = [draw(finite) for _ in range(k - n_flat)] + [FLAT] * n_flat
    censored = n_flat > 0 or draw(st.booleans())
    last = times[-1] if times else 0.0
    end = last + draw(st.floats(1e-3, 10.0))
    terminal = Censored(max(end, last)) if censored else Death(end)
    return PatientRecord(pid, tuple(times), tuple(vals), terminal, arm=draw(st.integers(0, 2)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=5, unique=True).flatmap(
    lambda ids: st.tuples(*[records(f"id{i}") for i in ids])))
def test_csv_round_trip(tmp_path_factory, recs):
    d = tmp_path_factory.mktemp("rt")
    write_data_csv(recs, d / "data.csv")
    write_events_csv(recs, d / "events.csv")
    back = read_dataset(d / "data.csv", d / "events.csv")
    assert tuple(back.records) == tuple(recs)
    for r in recs:
        assert validate(r) == []


def test_read_dataset_reports_line(tmp_path):
    (tmp_path / "d.csv").write_text("patient_id,time,value\na,0,1.0\na,1,oops\n")
    (tmp_path / "e.csv").write_text("patient_id,terminal_time,status,arm\na,3,1,0\n")
    with pytest.raises(DataError, match=":3:"):
        read_dataset(tmp_path / "d.csv", tmp_path / "e.csv")


def test_read_dataset_unknown_patient(tmp_path):
    (tmp_path / "d.csv").write_text("patient_id,time,value\nzz,0,1.0\n")
    (tmp_path / "e.csv").write_text("patient_id,terminal_time,status,arm\na,3,1,0\n")
    with pytest.raises(DataError):
        read_dataset(tmp_path / "d.csv", tmp_path / "e.csv")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(finite, st.just(FLAT)), max_size=5), st.lists(st.floats(-5, 20), max_size=5),
       st.floats(-5, 20), st.booleans())
def test_validate_is_total(vals, times, tend, dead):
    n = min(len(vals), len(times))
    r = PatientRecord("x", tuple(times[:n]), tuple(vals[:n]), Death(tend) if dead else Censored(tend))
    assert isinstance(validate(r), list)
