import csv
import json
import os
import shutil
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revival import cli
from revival.exceptions import DataError, NumericalError
from revival.io import (fmt, read_dataset, read_event_records, write_dataset, write_event_records)
from revival.poisson import EventRecord
from revival.records import Censored, Dataset, Death
from revival.simulate import annual_visit_config, simulate

from conftest import make_record

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def write(path, text):
    path.write_text(textwrap.dedent(text).lstrip())
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def toy(tmp_path):
    lp = write(tmp_path / "long.csv", """
        patient_id,time,value,arm
        7,0.0,5.5,placebo
        7,1.0,4.0,placebo
        """)
    sp = write(tmp_path / "surv.csv", """
        patient_id,event_time,status,arm,age
        7,2.5,dead,placebo,61
        """)
    return lp, sp


def config(tmp_path, name, **replace):
    """Copy a shipped config next to ``tmp_path`` with its output redirected there."""
    src = os.path.join(CONFIGS, name)
    text = open(src).read()
    for old, new in replace.items():
        text = text.replace(old, new)
    dst = tmp_path / name
    dst.write_text(text)
    return str(dst)


# --- ingestion -------------------------------------------------------------

def test_two_row_toy_files(toy):
    data = read_dataset(*toy)
    assert len(data) == 1
    rec = data.by_id(7)
    assert rec.appointments == (0.0, 1.0) and rec.outcomes == (5.5, 4.0)
    assert rec.T == 2.5 and rec.covariates == {"age": 61.0}
    assert rec.arm_schedule(0.5) == "placebo"


def test_days_to_years(tmp_path):
    lp = write(tmp_path / "l.csv", "patient_id,time_days,value\n1,0,3\n1,365.25,4\n")
    sp = write(tmp_path / "s.csv", "patient_id,event_time_days,status\n1,1855,dead\n")
    rec = read_dataset(lp, sp).by_id(1)
    assert rec.T == pytest.approx(5.078, abs=1e-3)
    assert rec.T == 1855 / 365.25
    assert rec.appointments == (0.0, 1.0)
    lp2 = write(tmp_path / "l2.csv", "patient_id,time,value\n1,0,3\n")
    sp2 = write(tmp_path / "s2.csv", "patient_id,event_time,status\n1,1855,dead\n")
    assert read_dataset(lp2, sp2, time_unit="days").by_id(1).T == 1855 / 365.25


def test_appointment_at_death_names_patient(tmp_path):
    lp = write(tmp_path / "l.csv", "patient_id,time,value\nA17,0,3\nA17,2.5,4\n")
    sp = write(tmp_path / "s.csv", "patient_id,event_time,status\nA17,2.5,dead\n")
    with pytest.raises(DataError, match="A17.*appointment at or after death"):
        read_dataset(lp, sp)


def test_orphan_id_rejected_with_line(tmp_path):
    lp = write(tmp_path / "l.csv", "patient_id,time,value\n1,0,3\n2,0,4\n")
    sp = write(tmp_path / "s.csv", "patient_id,event_time,status\n1,3,dead\n")
    with pytest.raises(DataError, match=r"l\.csv:3: patient 2 has no row"):
        read_dataset(lp, sp)


def test_duplicate_rows_rejected(tmp_path):
    lp = write(tmp_path / "l.csv", "patient_id,time,value\n1,0,3\n1,0,4\n")
    sp = write(tmp_path / "s.csv", "patient_id,event_time,status\n1,3,dead\n")
    with pytest.raises(DataError, match="duplicate time"):
        read_dataset(lp, sp)
    sp2 = write(tmp_path / "s2.csv", "patient_id,event_time,status\n1,3,dead\n1,4,dead\n")
    with pytest.raises(DataError, match="duplicate patient_id"):
        read_dataset(lp, sp2)


@pytest.mark.parametrize("long_text, surv_text, pattern", [
    ("patient_id,time,value\n1,0,abc\n", "patient_id,event_time,status\n1,3,dead\n",
     r"l\.csv:2: column 'value'"),
    ("patient_id,time,value\n1,0,nan\n", "patient_id,event_time,status\n1,3,dead\n", "non-finite"),
    ("patient_id,time\n1,0\n", "patient_id,event_time,status\n1,3,dead\n", "missing column 'value'"),
    ("patient_id,time,value\n1,0,1\n", "patient_id,event_time,status\n1,3,zombie\n", "status"),
    ("patient_id,time,value\n1,0,1\n", "patient_id,status\n1,dead\n", "event_time"),
    ("patient_id,time,value\n1,0,1\n", "", "empty file"),
])
def test_malformed_files(tmp_path, long_text, surv_text, pattern):
    lp = write(tmp_path / "l.csv", long_text)
    sp = write(tmp_path / "s.csv", surv_text) if surv_text else str(tmp_path / "s.csv")
    if not surv_text:
        open(sp, "w").close()
    with pytest.raises(DataError, match=pattern):
        read_dataset(lp, sp)


def test_censored_and_unobserved_patients(tmp_path):
    lp = write(tmp_path / "l.csv", "patient_id,time,value\n1,0,3\n")
    sp = write(tmp_path / "s.csv", "patient_id,event_time,status\n1,3,censored\n2,1,dead\n")
    data = read_dataset(lp, sp)
    assert data.by_id(1).is_censored and data.by_id(2).appointments == ()


def test_roundtrip_simulated(tmp_path):
    data = simulate(annual_visit_config(n_patients=80, seed=9))
    write_dataset(data, tmp_path / "l.csv", tmp_path / "s.csv")
    assert read_dataset(tmp_path / "l.csv", tmp_path / "s.csv") == data


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.lists(st.floats(0, 50, allow_subnormal=False), max_size=5, unique=True),
                          st.floats(1e-3, 100), st.booleans(),
                          st.floats(-1e6, 1e6, allow_subnormal=False),
                          st.sampled_from([None, "a", "b b"])),
                min_size=1, max_size=6))
def test_roundtrip_lossless(tmp_path_factory, specs):
    recs = []
    for i, (times, span, dead, x, arm) in enumerate(specs):
        times = sorted(times)
        end = (times[-1] if times else 0.0) + span
        vals = [x + k for k in range(len(times))]
        recs.append(make_record(f"p{i}", times, vals, T=end if dead else None,
                                c=None if dead else end, arm=arm, covariates={"z": x / 3}))
    data = Dataset(recs)
    d = tmp_path_factory.mktemp("rt")
    write_dataset(data, d / "l.csv", d / "s.csv")
    assert read_dataset(d / "l.csv", d / "s.csv") == data


def test_event_records_roundtrip(tmp_path):
    recs = [EventRecord(1, 2.0, (0.25, 1.5), Death(4.0)),
            EventRecord(2, 1.5, (), Censored(3.0)),
            EventRecord(3, 0.5, (0.1,), Death(0.75))]
    write_event_records(recs, tmp_path / "e.csv", tmp_path / "s.csv")
    assert read_event_records(tmp_path / "e.csv", tmp_path / "s.csv") == recs


def test_event_records_need_window(tmp_path):
    ep = write(tmp_path / "e.csv", "patient_id,event_time\n1,0.5\n")
    sp = write(tmp_path / "s.csv", "patient_id,event_time,status\n1,3,dead\n")
    with pytest.raises(DataError, match="window"):
        read_event_records(ep, sp)


def test_fmt_precision():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(float("inf")) == "inf" and fmt(float("nan")) == "nan" and fmt(None) == ""
    assert fmt(2.0) == "2"


# --- command line ----------------------------------------------------------

def test_version_and_usage(capsys):
    assert cli.run(["--version"]) == 0
    assert cli.run(["explode", "-c", "x.yaml"]) == 1
    assert cli.run(["simulate"]) == 1


def test_config_errors(tmp_path):
    assert cli.run(["simulate", "-c", str(tmp_path / "missing.yaml")]) == 1
    bad = write(tmp_path / "bad.yaml", "seed: [1\n")
    assert cli.run(["simulate", "-c", bad]) == 1
    unknown = write(tmp_path / "unknown.yaml", "seeed: 1\n")
    assert cli.run(["simulate", "-c", unknown]) == 1
    noseed = config(tmp_path, "annual_visits.yaml", **{"seed: 1\n": ""})
    assert cli.run(["simulate", "-c", noseed, "-o", str(tmp_path / "o")]) == 1


def test_data_error_exit_code(tmp_path):
    write(tmp_path / "l.csv", "patient_id,time,value\n1,0,3\n9,0,4\n")
    write(tmp_path / "s.csv", "patient_id,event_time,status\n1,3,dead\n")
    cfg = write(tmp_path / "d.yaml", """
        data: {longitudinal: l.csv, survival: s.csv}
        diagnose: {bin_width: 1.0}
        """)
    assert cli.run(["diagnose", "-c", cfg, "-o", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("exc", [NumericalError("boom"), np.linalg.LinAlgError("not PD")])
def test_numerical_exit_code(tmp_path, monkeypatch, exc):
    def fail(cfg, out):
        raise exc
    monkeypatch.setitem(cli.COMMANDS, "simulate", fail)
    cfg = config(tmp_path, "annual_visits.yaml")
    assert cli.run(["simulate", "-c", cfg, "-o", str(tmp_path / "o")]) == 3


def test_simulate_is_byte_deterministic(tmp_path):
    cfg = config(tmp_path, "annual_visits.yaml")
    outs = []
    for run in ("a", "b"):
        assert cli.run(["simulate", "-c", cfg, "-o", str(tmp_path / run)]) == 0
        outs.append({f: (tmp_path / run / f).read_bytes() for f in ("longitudinal.csv", "survival.csv")})
    assert outs[0] == outs[1]
    rows = read_csv(tmp_path / "a" / "longitudinal.csv")
    assert list(rows[0]) == ["patient_id", "time", "value", "arm"]
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["command"] == "simulate"
    assert len(manifest["config_sha256"]) == 64 and "Philox" in manifest["rng"]
    assert manifest["info"]["n_patients"] == 200


def test_predict_baseline_matches_shifted_exponential(tmp_path):
    cfg = config(tmp_path, "baseline_prediction.yaml")
    assert cli.run(["predict", "-c", cfg, "-o", str(tmp_path / "p")]) == 0
    rows = read_csv(tmp_path / "p" / "curve.csv")
    assert list(rows[0]) == ["t", "log_ratio", "density", "hazard_ratio"]
    t = np.array([float(r["t"]) for r in rows])
    dens = np.array([float(r["density"]) for r in rows])
    assert t[0] == pytest.approx(3.01) and t[-1] == pytest.approx(100.0)
    assert np.max(np.abs(dens - np.exp(-(t - 3) / 10) / 10)) < 1e-3


def test_predict_outputs_are_byte_identical(tmp_path):
    cfg = config(tmp_path, "baseline_prediction.yaml")
    blobs = []
    for run in ("a", "b"):
        assert cli.run(["predict", "-c", cfg, "-o", str(tmp_path / run)]) == 0
        blobs.append((tmp_path / run / "curve.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_simulate_fit_diagnose_pipeline(tmp_path):
    sim = config(tmp_path, "annual_visits.yaml", **{"n_patients: 200": "n_patients: 40"})
    assert cli.run(["simulate", "-c", sim]) == 0
    assert (tmp_path / "out" / "annual_visits" / "survival.csv").exists()

    fit = config(tmp_path, "fit_growth_curve.yaml")
    assert cli.run(["fit-survival", "-c", fit]) == 0
    surv = {r["parameter"]: float(r["value"]) for r in
            read_csv(tmp_path / "out" / "fit_growth_curve" / "survival_fit.csv")}
    assert surv["mean"] > 0 and np.isfinite(surv["log_likelihood"])

    assert cli.run(["diagnose", "-c", fit]) == 0
    out = tmp_path / "out" / "fit_growth_curve"
    summary = {r["quantity"]: float(r["value"]) for r in read_csv(out / "alignment.csv")}
    assert {"ss_forward", "ss_reverse", "rss_forward", "rss_reverse"} <= set(summary)
    header = next(csv.reader(open(out / "table_means.csv")))
    assert header[0] == "T_bin" and header[-1] == "8+"
    counts = read_csv(out / "table_counts.csv")
    total = sum(int(v) for r in counts for k, v in r.items() if k != "T_bin")
    assert total == read_dataset(tmp_path / "out" / "annual_visits" / "longitudinal.csv",
                                 tmp_path / "out" / "annual_visits" / "survival.csv").n_observations


@pytest.mark.slow
def test_fit_revival_and_predict_from_fit(tmp_path):
    sim = config(tmp_path, "annual_visits.yaml", **{"n_patients: 200": "n_patients: 60"})
    assert cli.run(["simulate", "-c", sim]) == 0
    fit = config(tmp_path, "fit_growth_curve.yaml")
    assert cli.run(["fit-revival", "-c", fit]) == 0
    out = tmp_path / "out" / "fit_growth_curve"
    var = read_csv(out / "variance.csv")
    assert [r["component"] for r in var] == ["shared", "patient_temporal", "patient", "noise"]
    assert var[1]["kernel"] == "exponential(lam=5)"
    assert all(float(r["sigma2"]) >= 0 for r in var)
    coef = read_csv(out / "coefficients.csv")
    assert {r["estimable"] for r in coef} <= {"true", "false"}
    assert cli.run(["predict", "-c", fit]) == 0
    rows = read_csv(out / "curve.csv")
    assert len(rows) > 100 and all(float(r["density"]) >= 0 for r in rows)


def test_recurrent_curves(tmp_path):
    cfg = config(tmp_path, "recurrent.yaml")
    assert cli.run(["recurrent", "-c", cfg, "-o", str(tmp_path / "r")]) == 0
    for name in ("none", "two", "three"):
        rows = read_csv(tmp_path / "r" / f"curve_{name}.csv")
        assert list(rows[0]) == ["t", "log_ratio", "density", "hazard_ratio"]
    params = {r["parameter"]: r["value"] for r in read_csv(tmp_path / "r" / "intensity.csv")}
    assert params == {"family": "rational", "a": "1", "b": "1"}


def test_recurrent_fit_from_simulated_events(tmp_path):
    cfg = write(tmp_path / "ev.yaml", """
        seed: 4
        survival: {family: exponential, mean: 5}
        simulation:
          n_patients: 300
          events: {intensity: {family: constant, a: 2.0}, window: 2.0}
        output: sim
        """)
    assert cli.run(["simulate", "-c", cfg]) == 0
    fit = write(tmp_path / "fit.yaml", """
        data: {events: sim/events.csv, survival: sim/survival.csv}
        survival: {family: exponential}
        recurrent: {intensity: {fit: constant}, max_curves: 2}
        output: fit
        """)
    assert cli.run(["recurrent", "-c", fit]) == 0
    params = {r["parameter"]: r["value"] for r in read_csv(tmp_path / "fit" / "intensity.csv")}
    assert float(params["a"]) == pytest.approx(2.0, rel=0.15)
    assert (tmp_path / "fit" / "curve_1.csv").exists()


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("revival")
    cmd = [exe] if exe else [sys.executable, "-m", "revival.cli"]
    res = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "revival" in res.stdout
    res = subprocess.run(cmd + ["diagnose", "-c", str(tmp_path / "none.yaml")],
                         capture_output=True, text=True)
    assert res.returncode == 1 and "configuration error" in res.stderr
