"""CSV ingestion and emission.

Longitudinal file: ``patient_id, time, value[, arm]``.  Survival file:
``patient_id, event_time, status[, arm][, window], covariates...`` with
``status`` one of ``dead`` / ``censored``.  Time columns may be named
``time_days`` / ``event_time_days`` to declare day units; otherwise the
``time_unit`` argument applies.  Recurrent events: ``patient_id, event_time``.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import numpy as np

from .exceptions import DataError
from .poisson import EventRecord
from .records import (DAYS_PER_YEAR, NULL_ARM, ArmSchedule, Censored, Dataset, Death,
                      HealthRecord, validate)

STATUS = {"dead": True, "death": True, "1": True, "censored": False, "alive": False, "0": False}
RESERVED = {"patient_id", "event_time", "event_time_days", "event_time_years", "status", "arm",
            "window", "window_days", "window_years"}


def fmt(x, digits=12) -> str:
    """Fixed-precision float text used for all numeric result files."""
    if isinstance(x, (str, bool)) or x is None:
        return "" if x is None else str(x)
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{digits}g}"


def _exact(x) -> str:
    return repr(float(x))


def _reader(path):
    f = open(path, newline="")
    reader = csv.DictReader(f)
    if reader.fieldnames is None:
        f.close()
        raise DataError(f"{path}: empty file")
    reader.fieldnames = [h.strip() for h in reader.fieldnames]
    return f, reader


def _time_column(fields, base, path, unit):
    for name, scale in ((f"{base}_days", 1.0 / DAYS_PER_YEAR), (f"{base}_years", 1.0)):
        if name in fields:
            return name, scale
    if base in fields:
        if unit not in ("years", "days"):
            raise DataError(f"unknown time unit {unit!r}")
        return base, 1.0 if unit == "years" else 1.0 / DAYS_PER_YEAR
    raise DataError(f"{path}: missing column {base!r}")


def _float(value, path, lineno, column):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise DataError(f"{path}:{lineno}: column {column!r}: cannot parse {value!r} as a number") \
            from None
    if not np.isfinite(out):
        raise DataError(f"{path}:{lineno}: column {column!r}: non-finite value")
    return out


def _pid(value):
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        return value


def read_survival(path, time_unit="years") -> dict:
    """``patient_id -> dict(event, arm, window, covariates)``."""
    f, reader = _reader(path)
    with f:
        fields = reader.fieldnames
        if "patient_id" not in fields or "status" not in fields:
            raise DataError(f"{path}: survival file needs patient_id and status columns")
        tcol, tscale = _time_column(fields, "event_time", path, time_unit)
        wcol = next((c for c in ("window_days", "window_years", "window") if c in fields), None)
        wscale = 1.0 / DAYS_PER_YEAR if wcol == "window_days" or \
            (wcol == "window" and time_unit == "days") else 1.0
        covs = [c for c in fields if c not in RESERVED and c != tcol]
        out = {}
        for lineno, row in enumerate(reader, start=2):
            pid = _pid(row["patient_id"] or "")
            if pid == "":
                raise DataError(f"{path}:{lineno}: empty patient_id")
            if pid in out:
                raise DataError(f"{path}:{lineno}: duplicate patient_id {pid!r}")
            status = (row["status"] or "").strip().lower()
            if status not in STATUS:
                raise DataError(f"{path}:{lineno}: status must be 'dead' or 'censored', got {status!r}")
            t = _float(row[tcol], path, lineno, tcol) * tscale
            event = Death(t) if STATUS[status] else Censored(t)
            cov = {c: _float(row[c], path, lineno, c) for c in covs if (row[c] or "").strip() != ""}
            window = _float(row[wcol], path, lineno, wcol) * wscale if wcol and row[wcol] else None
            arm = (row.get("arm") or "").strip() or None
            out[pid] = {"event": event, "arm": arm, "window": window, "covariates": cov,
                        "line": lineno}
    return out


def _schedule(times, arms, fallback):
    """Arm schedule from the arm recorded at each appointment."""
    labels = [(t, a) for t, a in zip(times, arms) if a and a != NULL_ARM]
    if not labels:
        return ArmSchedule.constant(fallback) if fallback else ArmSchedule()
    if len({a for _, a in labels}) == 1:
        return ArmSchedule.constant(labels[0][1])
    changes, prev_t, current = [], 0.0, None
    for t, a in zip(times, arms):
        if a and a != NULL_ARM and a != current:
            changes.append((prev_t if current is not None else 0.0, a))
            current = a
        prev_t = max(t, 0.0)
    return ArmSchedule(tuple(changes))


def read_dataset(longitudinal_path, survival_path, time_unit="years") -> Dataset:
    """Assemble and validate a dataset from the two CSV files."""
    surv = read_survival(survival_path, time_unit)
    f, reader = _reader(longitudinal_path)
    rows = defaultdict(list)
    with f:
        fields = reader.fieldnames
        for col in ("patient_id", "value"):
            if col not in fields:
                raise DataError(f"{longitudinal_path}: missing column {col!r}")
        tcol, tscale = _time_column(fields, "time", longitudinal_path, time_unit)
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            pid = _pid(row["patient_id"] or "")
            if pid not in surv:
                raise DataError(f"{longitudinal_path}:{lineno}: patient {pid!r} "
                                "has no row in the survival file")
            t = _float(row[tcol], longitudinal_path, lineno, tcol) * tscale
            if (pid, t) in seen:
                raise DataError(f"{longitudinal_path}:{lineno}: duplicate time {t!r} "
                                f"for patient {pid!r}")
            seen.add((pid, t))
            y = _float(row["value"], longitudinal_path, lineno, "value")
            arm = (row.get("arm") or "").strip() or None
            rows[pid].append((t, y, arm, lineno))
    records = []
    for pid, info in surv.items():
        obs = sorted(rows.get(pid, []))
        times = [o[0] for o in obs]
        rec = HealthRecord(pid, times, [o[1] for o in obs], info["event"], info["covariates"],
                           _schedule(times, [o[2] for o in obs], info["arm"]))
        errors = validate(rec)
        if errors:
            raise DataError(f"patient {pid!r} (survival line {info['line']}): " + "; ".join(errors))
        records.append(rec)
    return Dataset(records)


def write_dataset(dataset, longitudinal_path, survival_path):
    """Write the two CSV files in years; floats use shortest round-trip text."""
    covs = sorted(set().union(*(r.covariates.keys() for r in dataset))) if len(dataset) else []
    with open(longitudinal_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["patient_id", "time", "value", "arm"])
        for r in dataset:
            for t, y in zip(r.appointments, r.outcomes):
                w.writerow([r.patient_id, _exact(t), _exact(y), r.arm_schedule(t)])
    with open(survival_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["patient_id", "event_time", "status", "arm"] + covs)
        for r in dataset:
            labels = r.arm_schedule.labels
            arm = labels[-1] if labels else NULL_ARM
            status = "censored" if r.is_censored else "dead"
            w.writerow([r.patient_id, _exact(r.exit_time), status, arm]
                       + [_exact(r.covariates[c]) if c in r.covariates else "" for c in covs])


def read_event_records(events_path, survival_path, time_unit="years") -> list[EventRecord]:
    """Recurrent-event records; the survival file must carry a ``window`` column."""
    surv = read_survival(survival_path, time_unit)
    f, reader = _reader(events_path)
    events = defaultdict(list)
    with f:
        if "patient_id" not in reader.fieldnames:
            raise DataError(f"{events_path}: missing column 'patient_id'")
        tcol, tscale = _time_column(reader.fieldnames, "event_time", events_path, time_unit)
        for lineno, row in enumerate(reader, start=2):
            pid = _pid(row["patient_id"] or "")
            if pid not in surv:
                raise DataError(f"{events_path}:{lineno}: patient {pid!r} "
                                "has no row in the survival file")
            events[pid].append(_float(row[tcol], events_path, lineno, tcol) * tscale)
    out = []
    for pid, info in surv.items():
        if info["window"] is None:
            raise DataError(f"{survival_path}:{info['line']}: missing observation window")
        rec = EventRecord(pid, info["window"], tuple(events.get(pid, ())), info["event"])
        errors = rec.validate()
        if errors:
            raise DataError(f"patient {pid!r}: " + "; ".join(errors))
        out.append(rec)
    return out


def write_event_records(records, events_path, survival_path):
    with open(events_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["patient_id", "event_time"])
        for r in records:
            for y in r.events:
                w.writerow([r.patient_id, _exact(y)])
    with open(survival_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["patient_id", "event_time", "status", "window"])
        for r in records:
            t = r.event.c if r.is_censored else r.event.T
            w.writerow([r.patient_id, _exact(t), "censored" if r.is_censored else "dead",
                        _exact(r.window)])


def write_columns(path, columns: dict, digits=12):
    """Write equal-length columns as CSV with fixed-precision floats."""
    names = list(columns)
    data = [np.atleast_1d(columns[n]) for n in names]
    n = len(data[0]) if data else 0
    if any(len(d) != n for d in data):
        raise ValueError("columns differ in length")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([fmt(d[i], digits) if not isinstance(d[i], str) else d[i] for d in data])


def write_rows(path, header, rows, digits=12):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v, digits) if not isinstance(v, str) else v for v in row])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
