"""Survival-process records, time reversal and validation.

A patient record holds the forward-time health sequence ``(t_j, y_j)`` and
the terminal event.  Reversing it about the death time ``T`` gives the
revival sequence ``(s_j, z_j) = (T - t_j, y_j)``.  All times are in years.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import CensoredRecordError, DataError

NULL_ARM = "null"
DAYS_PER_YEAR = 365.25


@dataclass(frozen=True)
class Death:
    T: float


@dataclass(frozen=True)
class Censored:
    c: float


@dataclass(frozen=True)
class ArmSchedule:
    """Piecewise-constant treatment arm in forward time.

    ``changes`` is a sequence of ``(time, label)`` pairs; the arm in effect at
    ``t`` is the label of the last change with ``time < t``.  For ``t <= 0``
    the arm is always :data:`NULL_ARM`, whatever the changes say.
    """

    changes: tuple = ()

    def __post_init__(self):
        changes = tuple(sorted((float(t), str(a)) for t, a in self.changes))
        object.__setattr__(self, "changes", changes)

    @classmethod
    def constant(cls, label: str) -> "ArmSchedule":
        """Randomized to ``label`` at recruitment, null before."""
        if label is None or label == NULL_ARM:
            return cls(())
        return cls(((0.0, str(label)),))

    def __call__(self, t: float) -> str:
        if t <= 0:
            return NULL_ARM
        arm = NULL_ARM
        for start, label in self.changes:
            if start < t:
                arm = label
            else:
                break
        return arm

    def at(self, times) -> np.ndarray:
        return np.array([self(float(t)) for t in np.atleast_1d(times)], dtype=object)

    @property
    def labels(self) -> list:
        return [label for _, label in self.changes]


@dataclass(frozen=True)
class History:
    """A partial health history used for prediction: no terminal event."""

    appointments: tuple
    outcomes: tuple
    arm_schedule: ArmSchedule = field(default_factory=ArmSchedule)
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "appointments", tuple(float(t) for t in self.appointments))
        object.__setattr__(self, "outcomes", tuple(float(y) for y in self.outcomes))
        if len(self.appointments) != len(self.outcomes):
            raise DataError("appointments and outcomes differ in length")
        if np.any(np.diff(self.appointments) <= 0):
            raise DataError("times not strictly increasing")

    @property
    def last_appointment(self) -> float:
        return self.appointments[-1] if self.appointments else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.appointments, dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.outcomes, dtype=float)


@dataclass(frozen=True)
class HealthRecord:
    """One patient: covariates, arm schedule, appointments, outcomes, event.

    Construction does not enforce the invariants; call :func:`validate`.
    """

    patient_id: object
    appointments: tuple
    outcomes: tuple
    event: Death | Censored
    covariates: Mapping[str, float] = field(default_factory=dict)
    arm_schedule: ArmSchedule = field(default_factory=ArmSchedule)

    def __post_init__(self):
        object.__setattr__(self, "appointments", tuple(float(t) for t in self.appointments))
        object.__setattr__(self, "outcomes", tuple(float(y) for y in self.outcomes))
        object.__setattr__(self, "covariates", dict(self.covariates))

    @property
    def is_censored(self) -> bool:
        return isinstance(self.event, Censored)

    @property
    def T(self) -> float:
        if self.is_censored:
            raise CensoredRecordError(f"record {self.patient_id!r} is censored")
        return self.event.T

    @property
    def exit_time(self) -> float:
        """Death or censoring time."""
        return self.event.c if self.is_censored else self.event.T

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.appointments, dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.outcomes, dtype=float)

    def history(self, k: int | None = None) -> History:
        """The first ``k`` appointments (all of them by default) as a History."""
        k = len(self.appointments) if k is None else k
        return History(self.appointments[:k], self.outcomes[:k], self.arm_schedule, self.covariates)


@dataclass(frozen=True)
class RevivalView:
    """Reverse-time view of an uncensored record.

    ``revival_times`` decrease with the appointment index.  ``source`` keeps
    the forward record so :meth:`invert` is exact in floating point.
    """

    revival_times: tuple
    values: tuple
    source_T: float
    source: HealthRecord

    def invert(self) -> HealthRecord:
        return self.source

    def forward_times(self) -> np.ndarray:
        """``T - s`` recomputed arithmetically (may differ from the source by rounding)."""
        return self.source_T - np.asarray(self.revival_times)


def validate(record: HealthRecord) -> list[str]:
    """Return every invariant violation of ``record``; empty when valid."""
    errors = []
    t = record.times
    if len(record.outcomes) != len(record.appointments):
        errors.append("outcomes and appointments differ in length")
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(record.values)):
        errors.append("non-finite time or outcome")
    if t.size and t[0] < 0:
        errors.append("first appointment before recruitment")
    if np.any(np.diff(t) <= 0):
        errors.append("times not strictly increasing")
    event = record.event
    if isinstance(event, Death):
        if not np.isfinite(event.T):
            errors.append("death time must be finite")
        if not event.T > 0:
            errors.append("death time must be positive")
        if t.size and t.max() >= event.T:
            errors.append("appointment at or after death")
    elif isinstance(event, Censored):
        if t.size and t.max() > event.c:
            errors.append("appointment after censoring")
    else:
        errors.append("event must be Death or Censored")
    for start, _ in record.arm_schedule.changes:
        if start < 0:
            errors.append("arm schedule change before recruitment")
            break
    return errors


def reverse(record: HealthRecord) -> RevivalView:
    """Time-reverse an uncensored record about its death time."""
    if record.is_censored:
        raise CensoredRecordError("cannot align censored record at terminus")
    errors = validate(record)
    if errors:
        raise DataError(f"record {record.patient_id!r}: " + "; ".join(errors))
    T = record.event.T
    s = tuple(T - t for t in record.appointments)
    return RevivalView(s, record.outcomes, T, record)


def arm_at_revival(record: HealthRecord, s: float) -> str:
    """Treatment arm in effect at revival time ``s``; null when ``s >= T``."""
    T = record.T
    if s >= T:
        return NULL_ARM
    return record.arm_schedule(T - s)


@dataclass
class Dataset:
    """A collection of records with unique patient ids; times in years."""

    records: list
    time_unit: str = "years"

    def __post_init__(self):
        self.records = list(self.records)
        ids = [r.patient_id for r in self.records]
        if len(set(ids)) != len(ids):
            seen, dup = set(), []
            for i in ids:
                if i in seen:
                    dup.append(i)
                seen.add(i)
            raise DataError(f"duplicate patient ids: {dup[:5]}")
        if self.time_unit != "years":
            raise DataError("time_unit is fixed to years")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def by_id(self, patient_id) -> HealthRecord:
        for r in self.records:
            if r.patient_id == patient_id:
                return r
        raise KeyError(patient_id)

    def uncensored(self) -> "Dataset":
        return Dataset([r for r in self.records if not r.is_censored])

    def censored(self) -> "Dataset":
        return Dataset([r for r in self.records if r.is_censored])

    def filter(self, predicate) -> "Dataset":
        return Dataset([r for r in self.records if predicate(r)])

    def validate(self) -> dict:
        """Map patient id to its violation list, for invalid records only."""
        out = {}
        for r in self.records:
            errs = validate(r)
            if errs:
                out[r.patient_id] = errs
        return out

    def survival_data(self) -> tuple[np.ndarray, np.ndarray]:
        """Exit times and death indicators."""
        durations = np.array([r.exit_time for r in self.records], dtype=float)
        observed = np.array([not r.is_censored for r in self.records], dtype=bool)
        return durations, observed

    @property
    def n_observations(self) -> int:
        return sum(len(r.appointments) for r in self.records)


def as_dataset(records: Dataset | Sequence[HealthRecord]) -> Dataset:
    return records if isinstance(records, Dataset) else Dataset(list(records))
