import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revival.exceptions import CensoredRecordError, DataError
from revival.records import (NULL_ARM, ArmSchedule, Censored, Dataset, Death, HealthRecord,
                             History, arm_at_revival, reverse, validate)

from conftest import make_record


def test_valid_record_passes():
    assert validate(make_record(1, (0, 1, 2), (1, 2, 3), T=5)) == []


def test_appointment_after_death_rejected():
    assert "appointment at or after death" in validate(make_record(1, (0, 3), (1, 2), T=2))


def test_tied_times_rejected():
    assert "times not strictly increasing" in validate(make_record(1, (0, 0), (1, 2), T=1))


def test_appointment_at_death_rejected():
    assert "appointment at or after death" in validate(make_record(1, (0, 2), (1, 2), T=2))


def test_censored_allows_appointment_at_censoring():
    assert validate(make_record(1, (0, 2), (1, 2), c=2)) == []


def test_reverse_definition():
    view = reverse(make_record(1, (0, 1, 3), (7.0, 8.0, 9.0), T=5))
    assert view.revival_times == (5.0, 4.0, 2.0)
    assert view.values == (7.0, 8.0, 9.0)
    assert reverse(make_record(1, (0,), (1.0,), T=10)).revival_times == (10.0,)


def test_reverse_refuses_censored():
    with pytest.raises(CensoredRecordError):
        reverse(make_record(1, (0, 1), (1, 2), c=3))


def test_reverse_refuses_invalid():
    with pytest.raises(DataError):
        reverse(make_record(1, (0, 3), (1, 2), T=2))


def test_arm_at_revival():
    rec = make_record(1, (0, 1), (1, 2), T=4, arm="prednisone")
    assert arm_at_revival(rec, 1) == "prednisone"
    assert arm_at_revival(rec, 4) == NULL_ARM
    assert arm_at_revival(rec, 5) == NULL_ARM


def test_arm_schedule_switch():
    sched = ArmSchedule(((0.0, "a"), (2.0, "b")))
    assert [sched(t) for t in (0.0, 1.0, 2.0, 2.5)] == [NULL_ARM, "a", "a", "b"]


def test_history_prefix():
    rec = make_record(1, (0, 1, 2), (1, 2, 3), T=5)
    h = rec.history(2)
    assert isinstance(h, History)
    assert h.appointments == (0.0, 1.0) and h.last_appointment == 1.0


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(DataError):
        Dataset([make_record(1, (0,), (1,), T=2), make_record(1, (0,), (1,), T=3)])


def test_dataset_split_and_survival_data():
    d = Dataset([make_record(1, (0,), (1,), T=2), make_record(2, (0,), (1,), c=3)])
    durations, observed = d.survival_data()
    assert durations.tolist() == [2.0, 3.0] and observed.tolist() == [True, False]
    assert len(d.uncensored()) == 1 and len(d.censored()) == 1


@st.composite
def valid_records(draw):
    n = draw(st.integers(1, 8))
    gaps = draw(st.lists(st.floats(1e-3, 5.0), min_size=n, max_size=n))
    times = np.concatenate([[0.0], np.cumsum(gaps[:-1])]) if n > 1 else np.array([0.0])
    T = float(times[-1] + draw(st.floats(1e-3, 10.0)))
    values = draw(st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n))
    return make_record(0, times, values, T=T, arm=draw(st.sampled_from([None, "a"])))


@given(valid_records())
@settings(max_examples=200, deadline=None)
def test_reverse_roundtrip_and_positivity(rec):
    view = reverse(rec)
    back = view.invert()
    assert back == rec
    assert back.appointments == rec.appointments and back.outcomes == rec.outcomes
    assert all(s > 0 for s in view.revival_times)


@given(valid_records(), st.floats(0, 20))
@settings(max_examples=200, deadline=None)
def test_null_arm_iff_before_randomization(rec, s):
    if rec.arm_schedule.changes:
        assert (arm_at_revival(rec, s) == NULL_ARM) == (rec.T - s <= 0)
