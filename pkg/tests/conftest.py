import sys

import numpy as np
import pytest

from revival.records import ArmSchedule, Censored, Dataset, Death, HealthRecord


def make_record(pid, times, values, T=None, c=None, arm=None, covariates=None):
    event = Death(T) if c is None else Censored(c)
    return HealthRecord(pid, tuple(times), tuple(values), event, covariates or {},
                        ArmSchedule.constant(arm) if arm else ArmSchedule())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    recs = [make_record(1, (0, 1, 2), (5.0, 4.0, 3.5), T=3.5),
            make_record(2, (0, 0.5), (6.0, 5.5), T=1.2),
            make_record(3, (0, 1, 2, 3), (4.0, 4.2, 3.9, 3.0), T=4.1),
            make_record(4, (0,), (5.1,), T=0.7)]
    return Dataset(recs)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
