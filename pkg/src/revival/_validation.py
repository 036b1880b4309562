"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError
from .records import Dataset, HealthRecord, validate


def check_survival_data(durations, observed=None):
    """Coerce durations and death indicators to 1-d arrays of equal length."""
    durations = np.asarray(durations, dtype=float).ravel()
    if observed is None:
        observed = np.ones(durations.shape, dtype=bool)
    observed = np.asarray(observed, dtype=bool).ravel()
    if durations.shape != observed.shape:
        raise DataError("durations and observed differ in length")
    if not np.all(np.isfinite(durations)):
        raise DataError("durations must be finite")
    if np.any(durations < 0):
        raise DataError("durations must be non-negative")
    return durations, observed


def check_dataset(dataset, *, uncensored=False, min_records=1) -> Dataset:
    """Return a validated Dataset, optionally dropping censored records."""
    if isinstance(dataset, HealthRecord):
        dataset = [dataset]
    if not isinstance(dataset, Dataset):
        dataset = Dataset(list(dataset))
    bad = dataset.validate()
    if bad:
        pid, errs = next(iter(bad.items()))
        raise DataError(f"record {pid!r} is invalid: {'; '.join(errs)}"
                        + (f" (and {len(bad) - 1} more)" if len(bad) > 1 else ""))
    if uncensored:
        dataset = dataset.uncensored()
    if len(dataset) < min_records:
        raise DataError(f"need at least {min_records} usable record(s), got {len(dataset)}")
    return dataset


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_grid(grid, lower=None) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if lower is not None and grid[0] <= lower:
        raise ValueError(f"grid must lie strictly above {lower}")
    return grid
