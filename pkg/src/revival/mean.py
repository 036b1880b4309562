"""Mean-model terms for the revival process.

A :class:`MeanModelSpec` is an ordered tuple of terms; each term maps a
table of observation rows (revival time, forward time, survival time, arm,
covariates) to one or more design columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .records import NULL_ARM, HealthRecord, History


@dataclass(frozen=True)
class Rows:
    """Stacked observation rows, one entry per appointment."""

    s: np.ndarray
    t: np.ndarray
    T: np.ndarray
    arms: np.ndarray
    patient: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.s)

    @classmethod
    def from_record(cls, record: HealthRecord | History, T: float, patient=0) -> "Rows":
        t = np.asarray(record.appointments, dtype=float)
        n = t.size
        cov = {k: np.full(n, float(v)) for k, v in record.covariates.items()}
        return cls(s=T - t, t=t, T=np.full(n, float(T)),
                   arms=record.arm_schedule.at(t) if n else np.empty(0, dtype=object),
                   patient=np.full(n, patient, dtype=object), covariates=cov)

    @classmethod
    def stack(cls, parts) -> "Rows":
        parts = list(parts)
        names = set().union(*(p.covariates.keys() for p in parts)) if parts else set()
        cov = {}
        for name in names:
            cov[name] = np.concatenate([p.covariates.get(name, np.full(len(p), np.nan))
                                        for p in parts])
        cat = lambda attr, dtype=float: (np.concatenate([getattr(p, attr) for p in parts])
                                         if parts else np.empty(0, dtype=dtype))
        return cls(s=cat("s"), t=cat("t"), T=cat("T"), arms=cat("arms", object),
                   patient=cat("patient", object), covariates=cov)


class Term:
    name = "term"

    def columns(self, rows: Rows) -> np.ndarray:
        raise NotImplementedError

    def column_names(self) -> list[str]:
        return [self.name]

    def resolve(self, rows: Rows) -> "Term":
        return self

    def to_config(self):
        return self.name


@dataclass(frozen=True)
class Intercept(Term):
    name = "intercept"

    def columns(self, rows):
        return np.ones((len(rows), 1))


@dataclass(frozen=True)
class RevivalTime(Term):
    """Linear trend in revival time ``s``."""

    name = "revival_time"

    def columns(self, rows):
        return rows.s[:, None].astype(float)


@dataclass(frozen=True)
class SurvivalTime(Term):
    """Coefficient on the patient's survival time ``T``."""

    name = "survival_time"

    def columns(self, rows):
        return rows.T[:, None].astype(float)


@dataclass(frozen=True)
class Treatment(Term):
    """Treatment factor evaluated at the arm in effect at each appointment.

    One indicator column per non-reference level.  ``levels`` is filled in
    from the data when left empty.
    """

    levels: tuple = ()
    reference: str = NULL_ARM
    name = "treatment"

    def resolve(self, rows):
        if self.levels:
            return self
        found = sorted(set(str(a) for a in rows.arms) - {self.reference})
        return replace(self, levels=tuple(found))

    def columns(self, rows):
        arms = np.asarray(rows.arms, dtype=object)
        known = set(self.levels) | {self.reference}
        unknown = set(str(a) for a in arms) - known
        if unknown:
            raise ValueError(f"treatment levels {sorted(unknown)} not in the fitted model")
        return np.column_stack([(arms == lv).astype(float) for lv in self.levels]) \
            if self.levels else np.empty((len(rows), 0))

    def column_names(self):
        return [f"treatment[{lv}]" for lv in self.levels]

    def to_config(self):
        return {"treatment": {"levels": list(self.levels), "reference": self.reference}}


@dataclass(frozen=True)
class Covariate(Term):
    covariate: str = ""

    @property
    def name(self):
        return f"covariate[{self.covariate}]"

    def columns(self, rows):
        if self.covariate not in rows.covariates:
            raise ValueError(f"covariate {self.covariate!r} missing from the data")
        col = np.asarray(rows.covariates[self.covariate], dtype=float)
        if np.any(np.isnan(col)):
            raise ValueError(f"covariate {self.covariate!r} has missing values")
        return col[:, None]

    def to_config(self):
        return {"covariate": self.covariate}


@dataclass(frozen=True)
class InverseLinear(Term):
    """``s / (gamma + s)``: rises from 0 to 1, half-way at ``s = gamma``."""

    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("semi-revival time gamma must be positive")

    @property
    def name(self):
        return f"inverse_linear[{self.gamma:g}]"

    def columns(self, rows):
        s = rows.s.astype(float)
        return (s / (self.gamma + s))[:, None]

    def to_config(self):
        return {"inverse_linear": {"gamma": self.gamma}}


@dataclass(frozen=True)
class TimeAccelerated(Term):
    """``sT / (gamma + sT)``: the semi-revival time shrinks as ``1/T``."""

    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def name(self):
        return f"time_accelerated[{self.gamma:g}]"

    def columns(self, rows):
        u = rows.s.astype(float) * rows.T.astype(float)
        return (u / (self.gamma + u))[:, None]

    def to_config(self):
        return {"time_accelerated": {"gamma": self.gamma}}


@dataclass(frozen=True)
class Custom(Term):
    """User column ``func(rows) -> array`` of shape ``(n,)`` or ``(n, m)``."""

    label: str = "custom"
    func: Callable = None
    width: int = 1

    @property
    def name(self):
        return self.label

    def columns(self, rows):
        out = np.asarray(self.func(rows), dtype=float)
        return out.reshape(len(rows), -1)

    def column_names(self):
        if self.width == 1:
            return [self.label]
        return [f"{self.label}[{i}]" for i in range(self.width)]

    def to_config(self):
        raise ValueError("custom mean terms cannot be serialized")


@dataclass(frozen=True)
class MeanModelSpec:
    terms: tuple = (Intercept(),)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def resolve(self, rows: Rows) -> "MeanModelSpec":
        return MeanModelSpec(tuple(term.resolve(rows) for term in self.terms))

    def design(self, rows: Rows) -> np.ndarray:
        if not self.terms:
            return np.empty((len(rows), 0))
        return np.column_stack([term.columns(rows) for term in self.terms]) \
            if len(rows) else np.empty((0, len(self.column_names())))

    def column_names(self) -> list[str]:
        return [name for term in self.terms for name in term.column_names()]

    def has_term(self, cls) -> bool:
        return any(isinstance(t, cls) for t in self.terms)

    def __add__(self, other) -> "MeanModelSpec":
        extra = other.terms if isinstance(other, MeanModelSpec) else tuple(other)
        return MeanModelSpec(self.terms + extra)

    def to_config(self) -> list:
        return [term.to_config() for term in self.terms]


_SIMPLE = {"intercept": Intercept, "revival_time": RevivalTime,
           "survival_time": SurvivalTime, "treatment": Treatment}


def term_from_config(item) -> Term:
    if isinstance(item, Term):
        return item
    if isinstance(item, str):
        if item not in _SIMPLE:
            raise ValueError(f"unknown mean term {item!r}")
        return _SIMPLE[item]()
    if isinstance(item, dict) and len(item) == 1:
        (key, value), = item.items()
        if key == "covariate":
            return Covariate(str(value))
        if key == "inverse_linear":
            return InverseLinear(float(value["gamma"] if isinstance(value, dict) else value))
        if key == "time_accelerated":
            return TimeAccelerated(float(value["gamma"] if isinstance(value, dict) else value))
        if key == "treatment":
            value = value or {}
            return Treatment(tuple(value.get("levels", ())), value.get("reference", NULL_ARM))
    raise ValueError(f"cannot parse mean term {item!r}")


def mean_spec_from_config(items) -> MeanModelSpec:
    return MeanModelSpec(tuple(term_from_config(i) for i in items))


@dataclass(frozen=True)
class MeanFunction:
    """A mean model with fixed coefficients."""

    spec: MeanModelSpec
    coef: tuple

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in np.ravel(self.coef)))
        if len(self.coef) != len(self.spec.column_names()):
            raise ValueError("coefficient count does not match the mean design")

    def __call__(self, rows: Rows) -> np.ndarray:
        return self.spec.design(rows) @ np.asarray(self.coef)
