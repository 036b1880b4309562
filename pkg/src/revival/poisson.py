"""Poisson revival model for recurrent health events.

Events observed on the window ``[0, t_k]`` are a Poisson process in revival
time with intensity ``lambda(s)``.  Given death at ``t`` the density of the
observed configuration is

    g(y; t - t) = exp(-Lambda(t - t_k, t)) prod_{y in y} lambda(t - y)

where ``Lambda(u, v)`` integrates the intensity over ``(u, v)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .exceptions import ConvergenceWarning, DataError
from .predict import EPSILON, PredictiveCurve, _check_parametric, normalize_curve, tail_moments
from .records import Censored, Death


@dataclass(frozen=True)
class EventRecord:
    """Event times observed on ``[0, window]`` for one patient."""

    patient_id: object
    window: float
    events: tuple
    event: Death | Censored

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(float(y) for y in self.events)))
        object.__setattr__(self, "window", float(self.window))

    @property
    def is_censored(self):
        return isinstance(self.event, Censored)

    @property
    def T(self):
        if self.is_censored:
            raise DataError(f"record {self.patient_id!r} is censored")
        return self.event.T

    @property
    def times(self):
        return np.asarray(self.events, dtype=float)

    def validate(self) -> list[str]:
        errors = []
        if self.window < 0:
            errors.append("negative observation window")
        y = self.times
        if y.size and (y.min() <= 0 or y.max() >= self.window):
            errors.append("event outside the observation window")
        if isinstance(self.event, Death):
            if not self.event.T > self.window:
                errors.append("observation window extends past death")
        elif isinstance(self.event, Censored):
            if self.event.c < self.window:
                errors.append("observation window extends past censoring")
        return errors


class IntensityModel:
    """Base class; subclasses give ``rate`` and the antiderivative ``_primitive``."""

    family = "base"

    def rate(self, s):
        raise NotImplementedError

    def _primitive(self, s):
        raise NotImplementedError

    def cumulative(self, u, v):
        """``Lambda(u, v)``: integral of the rate over ``(u, v)``."""
        return self._primitive(np.asarray(v, dtype=float)) - self._primitive(np.asarray(u, dtype=float))

    def upper_bound(self, lo, hi) -> float:
        raise NotImplementedError

    def scaled(self, c) -> "IntensityModel":
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantIntensity(IntensityModel):
    a: float = 1.0
    family = "constant"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("constant intensity must be positive")

    def rate(self, s):
        return np.full(np.shape(s), self.a)

    def _primitive(self, s):
        return self.a * s

    def upper_bound(self, lo, hi):
        return self.a

    def scaled(self, c):
        return ConstantIntensity(self.a * c)

    def to_dict(self):
        return {"family": self.family, "a": self.a}


@dataclass(frozen=True)
class RationalIntensity(IntensityModel):
    """``lambda(s) = a + b / (1 + s^2)``; ``a = b = 1`` gives ``(2 + s^2)/(1 + s^2)``."""

    a: float = 1.0
    b: float = 1.0
    family = "rational"

    def __post_init__(self):
        if self.a < 0 or not self.a + self.b > 0:
            raise ValueError("rational intensity needs a >= 0 and a + b > 0")

    def rate(self, s):
        s = np.asarray(s, dtype=float)
        return self.a + self.b / (1.0 + s * s)

    def _primitive(self, s):
        return self.a * s + self.b * np.arctan(s)

    def upper_bound(self, lo, hi):
        lo, hi = max(float(lo), 0.0), max(float(hi), 0.0)
        return float(max(self.rate(lo), self.rate(hi)))

    def scaled(self, c):
        return RationalIntensity(self.a * c, self.b * c)

    def to_dict(self):
        return {"family": self.family, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class GridIntensity(IntensityModel):
    """Piecewise-constant rate: ``values[j]`` on ``[edges[j], edges[j+1])``.

    The last value continues beyond the final edge; ``edges[0]`` must be 0.
    """

    edges: tuple = (0.0,)
    values: tuple = (1.0,)
    family = "grid"

    def __post_init__(self):
        e = tuple(float(x) for x in self.edges)
        v = tuple(float(x) for x in self.values)
        if len(e) != len(v) or e[0] != 0.0 or np.any(np.diff(e) <= 0):
            raise ValueError("grid intensity needs increasing edges starting at 0, one value each")
        if min(v) <= 0:
            raise ValueError("grid intensity values must be positive")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(e) * np.asarray(v[:-1]))])
        object.__setattr__(self, "_cum", cum)

    def _index(self, s):
        return np.clip(np.searchsorted(self.edges, s, side="right") - 1, 0, len(self.edges) - 1)

    def rate(self, s):
        return np.asarray(self.values)[self._index(np.asarray(s, dtype=float))]

    def _primitive(self, s):
        s = np.asarray(s, dtype=float)
        j = self._index(s)
        e, v = np.asarray(self.edges), np.asarray(self.values)
        return self._cum[j] + v[j] * (s - e[j])

    def upper_bound(self, lo, hi):
        j0, j1 = self._index(np.array([lo, hi]))
        return float(max(self.values[j0:j1 + 1]))

    def scaled(self, c):
        return GridIntensity(self.edges, tuple(c * v for v in self.values))

    def to_dict(self):
        return {"family": self.family, "edges": list(self.edges), "values": list(self.values)}


def intensity_from_dict(spec) -> IntensityModel:
    spec = dict(spec)
    family = spec.pop("family")
    if family == "constant":
        return ConstantIntensity(float(spec["a"]))
    if family == "rational":
        return RationalIntensity(float(spec.get("a", 1.0)), float(spec.get("b", 1.0)))
    if family == "grid":
        return GridIntensity(tuple(spec["edges"]), tuple(spec["values"]))
    raise ValueError(f"unknown intensity family {family!r}")


def log_ratio_events(record: EventRecord, intensity: IntensityModel, t):
    """Log density of the observed events when death occurs at ``t`` (vectorized)."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < record.window):
        raise ValueError("death time must not precede the end of the observation window")
    y = record.times
    out = -intensity.cumulative(t - record.window, t)
    if y.size:
        out = out + np.sum(np.log(intensity.rate(t[:, None] - y[None, :])), axis=1)
    return float(out[0]) if scalar else out


def predictive_hazard_ratio(record: EventRecord, intensity: IntensityModel, law, grid=None,
                            n_grid=2000, upper_q=0.9999, normalize_at=20.0) -> PredictiveCurve:
    """Predictive-to-marginal hazard ratio given the observed events.

    ``log_ratio`` is shifted to vanish at ``normalize_at`` (when it lies
    after the window); the shift does not affect density or hazard ratio.
    """
    _check_parametric(law)
    last = record.window
    if grid is None:
        upper = float(law.ppf(upper_q))
        if upper <= last + EPSILON:
            upper = float(law.conditional_ppf(upper_q, last))
        grid = last + np.geomspace(EPSILON, upper - last, n_grid)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2 or np.any(np.diff(grid) <= 0) or grid[0] <= last:
        raise ValueError("grid must be increasing and lie after the observation window")
    log_ratio = log_ratio_events(record, intensity, grid)
    if normalize_at is not None and normalize_at > last:
        log_ratio = log_ratio - log_ratio_events(record, intensity, float(normalize_at))
    density, survival, hr = normalize_curve(grid, log_ratio, law, start=last)
    return PredictiveCurve(grid, log_ratio, density, hr, survival, "poisson", last,
                           tail_moments(law, grid[-1]))


def event_loglik(records, intensity: IntensityModel) -> float:
    """Sum over complete records of ``-Lambda(T - t_k, T) + sum log lambda(T - y)``."""
    total = 0.0
    for r in records:
        T = r.T
        total -= float(intensity.cumulative(T - r.window, T))
        if r.events:
            total += float(np.sum(np.log(intensity.rate(T - r.times))))
    return total


def _exposure(records):
    return [(r.T - r.window, r.T, r.T - r.times) for r in records if not r.is_censored]


def fit_intensity(records, family="constant", edges=None, tol=1e-10, max_iter=4000,
                  start=None) -> IntensityModel:
    """Maximum-likelihood intensity from complete event records.

    ``constant`` and ``grid`` have closed forms (events over exposure, per
    bin for the grid).  ``rational`` is fitted by Nelder-Mead on
    ``(log lambda(inf), log lambda(0))`` so that ``a >= 0``, ``a + b > 0``.
    """
    complete = [r for r in records if not r.is_censored]
    if not complete:
        raise DataError("intensity fitting needs at least one complete record")
    expo = _exposure(complete)
    n_events = sum(len(r.events) for r in complete)
    if n_events == 0:
        raise DataError("no events observed: the likelihood increases without bound "
                        "as the intensity goes to zero")
    if family == "constant":
        return ConstantIntensity(n_events / sum(hi - lo for lo, hi, _ in expo))
    if family == "grid":
        if edges is None:
            raise ValueError("grid intensity needs bin edges")
        edges = np.asarray(edges, dtype=float)
        counts = np.zeros(edges.size)
        exposure = np.zeros(edges.size)
        bounds = np.append(edges, np.inf)
        for lo, hi, s in expo:
            counts += np.bincount(np.clip(np.searchsorted(edges, s, side="right") - 1, 0, None),
                                  minlength=edges.size)[:edges.size]
            exposure += np.clip(np.minimum(hi, bounds[1:]) - np.maximum(lo, bounds[:-1]), 0, None)
        if np.any(counts == 0):
            raise DataError("every grid bin needs at least one event")
        return GridIntensity(tuple(edges), tuple(counts / exposure))
    if family != "rational":
        raise ValueError(f"unknown intensity family {family!r}")
    lo = np.array([e[0] for e in expo])
    hi = np.array([e[1] for e in expo])
    s_all = np.concatenate([e[2] for e in expo])

    def nll(u):
        a, top = np.exp(u)
        b = top - a
        lam = a + b / (1.0 + s_all ** 2)
        Lam = a * (hi - lo) + b * (np.arctan(hi) - np.arctan(lo))
        return float(np.sum(Lam) - np.sum(np.log(lam)))

    rate0 = n_events / float(np.sum(hi - lo))
    u0 = np.log(start) if start is not None else np.log([rate0, rate0 * 1.5])
    res = optimize.minimize(nll, u0, method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": tol, "maxiter": max_iter})
    for _ in range(2):  # restart from the optimum to guard against simplex collapse
        res = optimize.minimize(nll, res.x, method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": tol, "maxiter": max_iter})
    if not res.success:
        warnings.warn("rational intensity fit stopped on its iteration budget",
                      ConvergenceWarning, stacklevel=2)
    a, top = np.exp(res.x)
    return RationalIntensity(float(a), float(top - a))
