"""Predictive survival given a partial health history.

The predictive density of the death time is the marginal density times the
density ratio ``g(y; t - t)``: the Gaussian density of the observed outcomes
when the death time is ``t``, so revival times are ``t - t_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import NumericalError
from .process import GaussianRevivalProcess, mvn_logpdf
from .records import DAYS_PER_YEAR, HealthRecord, History

EPSILON = 1.0 / DAYS_PER_YEAR


def _as_history(obj) -> History:
    if isinstance(obj, History):
        return obj
    if isinstance(obj, HealthRecord):
        return obj.history()
    raise TypeError("expected a History or HealthRecord")


def _moments(model, history, t, mode):
    if isinstance(model, GaussianRevivalProcess):
        if mode == "conditional":
            raise ValueError("a known-parameter process has no training data to condition on")
        return model.moments(history, t)
    return model.predictive_moments(history, t, mode=mode)


def log_density_ratio(history, model, t, mode=None):
    """Log Gaussian density of the observed outcomes when death occurs at ``t``.

    ``model`` is a :class:`GaussianRevivalProcess` or a fitted ``RevivalGP``.
    Points with ``t`` at or before the last appointment get ``-inf``.
    """
    history = _as_history(history)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.full(t.shape, -np.inf)
    if not history.appointments:
        out[t > 0] = 0.0
        return float(out[0]) if scalar else out
    ok = t > history.last_appointment
    if np.any(ok):
        mus, covs = _moments(model, history, t[ok], mode)
        try:
            out[ok] = mvn_logpdf(history.values, mus, covs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"predictive covariance is not positive definite: {exc}") from None
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class LinearRatio:
    """Closed-form density ratio for a mean linear in revival time.

    With ``mu(s) = alpha + beta s`` and a covariance free of ``t`` the ratio
    is the normal density at ``beta t`` with mean ``ybar - alpha + beta tbar``
    and variance ``1 / (1' S^-1 1)``; ``ybar`` and ``tbar`` are the
    ``S^-1``-weighted averages.  ``offset`` restores the ``t``-free factor.
    """

    alpha: float
    beta: float
    ybar: float
    tbar: float
    variance: float
    offset: float

    def log_ratio(self, t, full=False):
        t = np.asarray(t, dtype=float)
        centre = self.ybar - self.alpha + self.beta * self.tbar
        d = self.beta * t - centre
        out = -0.5 * (np.log(2 * np.pi * self.variance) + d * d / self.variance)
        return out + self.offset if full else out

    def __call__(self, t):
        return np.exp(self.log_ratio(t))


def closed_form_linear_ratio(history, alpha, beta, Sigma) -> LinearRatio:
    history = _as_history(history)
    y, tt = history.values, history.times
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if S.shape != (y.size, y.size):
        raise ValueError("Sigma must be k x k for a history of length k")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError("Sigma is not positive definite") from None
    one = np.ones_like(y)
    solve = lambda v: np.linalg.solve(L.T, np.linalg.solve(L, v))
    w1 = solve(one)
    prec = float(one @ w1)
    ybar = float(y @ w1) / prec
    tbar = float(tt @ w1) / prec
    # t-free part: full log density minus the weighted-average factor
    w = y - alpha + beta * tt
    wbar = ybar - alpha + beta * tbar
    quad = float(w @ solve(w)) - prec * wbar ** 2
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    offset = -0.5 * (quad + logdet + y.size * np.log(2 * np.pi) - np.log(2 * np.pi / prec))
    return LinearRatio(float(alpha), float(beta), ybar, tbar, 1.0 / prec, float(offset))


# ---------------------------------------------------------------------------
# predictive curves
# ---------------------------------------------------------------------------

@dataclass
class PredictiveCurve:
    grid: np.ndarray
    log_ratio: np.ndarray
    density: np.ndarray
    hazard_ratio: np.ndarray
    survival: np.ndarray
    mode: str | None = None
    start: float | None = None
    tail_moments: tuple | None = None

    def _moment(self, k):
        """``E[T^k]``: grid trapezoid, a rectangle before the grid, and the tail
        beyond it with the shape of the marginal law."""
        g, d = self.grid, self.density
        out = np.trapezoid(g ** k * d, g)
        if self.start is not None:
            out += d[0] * (g[0] - self.start) * (0.5 * (g[0] + self.start)) ** k
        if self.tail_moments is not None:
            out += self.survival[-1] * self.tail_moments[k - 1]
        return float(out)

    def mean(self) -> float:
        return self._moment(1)

    def sd(self) -> float:
        m = self.mean()
        return float(np.sqrt(max(self._moment(2) - m * m, 0.0)))

    def total_mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def modification_factor(self) -> np.ndarray:
        """Density ratio relative to its value at the first grid point."""
        return np.exp(self.log_ratio - self.log_ratio[0])

    def to_columns(self) -> dict:
        return {"t": self.grid, "log_ratio": self.log_ratio, "density": self.density,
                "hazard_ratio": self.hazard_ratio}


def _check_parametric(law):
    if not getattr(law, "parametric", False):
        raise ValueError("prediction needs a parametric survival law with a density; "
                         "Kaplan-Meier is for reporting only")


def tail_moments(law, end) -> tuple:
    """``E[T | T > end]`` and ``E[T^2 | T > end]`` under ``law``."""
    if getattr(law, "family", None) == "exponential":
        m1 = end + law.mean_
        return (m1, m1 * m1 + law.mean_ ** 2)
    sf = float(law.sf(end))
    if not sf > 0:
        return (end, end * end)
    m1 = integrate.quad(lambda t: t * law.pdf(t), end, np.inf, limit=200)[0] / sf
    m2 = integrate.quad(lambda t: t * t * law.pdf(t), end, np.inf, limit=200)[0] / sf
    return (m1, m2)


def default_grid(law, last, n=2000, upper_q=0.9999, eps=EPSILON) -> np.ndarray:
    """Geometric spacing of ``t - last`` from ``eps`` to the upper quantile."""
    upper = float(law.ppf(upper_q))
    if upper <= last + eps:
        upper = float(law.conditional_ppf(upper_q, last))
    return last + np.geomspace(eps, upper - last, n)


def normalize_curve(grid, log_ratio, law, log_weight=None, start=None):
    """Normalize ``f(t) g(t)`` on the grid; return density, survival and hazard ratio.

    Product integration: on each grid interval the ratio ``g`` is replaced by
    the average of its end values and ``f`` is integrated exactly through
    the survival function, so a constant ratio is reproduced without error.
    The mass beyond the grid is ``g(end) (1 - F(end))`` and, when ``start``
    is given, the mass on ``(start, grid[0])`` is ``g(grid[0])`` times its
    marginal probability.
    """
    log_g = np.asarray(log_ratio, dtype=float)
    if log_weight is not None:
        log_g = log_g + np.asarray(log_weight(grid), dtype=float)
    logpdf = law.logpdf(grid)
    finite = np.isfinite(log_g) & np.isfinite(logpdf)
    if not np.any(finite):
        raise NumericalError("predictive density vanishes on the whole grid")
    w = np.exp(log_g - np.max(log_g[finite]))
    logsf = law.logsf(grid)
    origin = float(law.logsf(start)) if start is not None else float(logsf[0])
    # probability of each interval relative to survival at the origin
    with np.errstate(divide="ignore", invalid="ignore"):
        dS = np.exp(logsf[:-1] - origin) * -np.expm1(logsf[1:] - logsf[:-1])
    dS = np.nan_to_num(dS, nan=0.0)
    steps = 0.5 * (w[1:] + w[:-1]) * dS
    tail = w[-1] * np.exp(logsf[-1] - origin)
    beyond = np.concatenate([np.cumsum(steps[::-1])[::-1], [0.0]]) + tail
    head = w[0] * -np.expm1(logsf[0] - origin) if start is not None else 0.0
    Z = beyond[0] + head
    if not Z > 0:
        raise NumericalError("predictive density has no mass on the grid")
    density = w * np.exp(logpdf - origin) / Z
    survival = beyond / Z
    with np.errstate(divide="ignore", invalid="ignore"):
        hazard = np.where(survival > 0, density / survival, np.nan)
        hr = hazard / law.hazard(grid)
    return density, survival, hr


def predictive_survival(history, law, model=None, grid=None, n_grid=2000, upper_q=0.9999,
                        eps=EPSILON, mode=None, log_weight=None) -> PredictiveCurve:
    """Predictive density of the death time given a partial history.

    Parameters
    ----------
    history : History or HealthRecord
    law : SurvivalLaw
        Parametric marginal law.
    model : GaussianRevivalProcess or fitted RevivalGP, optional
        Omitted or with an empty history, the ratio is identically one.
    grid : array, optional
        Increasing times after the last appointment.
    log_weight : callable, optional
        Log-weight of the appointment schedule as a function of ``t``;
        the default treats the schedule as uninformative.
    """
    _check_parametric(law)
    history = _as_history(history)
    last = history.last_appointment if history.appointments else 0.0
    grid = default_grid(law, last, n_grid, upper_q, eps) if grid is None else \
        np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ValueError("prediction grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if history.appointments and grid[0] <= last:
        raise ValueError("grid must lie after the last appointment")
    if (model is None or not history.appointments) and log_weight is None:
        # ratio identically one: the truncated marginal, in closed form
        log_ratio = np.zeros_like(grid)
        logsf0 = float(law.logsf(last))
        density = np.exp(law.logpdf(grid) - logsf0)
        survival = np.exp(law.logsf(grid) - logsf0)
        return PredictiveCurve(grid, log_ratio, density, np.ones_like(grid), survival, mode,
                               last, tail_moments(law, grid[-1]))
    if model is None or not history.appointments:
        log_ratio = np.zeros_like(grid)
    else:
        log_ratio = log_density_ratio(history, model, grid, mode=mode)
    density, survival, hr = normalize_curve(grid, log_ratio, law, log_weight, start=last)
    return PredictiveCurve(grid, log_ratio, density, hr, survival, mode, last,
                           tail_moments(law, grid[-1]))


# ---------------------------------------------------------------------------
# censored records
# ---------------------------------------------------------------------------

def adaptive_simpson(func, a, b, rtol=1e-8, atol=0.0, min_depth=3, max_intervals=200_000):
    """Adaptive Simpson quadrature of a vectorized ``func`` on ``[a, b]``.

    Intervals are refined level by level, all new nodes of a level being
    evaluated in one call.  An interval is accepted when its Richardson
    error estimate is within its share of the global tolerance.
    """
    edges = np.linspace(a, b, 2 ** min_depth + 1)
    lo, hi = edges[:-1], edges[1:]
    flo, fhi = func(lo), func(hi)
    fmid = func(0.5 * (lo + hi))
    whole = (hi - lo) / 6.0 * (flo + 4 * fmid + fhi)
    total = 0.0
    err_total = 0.0
    n_eval = 3 * lo.size
    width = b - a
    while lo.size:
        mid = 0.5 * (lo + hi)
        f1 = func(0.5 * (lo + mid))
        f2 = func(0.5 * (mid + hi))
        n_eval += 2 * lo.size
        left = (mid - lo) / 6.0 * (flo + 4 * f1 + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4 * f2 + fhi)
        fine = left + right
        err = np.abs(fine - whole) / 15.0
        estimate = abs(total + fine.sum())
        tol = np.maximum(rtol * estimate, atol) * (hi - lo) / width
        done = (err <= tol) | (hi - lo < 1e-14 * max(abs(a), abs(b), 1.0))
        total += float(np.sum(fine[done] + (fine[done] - whole[done]) / 15.0))
        err_total += float(np.sum(err[done]))
        keep = ~done
        if n_eval > max_intervals:
            raise NumericalError("adaptive quadrature did not reach the requested tolerance")
        lo, mid, hi = lo[keep], mid[keep], hi[keep]
        flo, f1, fmid, f2, fhi = flo[keep], f1[keep], fmid[keep], f2[keep], fhi[keep]
        # split each remaining interval in two
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        flo, fhi = np.concatenate([flo, fmid]), np.concatenate([fmid, fhi])
        fmid = np.concatenate([f1, f2])
        whole = np.concatenate([left[keep], right[keep]])
    return total, err_total


def _censor_setup(record, law, upper_q):
    _check_parametric(law)
    if not isinstance(record, HealthRecord):
        raise TypeError("expected a HealthRecord")
    if not record.is_censored:
        raise ValueError("record is not censored")
    c = float(record.event.c)
    upper = float(law.conditional_ppf(upper_q, c))
    return record.history(), c, upper


def _log_integral(history, c, upper, law, model, mode, rtol, weight=None):
    """``log int_c^upper f(t) g(t) w(t) dt / (1 - F(c))`` plus the tail beyond ``upper``."""
    logsf_c = float(law.logsf(c))
    ref = log_density_ratio(history, model, np.array([upper]), mode=mode)[0]
    if not np.isfinite(ref):
        raise NumericalError("density ratio vanishes at the upper integration limit")

    def integrand(t):
        lg = log_density_ratio(history, model, t, mode=mode)
        val = np.exp(law.logpdf(t) - logsf_c + lg - ref)
        return val if weight is None else val * weight(t)

    # start just above c: the ratio is zero at or before the last appointment
    start = max(c, history.last_appointment if history.appointments else c)
    start = np.nextafter(start, np.inf)
    total, _ = adaptive_simpson(integrand, start, upper, rtol=rtol)
    tail_w = 1.0 if weight is None else float(weight(np.array([upper]))[0])
    total += np.exp(float(law.logsf(upper)) - logsf_c) * tail_w
    return total, ref


def censored_contribution(record, law, model, mode=None, rtol=1e-8, upper_q=1 - 1e-12) -> float:
    """Log of the censored-record factor ``int_{t>c} f(t) g(y; t - t) dt / (1 - F(c))``.

    Integrates by adaptive Simpson on ``(c, q]`` with ``q`` the ``upper_q``
    quantile of ``T`` given ``T > c``; the remaining mass is added as
    ``g(q) (1 - F(q))``.
    """
    history, c, upper = _censor_setup(record, law, upper_q)
    if not history.appointments:
        return 0.0
    total, ref = _log_integral(history, c, upper, law, model, mode, rtol)
    if not total > 0:
        raise NumericalError("censored contribution underflowed")
    return float(np.log(total) + ref)


def censored_score(record, law, model: GaussianRevivalProcess, param: str, rtol=1e-10,
                   upper_q=1 - 1e-12) -> float:
    """Score of one record for a process parameter.

    For a complete record this is ``d log g / d theta`` at the death time.
    For a censored record it is the conditional expectation of that score
    under the predictive density of ``T`` given ``T > c``, which is the
    derivative of :func:`censored_contribution`.
    """
    if not isinstance(model, GaussianRevivalProcess):
        raise TypeError("scores need a known-parameter GaussianRevivalProcess")
    model.get_param(param)  # raises for unknown parameters
    if isinstance(record, HealthRecord) and not record.is_censored:
        return float(model.score(record.history(), np.array([record.T]), param)[0])
    history, c, upper = _censor_setup(record, law, upper_q)
    if not history.appointments:
        return 0.0
    den, _ = _log_integral(history, c, upper, law, model, None, rtol)
    num, _ = _log_integral(history, c, upper, law, model, None, rtol,
                           weight=lambda t: model.score(history, t, param))
    return float(num / den)


__all__ = ["log_density_ratio", "closed_form_linear_ratio", "LinearRatio", "PredictiveCurve",
           "predictive_survival", "default_grid", "normalize_curve", "censored_contribution",
           "censored_score", "adaptive_simpson"]
