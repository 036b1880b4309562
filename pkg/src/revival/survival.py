"""Stage-one marginal survival laws: exponential, Weibull and Kaplan-Meier.

Estimators follow the scikit-learn convention: constructor arguments are
hyperparameters, ``fit(durations, observed)`` learns attributes with a
trailing underscore and returns ``self``.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize, special
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_survival_data
from .exceptions import ConvergenceError, DataError
from .records import Dataset


class SurvivalLaw(BaseEstimator):
    """Common interface for fitted marginal survival distributions."""

    family = "base"
    parametric = True

    def pdf(self, t):
        return np.exp(self.logpdf(t))

    def logpdf(self, t):
        raise NotImplementedError

    def cdf(self, t):
        return 1.0 - self.sf(t)

    def sf(self, t):
        raise NotImplementedError

    def logsf(self, t):
        with np.errstate(divide="ignore"):
            return np.log(self.sf(t))

    def hazard(self, t):
        return np.exp(self.logpdf(t) - self.logsf(t))

    def ppf(self, q):
        raise NotImplementedError

    def quantile(self, q):
        return self.ppf(q)

    def conditional_ppf(self, q, c):
        """Quantile ``q`` of ``T`` given ``T > c``."""
        log_tail = np.asarray(self.logsf(c)) + np.log1p(-np.asarray(q, dtype=float))
        return self.inverse_logsf(log_tail)

    def inverse_logsf(self, log_s):
        """``t`` with ``log S(t) = log_s``; accurate far into the tail."""
        return self.ppf(-np.expm1(np.asarray(log_s, dtype=float)))

    def rvs(self, size=None, random_state=None):
        rng = np.random.default_rng(random_state)
        return self.ppf(rng.uniform(size=size))

    def log_likelihood(self, durations, observed=None) -> float:
        durations, observed = check_survival_data(durations, observed)
        return float(np.sum(self.logpdf(durations[observed]))
                     + np.sum(self.logsf(durations[~observed])))

    def to_dict(self) -> dict:
        raise NotImplementedError


class ExponentialSurvival(SurvivalLaw):
    """Exponential law parameterized by its mean.

    The censored-data MLE of the mean is total time at risk over deaths.
    """

    family = "exponential"

    def fit(self, durations, observed=None):
        durations, observed = check_survival_data(durations, observed)
        deaths = int(observed.sum())
        if deaths == 0:
            raise DataError("exponential fit needs at least one death")
        self.mean_ = float(durations.sum() / deaths)
        self.n_deaths_ = deaths
        self.log_likelihood_ = self.log_likelihood(durations, observed)
        return self

    @classmethod
    def from_params(cls, mean: float) -> "ExponentialSurvival":
        if not mean > 0:
            raise ValueError("mean must be positive")
        law = cls()
        law.mean_ = float(mean)
        return law

    @property
    def rate(self):
        check_is_fitted(self, "mean_")
        return 1.0 / self.mean_

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t >= 0, -np.log(self.mean_) - t * self.rate, -np.inf)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, np.exp(-np.maximum(t, 0) * self.rate), 1.0)

    def logsf(self, t):
        t = np.asarray(t, dtype=float)
        return -np.maximum(t, 0) * self.rate

    def hazard(self, t):
        return np.full(np.shape(t), self.rate)

    def ppf(self, q):
        return -self.mean_ * np.log1p(-np.asarray(q, dtype=float))

    def inverse_logsf(self, log_s):
        return -self.mean_ * np.asarray(log_s, dtype=float)

    def to_dict(self):
        check_is_fitted(self, "mean_")
        return {"family": self.family, "mean": self.mean_}


class WeibullSurvival(SurvivalLaw):
    """Weibull law ``S(t) = exp(-(t/scale)^shape)``.

    The MLE maximizes the profile likelihood in the shape; for a fixed shape
    the scale has the closed form ``scale^shape = sum(t^shape) / deaths``.
    Passing ``shape`` fixes it (``shape=1`` is the exponential fit).
    """

    family = "weibull"

    def __init__(self, shape=None, max_iter=500):
        self.shape = shape
        self.max_iter = max_iter

    @staticmethod
    def _profile(log_k, logt, observed):
        k = np.exp(log_k)
        d = observed.sum()
        # log(sum t^k) via log-sum-exp for large k
        log_sum = np.logaddexp.reduce(k * logt)
        log_scale_k = log_sum - np.log(d)
        return d * np.log(k) - d * log_scale_k + (k - 1) * logt[observed].sum() - d

    def fit(self, durations, observed=None):
        durations, observed = check_survival_data(durations, observed)
        d = int(observed.sum())
        if d < 2 and self.shape is None:
            raise DataError("Weibull fit needs at least two deaths")
        if d < 1:
            raise DataError("Weibull fit needs at least one death")
        if np.any(durations <= 0):
            raise DataError("Weibull fit needs positive durations")
        logt = np.log(durations)
        if self.shape is None:
            res = optimize.minimize_scalar(
                lambda lk: -self._profile(lk, logt, observed),
                bounds=(np.log(1e-3), np.log(1e3)), method="bounded",
                options={"xatol": 1e-10, "maxiter": self.max_iter})
            if not res.success:
                raise ConvergenceError("Weibull profile likelihood did not converge", best=res.x)
            log_k = float(res.x)
            h = 1e-4
            curv = (self._profile(log_k + h, logt, observed) - 2 * self._profile(log_k, logt, observed)
                    + self._profile(log_k - h, logt, observed)) / h ** 2
            k = np.exp(log_k)
            # delta method from log-shape to shape
            self.shape_se_ = float(k / np.sqrt(-curv)) if curv < 0 else np.nan
        else:
            k = float(self.shape)
            self.shape_se_ = 0.0
        self.shape_ = float(k)
        log_sum = np.logaddexp.reduce(k * logt)
        self.scale_ = float(np.exp((log_sum - np.log(d)) / k))
        self.log_likelihood_ = self.log_likelihood(durations, observed)
        return self

    @classmethod
    def from_params(cls, shape: float, scale: float) -> "WeibullSurvival":
        if not (shape > 0 and scale > 0):
            raise ValueError("shape and scale must be positive")
        law = cls(shape=shape)
        law.shape_, law.scale_, law.shape_se_ = float(shape), float(scale), 0.0
        return law

    @property
    def mean_(self):
        check_is_fitted(self, "shape_")
        return float(self.scale_ * np.exp(special.gammaln(1 + 1 / self.shape_)))

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        k, lam = self.shape_, self.scale_
        with np.errstate(divide="ignore", invalid="ignore"):
            z = t / lam
            out = np.log(k / lam) + (k - 1) * np.log(z) - z ** k
        return np.where(t > 0, out, -np.inf)

    def logsf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return -(t / self.scale_) ** self.shape_

    def sf(self, t):
        return np.exp(self.logsf(t))

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        k, lam = self.shape_, self.scale_
        with np.errstate(divide="ignore"):
            return (k / lam) * (t / lam) ** (k - 1)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        return self.scale_ * (-np.log1p(-q)) ** (1.0 / self.shape_)

    def inverse_logsf(self, log_s):
        return self.scale_ * (-np.asarray(log_s, dtype=float)) ** (1.0 / self.shape_)

    def to_dict(self):
        check_is_fitted(self, "shape_")
        return {"family": self.family, "shape": self.shape_, "scale": self.scale_}


class KaplanMeier(SurvivalLaw):
    """Product-limit estimator; a step function with no density.

    Predictive calculations need a density and reject this law.
    """

    family = "kaplan_meier"
    parametric = False

    def fit(self, durations, observed=None):
        durations, observed = check_survival_data(durations, observed)
        if durations.size == 0:
            raise DataError("Kaplan-Meier needs at least one record")
        times = np.unique(durations[observed])
        at_risk = np.array([(durations >= u).sum() for u in times], dtype=float)
        deaths = np.array([((durations == u) & observed).sum() for u in times], dtype=float)
        self.timeline_ = times
        self.at_risk_ = at_risk
        self.deaths_ = deaths
        self.survival_ = np.cumprod(1.0 - deaths / at_risk)
        return self

    def sf(self, t):
        check_is_fitted(self, "survival_")
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.timeline_, t, side="right")
        table = np.concatenate([[1.0], self.survival_])
        return table[idx]

    def logpdf(self, t):
        raise TypeError("Kaplan-Meier has no density; use a parametric law for prediction")

    def hazard(self, t):
        raise TypeError("Kaplan-Meier hazard is not defined pointwise")

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        F = 1.0 - self.survival_
        idx = np.searchsorted(F, q, side="left")
        out = np.where(idx < len(F), self.timeline_[np.minimum(idx, len(F) - 1)], np.inf)
        return out

    def to_dict(self):
        check_is_fitted(self, "survival_")
        return {"family": self.family, "timeline": self.timeline_.tolist(),
                "survival": self.survival_.tolist()}


def _dataset_arrays(dataset):
    if isinstance(dataset, Dataset):
        return dataset.survival_data()
    return check_survival_data(*dataset)


def fit_exponential(dataset) -> ExponentialSurvival:
    return ExponentialSurvival().fit(*_dataset_arrays(dataset))


def fit_weibull(dataset, shape=None) -> WeibullSurvival:
    return WeibullSurvival(shape=shape).fit(*_dataset_arrays(dataset))


def fit_kaplan_meier(dataset) -> KaplanMeier:
    return KaplanMeier().fit(*_dataset_arrays(dataset))


FAMILIES = {"exponential": ExponentialSurvival, "weibull": WeibullSurvival,
            "kaplan_meier": KaplanMeier}


def fit_survival(dataset, family: str = "exponential") -> SurvivalLaw:
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown survival family {family!r}") from None
    return cls().fit(*_dataset_arrays(dataset))


def law_from_dict(spec: dict) -> SurvivalLaw:
    spec = dict(spec)
    family = spec.pop("family")
    if family == "exponential":
        return ExponentialSurvival.from_params(float(spec["mean"]))
    if family == "weibull":
        return WeibullSurvival.from_params(float(spec["shape"]), float(spec["scale"]))
    if family == "kaplan_meier":
        km = KaplanMeier()
        km.timeline_ = np.asarray(spec["timeline"], dtype=float)
        km.survival_ = np.asarray(spec["survival"], dtype=float)
        return km
    raise ValueError(f"unknown survival family {family!r}")
