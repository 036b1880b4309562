"""Seeded simulation of survival processes and recurrent-event records.

Random streams use numpy's Philox counter-based generator.  The master seed
feeds a ``SeedSequence`` whose spawned children give one stream to the
shared component (child 0) and one per patient (child ``i + 1``), so each
patient's draws depend only on the master seed and the patient's index.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import kernels as kb
from .exceptions import DataError, NumericalError
from .mean import InverseLinear, Intercept, MeanFunction, MeanModelSpec, Rows
from .poisson import EventRecord, IntensityModel
from .predict import EPSILON, predictive_survival
from .process import GaussianRevivalProcess
from .records import ArmSchedule, Censored, Dataset, Death, HealthRecord
from .survival import ExponentialSurvival, SurvivalLaw

RNG_ALGORITHM = "numpy.Philox-4x64-10 with SeedSequence.spawn (numpy >= 1.17)"


def streams(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent Philox generators split deterministically from ``seed``."""
    if seed is None:
        raise ValueError("a seed is mandatory for simulation")
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@dataclass(frozen=True)
class AppointmentScheme:
    """How appointment times are generated before death (or censoring).

    kind
        ``"fixed"``: the listed ``times``.  ``"keep"``: a visit every
        ``interval`` years from 0, each kept with probability ``keep(t)``
        (default ``c / (c + t)``).  ``"poisson"``: a baseline visit at 0
        plus a Poisson process of rate ``rate``.
    """

    kind: str = "keep"
    interval: float = 1.0
    c: float = 5.0
    times: tuple = ()
    rate: float = 1.0
    keep: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "keep", "poisson"):
            raise ValueError(f"unknown appointment scheme {self.kind!r}")
        if self.kind == "keep" and not self.interval > 0:
            raise ValueError("appointment interval must be positive")

    def keep_probability(self, t):
        t = np.asarray(t, dtype=float)
        if self.keep is not None:
            return np.clip(np.asarray(self.keep(t), dtype=float), 0.0, 1.0)
        if np.isinf(self.c):
            return np.ones_like(t)
        return self.c / (self.c + t)

    def draw(self, end: float, rng) -> np.ndarray:
        """Appointment times in ``[0, end)``."""
        if self.kind == "fixed":
            t = np.asarray(self.times, dtype=float)
            return t[(t >= 0) & (t < end)]
        if self.kind == "keep":
            grid = np.arange(0.0, end, self.interval)
            grid = grid[grid < end]
            u = rng.uniform(size=grid.size)
            return grid[u < self.keep_probability(grid)]
        n = rng.poisson(self.rate * end)
        extra = np.sort(rng.uniform(0.0, end, size=n))
        return np.concatenate([[0.0], extra[extra > 0]])

    def to_config(self):
        if self.kind == "fixed":
            return {"kind": "fixed", "times": list(self.times)}
        if self.kind == "keep":
            return {"kind": "keep", "interval": self.interval, "c": self.c}
        return {"kind": "poisson", "rate": self.rate}


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Parameters
    ----------
    n_patients : int
    survival : SurvivalLaw
        Parametric law of the death time.
    process : GaussianRevivalProcess
        Mean and per-patient covariance components in revival time.
    shared : tuple of (label, sigma2, kernel)
        Components shared across patients; generalized kernels are sampled
        through their anchored equivalents.
    shared_axis : {"revival", "forward"}
    appointments : AppointmentScheme
    censoring : float or SurvivalLaw, optional
        Administrative censoring time, or a law for random censoring times.
    arms, arm_probs
        Treatment labels assigned at randomization (after t = 0).
    covariates : dict
        ``name -> (mean, sd)``: normal baseline covariates.
    seed : int
    """

    n_patients: int = 200
    survival: SurvivalLaw = None
    process: GaussianRevivalProcess = None
    shared: tuple = ()
    shared_axis: str = "revival"
    appointments: AppointmentScheme = field(default_factory=AppointmentScheme)
    censoring: object = None
    arms: tuple = ()
    arm_probs: tuple = ()
    covariates: dict = field(default_factory=dict)
    seed: int = 0
    jitter: float = 1e-8

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is mandatory for simulation")
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        if self.survival is None or self.process is None:
            raise ValueError("survival law and revival process are required")
        for lab, v, _ in self.shared:
            if v < 0:
                raise ValueError(f"variance of shared component {lab!r} must be non-negative")
        if self.arms and self.arm_probs and len(self.arms) != len(self.arm_probs):
            raise ValueError("arm_probs must match arms")

    def with_seed(self, seed) -> "SimConfig":
        return replace(self, seed=seed)


def annual_visit_config(n_patients=200, seed=0, survival_mean=5.0) -> SimConfig:
    """Exponential survival, yearly visits kept with probability ``5/(5+t)``,
    mean ``10 + 10 s / (10 + s)`` and per-patient covariance
    ``(1 + exp(-|s - s'|/5) + delta_ss') / 2``.

    The constant half is read as a per-patient random intercept.
    """
    mean = MeanFunction(MeanModelSpec((Intercept(), InverseLinear(10.0))), (10.0, 10.0))
    process = GaussianRevivalProcess(mean, (
        ("patient", 0.5, kb.Constant()),
        ("patient_temporal", 0.5, kb.Exponential(5.0)),
        ("noise", 0.5, kb.WhiteNoise()),
    ))
    return SimConfig(n_patients=n_patients, survival=ExponentialSurvival.from_params(survival_mean),
                     process=process, appointments=AppointmentScheme("keep", 1.0, 5.0), seed=seed)


def _arm_schedule(cfg, rng):
    if not cfg.arms:
        return ArmSchedule()
    p = np.asarray(cfg.arm_probs, dtype=float) if cfg.arm_probs else None
    return ArmSchedule.constant(str(rng.choice(np.asarray(cfg.arms, dtype=object), p=p)))


def _censor_time(cfg, rng):
    if cfg.censoring is None:
        return np.inf
    if isinstance(cfg.censoring, SurvivalLaw):
        return float(cfg.censoring.rvs(random_state=rng))
    return float(cfg.censoring)


def _shared_draw(cfg, coords, rng):
    """One joint draw of the shared components at ``coords``."""
    u, inverse = np.unique(coords, return_inverse=True)
    K = np.zeros((u.size, u.size))
    for _, v, kern in cfg.shared:
        if v:
            k = kern.anchored(kern.default_anchors(u)) if kern.is_generalized else kern
            K += v * k.gram(u)
    if not np.any(K):
        return np.zeros_like(coords)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += cfg.jitter * np.mean(np.abs(np.diag(K)))
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise NumericalError("shared covariance is indefinite after jitter") from None
    return (L @ rng.standard_normal(u.size))[inverse]


def simulate(config: SimConfig) -> Dataset:
    """Draw a dataset of health records from ``config``."""
    cfg = config
    gens = streams(cfg.seed, cfg.n_patients + 1)
    shared_rng, patient_rngs = gens[0], gens[1:]
    drafts = []
    for i, rng in enumerate(patient_rngs):
        T = float(cfg.survival.rvs(random_state=rng))
        c = _censor_time(cfg, rng)
        arm = _arm_schedule(cfg, rng)
        cov = {name: float(rng.normal(m, sd)) for name, (m, sd) in cfg.covariates.items()}
        end = min(T, c)
        t = cfg.appointments.draw(end, rng)
        if c < T:
            t = t[t <= c]
        rows = Rows(s=T - t, t=t, T=np.full(t.size, T), arms=arm.at(t) if t.size else
                    np.empty(0, dtype=object), patient=np.full(t.size, i, dtype=object),
                    covariates={k: np.full(t.size, v) for k, v in cov.items()})
        y = cfg.process.sample(rows, rng, jitter=cfg.jitter) if t.size else np.empty(0)
        drafts.append((i, T, c, arm, cov, t, rows, y))
    if cfg.shared:
        axis = cfg.shared_axis
        coords = np.concatenate([d[6].s if axis == "revival" else d[6].t for d in drafts])
        eta = _shared_draw(cfg, coords, shared_rng)
        pos = 0
        for j, d in enumerate(drafts):
            n = d[5].size
            drafts[j] = d[:7] + (d[7] + eta[pos:pos + n],)
            pos += n
    records = []
    for i, T, c, arm, cov, t, _, y in drafts:
        event = Censored(c) if c < T else Death(T)
        records.append(HealthRecord(i + 1, tuple(t), tuple(y), event, cov, arm))
    return Dataset(records)


def simulate_events(intensity: IntensityModel, survival: SurvivalLaw, n: int, seed: int,
                    window: float = 2.0) -> list[EventRecord]:
    """Recurrent-event records by thinning on the reversed axis.

    Each patient's window is ``[0, min(window, T - 1 day)]``; events are
    simulated in revival time ``s`` on ``(T - t_k, T)`` against the
    intensity's upper bound there, then mapped back to ``t = T - s``.
    """
    out = []
    for i, rng in enumerate(streams(seed, n)):
        T = float(survival.rvs(random_state=rng))
        tk = max(min(float(window), T - EPSILON), 0.0)
        events = np.empty(0)
        if tk > 0:
            lo, hi = T - tk, T
            M = intensity.upper_bound(lo, hi)
            if not np.isfinite(M) or M <= 0:
                raise ValueError("intensity must be bounded and positive on the window")
            m = rng.poisson(M * tk)
            s = rng.uniform(lo, hi, size=m)
            keep = rng.uniform(size=m) * M < intensity.rate(s)
            events = np.sort(T - s[keep])
            events = events[(events > 0) & (events < tk)]
        out.append(EventRecord(i + 1, tk, tuple(events), Death(T)))
    return out


@dataclass
class RMSESummary:
    rmse: float
    mean_sd: float
    covariate_rmse: float
    n_predicted: int
    n_patients: int
    k: int

    def as_dict(self):
        return dict(self.__dict__)


def prediction_rmse_study(config: SimConfig, k: int = 3, n_seeds: int = 20, seeds=None,
                          horizon: float = 60.0, n_grid: int = 3000) -> RMSESummary:
    """Prediction error of the death time from the first ``k`` observations.

    For each seeded dataset, every uncensored patient with at least ``k``
    appointments gets the predictive mean and SD from the true generating
    process.  The covariates-only predictor is the marginal mean, applied
    to all uncensored patients.
    """
    if config.shared:
        raise ValueError("the study uses per-patient processes only")
    seeds = list(range(config.seed, config.seed + n_seeds)) if seeds is None else list(seeds)
    law = config.survival
    errors, sds, cov_errors = [], [], []
    offsets = np.geomspace(EPSILON, horizon, n_grid)
    for seed in seeds:
        data = simulate(config.with_seed(seed)).uncensored()
        for rec in data:
            cov_errors.append(rec.T - law.mean_)
            if len(rec.appointments) < k:
                continue
            hist = rec.history(k)
            curve = predictive_survival(hist, law, config.process,
                                        grid=hist.last_appointment + offsets)
            errors.append(rec.T - curve.mean())
            sds.append(curve.sd())
    if len(errors) < 2:
        raise DataError(f"too few patients with at least {k} appointments")
    return RMSESummary(rmse=float(np.sqrt(np.mean(np.square(errors)))),
                       mean_sd=float(np.mean(sds)),
                       covariate_rmse=float(np.sqrt(np.mean(np.square(cov_errors)))),
                       n_predicted=len(errors), n_patients=len(cov_errors), k=k)
