"""Gaussian revival process with known parameters.

Used for prediction in marginal mode, for simulation from true parameters,
and for the censored-record likelihood machinery.  All moments are computed
for a whole grid of candidate death times at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as kb
from .mean import InverseLinear, MeanFunction, MeanModelSpec, Rows


def grid_rows(history, t_grid) -> Rows:
    """Rows for every (grid point, appointment) pair, grid-major."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    t = np.asarray(history.appointments, dtype=float)
    G, k = t_grid.size, t.size
    arms = history.arm_schedule.at(t) if k else np.empty(0, dtype=object)
    return Rows(s=(t_grid[:, None] - t[None, :]).ravel(), t=np.tile(t, G),
                T=np.repeat(t_grid, k), arms=np.tile(arms, G),
                patient=np.zeros(G * k, dtype=object),
                covariates={n: np.full(G * k, float(v)) for n, v in history.covariates.items()})


def mvn_logpdf(y, mus, covs) -> np.ndarray:
    """Batched multivariate normal log density; ``mus`` (G, k), ``covs`` (G, k, k)."""
    y = np.asarray(y, dtype=float)
    k = y.size
    if k == 0:
        return np.zeros(len(mus))
    L = np.linalg.cholesky(covs)
    r = (y[None, :] - mus)[..., None]
    z = np.linalg.solve(L, r)[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (np.sum(z * z, axis=-1) + logdet + k * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianRevivalProcess:
    """Per-patient Gaussian revival process.

    Parameters
    ----------
    mean : MeanFunction or callable
        Maps :class:`Rows` to mean values.
    components : tuple of (label, sigma2, kernel)
        Additive covariance terms acting within one patient.  Kernels must
        be proper (empty drift basis).
    """

    mean: object
    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple((str(lab), float(v), k) for lab, v, k in self.components)
        for lab, v, k in comps:
            if v < 0:
                raise ValueError(f"variance of {lab!r} must be non-negative")
            if k.is_generalized:
                raise ValueError(f"component {lab!r}: a per-patient process needs a proper kernel")
        object.__setattr__(self, "components", comps)

    @classmethod
    def inverse_linear(cls, alpha=0.0, beta=0.0, gamma=1.0, components=()):
        """Mean ``alpha + beta s / (gamma + s)``."""
        from .mean import Intercept
        spec = MeanModelSpec((Intercept(), InverseLinear(gamma)))
        return cls(MeanFunction(spec, (alpha, beta)), tuple(components))

    @property
    def labels(self):
        return [c[0] for c in self.components]

    def mean_at(self, rows: Rows) -> np.ndarray:
        return np.asarray(self.mean(rows), dtype=float)

    def cov_at(self, s) -> np.ndarray:
        """Covariance for revival times ``s`` of shape (..., k)."""
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + s.shape[-1:])
        for _, v, k in self.components:
            if v:
                out += v * k(s[..., :, None], s[..., None, :])
        return out

    def moments(self, history, t_grid):
        """Means ``(G, k)`` and covariances ``(G, k, k)`` for each candidate death time."""
        t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
        k = len(history.appointments)
        rows = grid_rows(history, t_grid)
        mus = self.mean_at(rows).reshape(t_grid.size, k)
        s = rows.s.reshape(t_grid.size, k)
        return mus, self.cov_at(s)

    def moment_derivatives(self, history, t_grid, param: str):
        """Derivatives of the moments in ``"sigma2:<label>"`` or ``"coef:<index or name>"``."""
        t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
        G, k = t_grid.size, len(history.appointments)
        rows = grid_rows(history, t_grid)
        s = rows.s.reshape(G, k)
        kind, _, name = param.partition(":")
        dmu = np.zeros((G, k))
        dcov = np.zeros((G, k, k))
        if kind == "sigma2":
            hit = [kern for lab, _, kern in self.components if lab == name]
            if not hit:
                raise KeyError(f"no variance component {name!r}")
            dcov = hit[0](s[..., :, None], s[..., None, :]) * np.ones((G, k, k))
        elif kind == "coef":
            if not isinstance(self.mean, MeanFunction):
                raise TypeError("coefficient derivatives need a MeanFunction mean")
            names = self.mean.spec.column_names()
            j = names.index(name) if name in names else int(name)
            dmu = self.mean.spec.design(rows)[:, j].reshape(G, k)
        else:
            raise ValueError(f"unknown parameter {param!r}")
        return dmu, dcov

    def with_param(self, param: str, value: float) -> "GaussianRevivalProcess":
        """Copy with one ``sigma2:`` or ``coef:`` parameter replaced."""
        kind, _, name = param.partition(":")
        if kind == "sigma2":
            if name not in self.labels:
                raise KeyError(f"no variance component {name!r}")
            comps = tuple((lab, value if lab == name else v, k) for lab, v, k in self.components)
            return GaussianRevivalProcess(self.mean, comps)
        if kind == "coef":
            names = self.mean.spec.column_names()
            j = names.index(name) if name in names else int(name)
            coef = list(self.mean.coef)
            coef[j] = value
            return GaussianRevivalProcess(MeanFunction(self.mean.spec, coef), self.components)
        raise ValueError(f"unknown parameter {param!r}")

    def get_param(self, param: str) -> float:
        kind, _, name = param.partition(":")
        if kind == "sigma2":
            return dict((lab, v) for lab, v, _ in self.components)[name]
        names = self.mean.spec.column_names()
        return self.mean.coef[names.index(name) if name in names else int(name)]

    def log_density(self, history, t_grid) -> np.ndarray:
        mus, covs = self.moments(history, t_grid)
        return mvn_logpdf(history.values, mus, covs)

    def score(self, history, t_grid, param: str) -> np.ndarray:
        """``d/d theta`` of the log density for each grid point."""
        y = np.asarray(history.values, dtype=float)
        mus, covs = self.moments(history, t_grid)
        dmu, dcov = self.moment_derivatives(history, t_grid, param)
        if y.size == 0:
            return np.zeros(len(mus))
        Sinv = np.linalg.inv(covs)
        r = y[None, :] - mus
        a = np.einsum("gij,gj->gi", Sinv, r)
        return (np.einsum("gi,gi->g", a, dmu)
                + 0.5 * np.einsum("gi,gij,gj->g", a, dcov, a)
                - 0.5 * np.einsum("gij,gji->g", Sinv, dcov))

    def sample(self, rows: Rows, rng, jitter=1e-8) -> np.ndarray:
        """Draw outcomes for one patient's rows."""
        mu = self.mean_at(rows)
        C = self.cov_at(rows.s)
        if not np.any(C):
            return mu
        C[np.diag_indices_from(C)] += jitter * np.mean(np.abs(np.diag(C)))
        return mu + np.linalg.cholesky(C) @ rng.standard_normal(len(mu))

    def to_dict(self):
        out = {"components": [{"label": lab, "sigma2": v, "kernel": k.to_dict()}
                              for lab, v, k in self.components]}
        if isinstance(self.mean, MeanFunction):
            out["mean"] = self.mean.spec.to_config()
            out["coef"] = list(self.mean.coef)
        return out


def process_from_config(cfg) -> GaussianRevivalProcess:
    """Build from ``{"mean": [...], "coef": [...], "components": [...]}``."""
    from .mean import mean_spec_from_config
    spec = mean_spec_from_config(cfg.get("mean", ["intercept"]))
    coef = cfg.get("coef", [0.0] * len(spec.column_names()))
    comps = tuple((c["label"], float(c["sigma2"]), kb.kernel_from_dict(c["kernel"]))
                  for c in cfg.get("components", ()))
    return GaussianRevivalProcess(MeanFunction(spec, coef), comps)
