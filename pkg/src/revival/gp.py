"""Stage-two Gaussian revival model.

Outcomes are modelled in revival time ``s = T - t`` as

    E Z_i(s) = x_i(s)' beta
    cov(Z_i(s), Z_j(s')) = sum_k sigma2_k [shared_k or delta_ij] K_k(s, s')

and the variance components are estimated by REML: the likelihood of
residual contrasts orthogonal to the mean design, augmented with the drift
basis of any generalized kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import kernels as kb
from ._likelihood import (LikelihoodEngine, add_jitter, cholesky, combine, profile_loglik,
                          residual_loglik)
from ._validation import check_dataset
from .exceptions import CensoredRecordError, DataError, RankDeficiencyError
from .mean import (Intercept, MeanFunction, MeanModelSpec, Rows, SurvivalTime,
                   mean_spec_from_config)
from .records import Dataset

REVIVAL, FORWARD = "revival", "forward"


@dataclass(frozen=True)
class VarianceComponent:
    """One additive covariance term.

    ``shared`` components couple all patients; the others act within a
    patient only.  ``axis`` selects revival time or forward time as the
    kernel argument.  ``estimate`` names kernel parameters (ranges) to
    optimize on the log scale.  ``floor`` marks the white-noise component
    whose variance is kept strictly positive.
    """

    label: str
    kernel: kb.Kernel
    shared: bool = False
    axis: str = REVIVAL
    estimate: tuple = ()
    floor: bool | None = None

    def __post_init__(self):
        if self.axis not in (REVIVAL, FORWARD):
            raise ValueError("axis must be 'revival' or 'forward'")
        object.__setattr__(self, "estimate", tuple(self.estimate))
        if self.floor is None:
            object.__setattr__(self, "floor",
                               isinstance(self.kernel, kb.WhiteNoise) and not self.shared)
        for p in self.estimate:
            if p not in self.kernel.params:
                raise ValueError(f"{self.kernel.name} has no parameter {p!r}")

    def to_config(self):
        out = {"label": self.label, "kernel": self.kernel.to_dict(), "shared": self.shared}
        if self.axis != REVIVAL:
            out["axis"] = self.axis
        if self.estimate:
            out["estimate"] = list(self.estimate)
        return out


@dataclass(frozen=True)
class VarianceModelSpec:
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("variance model needs at least one component")
        labels = [c.label for c in self.components]
        if len(set(labels)) != len(labels):
            raise ValueError("component labels must be unique")
        if not any(c.floor for c in self.components):
            raise ValueError("variance model needs a component with a positive floor "
                             "(per-patient white noise)")

    @property
    def labels(self):
        return [c.label for c in self.components]

    @property
    def reference(self) -> int:
        return next(i for i, c in enumerate(self.components) if c.floor)

    def component(self, label) -> VarianceComponent:
        for c in self.components:
            if c.label == label:
                return c
        raise KeyError(label)

    @property
    def has_shared(self):
        return any(c.shared for c in self.components)

    def with_axis(self, axis, shared_only=True) -> "VarianceModelSpec":
        return VarianceModelSpec(tuple(replace(c, axis=axis) if (c.shared or not shared_only) else c
                                       for c in self.components))

    def to_config(self):
        return [c.to_config() for c in self.components]


def component_from_config(item) -> VarianceComponent:
    item = dict(item)
    return VarianceComponent(label=item["label"], kernel=kb.kernel_from_dict(item["kernel"]),
                             shared=bool(item.get("shared", False)),
                             axis=item.get("axis", REVIVAL),
                             estimate=tuple(item.get("estimate", ())),
                             floor=item.get("floor"))


def variance_spec_from_config(items) -> VarianceModelSpec:
    return VarianceModelSpec(tuple(component_from_config(i) for i in items))


def growth_curve_variance(lam=1.5, shared_kernel=None, estimate_range=False) -> VarianceModelSpec:
    """Shared trend, per-patient temporal deviation, patient effect, noise."""
    shared_kernel = kb.LinearSpline() if shared_kernel is None else shared_kernel
    return VarianceModelSpec((
        VarianceComponent("shared", shared_kernel, shared=True),
        VarianceComponent("patient_temporal", kb.Exponential(lam),
                          estimate=("lam",) if estimate_range else ()),
        VarianceComponent("patient", kb.Constant()),
        VarianceComponent("noise", kb.WhiteNoise()),
    ))


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------

@dataclass
class RevivalDesign:
    """Stacked training rows and design matrices.

    ``X`` holds the mean columns; ``X_tilde`` appends the drift columns of
    generalized kernels that are not already in the mean span.
    """

    rows: Rows
    y: np.ndarray
    X: np.ndarray
    X_tilde: np.ndarray
    mean_spec: MeanModelSpec
    column_names: list
    drift_columns: list = field(default_factory=list)
    blocks: np.ndarray = None
    patient_ids: list = field(default_factory=list)

    @property
    def s(self):
        return self.rows.s

    @property
    def n_mean(self):
        return self.X.shape[1]

    def coords(self, axis):
        return self.rows.s if axis == REVIVAL else self.rows.t


def _rows_for(dataset: Dataset) -> tuple[Rows, np.ndarray, list]:
    parts, ys = [], []
    for i, rec in enumerate(dataset):
        if rec.is_censored:
            raise CensoredRecordError("cannot align censored record at terminus")
        order = np.argsort(rec.event.T - rec.times, kind="stable")
        r = Rows.from_record(rec, rec.event.T, patient=i)
        parts.append(Rows(s=r.s[order], t=r.t[order], T=r.T[order], arms=r.arms[order],
                          patient=np.full(len(order), i),
                          covariates={k: v[order] for k, v in r.covariates.items()}))
        ys.append(rec.values[order])
    rows = Rows.stack(parts)
    return rows, np.concatenate(ys) if ys else np.empty(0), [r.patient_id for r in dataset]


def _drift_matrix(component: VarianceComponent, coords, blocks):
    F = component.kernel.drift(coords)
    if component.shared or F.shape[1] == 0:
        return F, [(component.label, j, None) for j in range(F.shape[1])]
    cols, tags = [], []
    for b in np.unique(blocks):
        mask = blocks == b
        for j in range(F.shape[1]):
            col = np.zeros(len(coords))
            col[mask] = F[mask, j]
            cols.append(col)
            tags.append((component.label, j, b))
    return np.column_stack(cols), tags


def _extend_span(X, extra, tags, tol=1e-9):
    """Append columns of ``extra`` that increase the column rank of ``X``."""
    kept, kept_tags = [], []
    Q = np.linalg.qr(X)[0] if X.shape[1] else np.zeros((X.shape[0], 0))
    for col, tag in zip(extra.T, tags):
        resid = col - Q @ (Q.T @ col)
        if np.linalg.norm(resid) > tol * max(np.linalg.norm(col), 1.0):
            kept.append(col)
            kept_tags.append(tag)
            Q = np.column_stack([Q, resid / np.linalg.norm(resid)])
    if kept:
        return np.column_stack([X] + kept), kept_tags
    return X, kept_tags


def check_full_rank(X, what="mean design"):
    if X.shape[1] == 0:
        return
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficiencyError(f"{what} is rank deficient "
                                  f"(rank {np.linalg.matrix_rank(X)} < {X.shape[1]} columns)")


def build_design(dataset, mean_spec: MeanModelSpec, variance_spec: VarianceModelSpec | None = None
                 ) -> RevivalDesign:
    """Stack the uncensored records and build the mean and drift design."""
    if not isinstance(dataset, Dataset):
        dataset = Dataset(list(dataset))
    if len(dataset) == 0:
        raise DataError("empty dataset")
    rows, y, ids = _rows_for(dataset)
    mean_spec = mean_spec.resolve(rows)
    X = mean_spec.design(rows)
    check_full_rank(X)
    X_tilde, drift_tags = X, []
    if variance_spec is not None:
        for comp in variance_spec.components:
            coords = rows.s if comp.axis == REVIVAL else rows.t
            F, tags = _drift_matrix(comp, coords, rows.patient)
            if F.shape[1]:
                X_tilde, kept = _extend_span(X_tilde, F, tags)
                drift_tags.extend(kept)
    return RevivalDesign(rows=rows, y=y, X=X, X_tilde=X_tilde, mean_spec=mean_spec,
                         column_names=mean_spec.column_names(), drift_columns=drift_tags,
                         blocks=np.asarray(rows.patient, dtype=int), patient_ids=ids)


def component_gram(component: VarianceComponent, kernel: kb.Kernel, coords, blocks,
                   coords2=None, blocks2=None) -> np.ndarray:
    """Gram (or cross-Gram) matrix of one component, with the patient mask."""
    if coords2 is None:
        return kb.gram(kernel, coords, None if component.shared else blocks)
    K = kernel.gram(coords, coords2)
    if not component.shared:
        K = np.where(np.asarray(blocks)[:, None] == np.asarray(blocks2)[None, :], K, 0.0)
    return K


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------

class RevivalGP(BaseEstimator):
    """Gaussian revival model with REML variance components.

    Parameters
    ----------
    mean : MeanModelSpec
    variance : VarianceModelSpec
    method : {"reml", "ml"}
        ``"ml"`` maximizes the profile likelihood of contrasts orthogonal to
        the drift basis only; it is the likelihood used for mean-model LR tests.
    n_restarts : int
        Extra Nelder-Mead runs from perturbed copies of the best point.
    sigma2 : dict, optional
        Fixed variance components.  When given, no optimization is run.
    """

    def __init__(self, mean=None, variance=None, method="reml", n_restarts=3, tol=1e-6,
                 max_iter=2000, jitter=1e-8, random_state=0, sigma2=None):
        self.mean = mean
        self.variance = variance
        self.method = method
        self.n_restarts = n_restarts
        self.tol = tol
        self.max_iter = max_iter
        self.jitter = jitter
        self.random_state = random_state
        self.sigma2 = sigma2

    # -- fitting -------------------------------------------------------------

    def _specs(self):
        mean = self.mean if self.mean is not None else MeanModelSpec((Intercept(),))
        if isinstance(mean, (list, tuple)):
            mean = mean_spec_from_config(mean)
        variance = self.variance if self.variance is not None else growth_curve_variance()
        if isinstance(variance, (list, tuple)):
            variance = variance_spec_from_config(variance)
        return mean, variance

    def _anchored(self, design, variance):
        out = []
        for comp in variance.components:
            coords = design.coords(comp.axis)
            k = comp.kernel
            out.append(k.anchored(k.default_anchors(coords)) if k.is_generalized else k)
        return out

    def fit(self, dataset, y=None):
        if self.method not in ("reml", "ml"):
            raise ValueError("method must be 'reml' or 'ml'")
        dataset = check_dataset(dataset, uncensored=True)
        mean, variance = self._specs()
        design = build_design(dataset, mean, variance)
        check_full_rank(design.X_tilde, "mean design with drift columns")
        anchored = self._anchored(design, variance)
        # only semidefinite (anchored generalized) grams need the diagonal jitter
        self.jitter_ = self.jitter if any(c.kernel.is_generalized for c in variance.components) \
            else 0.0
        grams, builders = [], {}
        for k, (comp, kern) in enumerate(zip(variance.components, anchored)):
            coords = design.coords(comp.axis)
            grams.append(component_gram(comp, kern, coords, design.blocks))
            if comp.estimate:
                if len(comp.estimate) != 1:
                    raise ValueError("one estimated parameter per component is supported")
                pname = comp.estimate[0]

                def build(value, comp=comp, pname=pname, coords=coords):
                    kern = comp.kernel.with_params(**{pname: value})
                    if kern.is_generalized:
                        kern = kern.anchored(kern.default_anchors(coords))
                    return component_gram(comp, kern, coords, design.blocks)

                builders[k] = (build, max(float(np.max(coords)) / 4.0, 1e-3))
        var_y = float(np.var(design.y)) or 1.0
        restricted = None
        if self.method == "ml":
            restricted = design.X_tilde[:, design.n_mean:]
        engine = LikelihoodEngine(design.X_tilde, design.y, grams, variance.reference,
                                  restricted=restricted, builders=builders,
                                  jitter=self.jitter_, floor=1e-10)
        if self.sigma2 is not None:
            sig = np.array([float(self.sigma2[c.label]) for c in variance.components])
            ranges = {k: b[1] for k, b in builders.items()}
            if self.method == "reml":
                ll = residual_loglik(sig, design.X_tilde, design.y, engine.grams_at(ranges),
                                     jitter=self.jitter_)
            else:
                ll = profile_loglik(sig, design.X_tilde, design.y, engine.grams_at(ranges),
                                    restricted=restricted, jitter=self.jitter_)
            self.converged_, self.n_evals_ = True, 0
        else:
            x0 = engine.start()
            res = engine.maximize(x0, n_restarts=self.n_restarts, tol=self.tol,
                                  max_iter=self.max_iter, random_state=self.random_state)
            sig, ranges, ll = res.sigma2, res.ranges, res.loglik
            self.converged_, self.n_evals_ = res.converged, res.n_evals

        fitted_components = []
        for k, comp in enumerate(variance.components):
            if k in ranges:
                comp = replace(comp, kernel=comp.kernel.with_params(**{comp.estimate[0]: ranges[k]}))
            fitted_components.append(comp)
        self.variance_spec_ = VarianceModelSpec(tuple(fitted_components))
        self.mean_spec_ = design.mean_spec
        self.design_ = design
        self.sigma2_ = {c.label: float(v) for c, v in zip(variance.components, sig)}
        self.ranges_ = {variance.components[k].label: float(v) for k, v in ranges.items()}
        self.degenerate_ = [lab for lab, v in self.sigma2_.items()
                            if v <= 1e-10 * var_y * 1.0001]
        if self.method == "reml":
            self.max_residual_loglik_ = float(ll)
        self.max_loglik_ = float(ll)
        self._finalize(design)
        return self

    def _finalize(self, design):
        """Cache the GLS fit and factorization at the fitted parameters."""
        comps = self.variance_spec_.components
        self.anchored_kernels_ = self._anchored(design, self.variance_spec_)
        grams = [component_gram(c, k, design.coords(c.axis), design.blocks)
                 for c, k in zip(comps, self.anchored_kernels_)]
        S = add_jitter(combine([self.sigma2_[c.label] for c in comps], grams), self.jitter_, copy=False)
        L = cholesky(S)
        Xt = design.X_tilde
        Xw = linalg.solve_triangular(L, Xt, lower=True)
        yw = linalg.solve_triangular(L, design.y, lower=True)
        info = Xw.T @ Xw
        cov = np.linalg.inv(info)
        beta = cov @ (Xw.T @ yw)
        resid = design.y - Xt @ beta
        alpha = linalg.cho_solve((L, True), resid)
        p = design.n_mean
        self.coef_full_ = beta
        self.coef_ = beta[:p]
        self.coef_cov_ = cov[:p, :p]
        self.coef_se_ = np.sqrt(np.diag(self.coef_cov_))
        self.coef_names_ = list(design.column_names)
        self.estimable_ = self._estimable(design)
        self._chol = L
        self._Xw = Xw
        self._info_inv = cov
        self._alpha = alpha
        self._sigma = S

    def _estimable(self, design):
        """Mean coefficients not confounded with a drift basis."""
        p = design.n_mean
        out = np.ones(p, dtype=bool)
        drift = []
        for comp in self.variance_spec_.components:
            F, _ = _drift_matrix(comp, design.coords(comp.axis), design.blocks)
            if F.shape[1]:
                drift.append(F)
        if not drift:
            return out
        F = np.column_stack(drift)
        for j in range(p):
            others = np.delete(design.X, j, axis=1)
            base = np.column_stack([others, F])
            with_j = np.column_stack([base, design.X[:, j]])
            out[j] = np.linalg.matrix_rank(with_j) > np.linalg.matrix_rank(base)
        return out

    # -- accessors -----------------------------------------------------------

    @property
    def coef_dict_(self):
        check_is_fitted(self, "coef_")
        return dict(zip(self.coef_names_, self.coef_))

    def summary(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "coef": {n: {"estimate": float(b), "se": float(se), "estimable": bool(e)}
                     for n, b, se, e in zip(self.coef_names_, self.coef_, self.coef_se_,
                                            self.estimable_)},
            "sigma2": dict(self.sigma2_),
            "ranges": dict(self.ranges_),
            "max_loglik": self.max_loglik_,
            "method": self.method,
            "n_patients": len(self.design_.patient_ids),
            "n_observations": len(self.design_.y),
            "converged": self.converged_,
            "degenerate": list(self.degenerate_),
            "drift_basis": self.drift_basis(),
        }

    def drift_basis(self) -> list:
        """Components whose kernels add drift columns to the residual design."""
        check_is_fitted(self, "coef_")
        labels = {tag[0] for tag in self.design_.drift_columns}
        return [f"{c.label}: {c.kernel.to_dict()}" for c in self.variance_spec_.components
                if c.label in labels]

    def mean_function(self) -> MeanFunction:
        check_is_fitted(self, "coef_")
        return MeanFunction(self.mean_spec_, self.coef_)

    def residual_loglik(self, sigma2=None) -> float:
        """REML log-likelihood at ``sigma2`` (default: the fitted values)."""
        check_is_fitted(self, "coef_")
        design = self.design_
        comps = self.variance_spec_.components
        sigma2 = self.sigma2_ if sigma2 is None else sigma2
        grams = [component_gram(c, k, design.coords(c.axis), design.blocks)
                 for c, k in zip(comps, self.anchored_kernels_)]
        return residual_loglik([sigma2[c.label] for c in comps], design.X_tilde, design.y,
                               grams, jitter=self.jitter_)

    # -- Bayes estimate of a shared trajectory --------------------------------

    def bayes_trajectory(self, label: str, s_grid) -> np.ndarray:
        """Empirical Bayes estimate of the shared process ``label`` on ``s_grid``.

        Universal-kriging form ``sigma2_k K_k(s_grid, S) P y``; a linear
        function of the observed outcomes.
        """
        check_is_fitted(self, "coef_")
        comp = self.variance_spec_.component(label)
        if not comp.shared:
            raise ValueError(f"component {label!r} is per-patient; Bayes trajectories "
                             "are defined for shared components only")
        s_grid = np.asarray(s_grid, dtype=float)
        coords = self.design_.coords(comp.axis)
        K = comp.kernel.gram(s_grid, coords)
        return self.sigma2_[label] * (K @ self._alpha)

    # -- prediction support ----------------------------------------------------

    def _new_rows(self, history, t):
        return Rows.from_record(history, t, patient=-1)

    def predictive_moments(self, history, t_grid, mode=None, chunk=64):
        """Mean and covariance of a new patient's outcomes for each candidate death time.

        ``mode="conditional"`` conditions on all training outcomes (universal
        kriging, coefficients integrated under a flat prior);
        ``mode="marginal"`` treats the new patient as independent given the
        fitted coefficients.
        """
        check_is_fitted(self, "coef_")
        mode = mode or ("conditional" if self.variance_spec_.has_shared else "marginal")
        t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
        comps = self.variance_spec_.components
        for c in comps:
            if not c.shared and c.kernel.is_generalized:
                raise ValueError("prediction needs proper per-patient kernels")
        k = len(history.appointments)
        G = len(t_grid)
        mus = np.empty((G, k))
        covs = np.empty((G, k, k))
        design = self.design_
        if mode == "marginal":
            for c in comps:
                if c.shared and c.kernel.is_generalized:
                    raise ValueError("marginal prediction is undefined with a generalized "
                                     "shared kernel; use mode='conditional'")
            for g, t in enumerate(t_grid):
                rows = self._new_rows(history, t)
                mus[g] = self.mean_spec_.design(rows) @ self.coef_
                covs[g] = self._own_cov(rows, comps)
            return mus, covs
        if mode != "conditional":
            raise ValueError("mode must be 'conditional' or 'marginal'")
        L = self._chol
        shared = [(c, kern) for c, kern in zip(comps, self.anchored_kernels_) if c.shared]
        for start in range(0, G, chunk):
            ts = t_grid[start:start + chunk]
            rows_list = [self._new_rows(history, t) for t in ts]
            cross = np.zeros((len(design.y), len(ts) * k))
            for j, rows in enumerate(rows_list):
                blk = slice(j * k, (j + 1) * k)
                for c, kern in shared:
                    coords_new = rows.s if c.axis == REVIVAL else rows.t
                    cross[:, blk] += self.sigma2_[c.label] * kern.gram(design.coords(c.axis),
                                                                       coords_new)
            W = linalg.solve_triangular(L, cross, lower=True)
            for j, rows in enumerate(rows_list):
                blk = slice(j * k, (j + 1) * k)
                Wj = W[:, blk]
                X2 = self._new_design(rows)
                R = X2 - Wj.T @ self._Xw
                S12 = cross[:, blk]
                mus[start + j] = X2 @ self.coef_full_ + S12.T @ self._alpha
                own = self._own_cov(rows, comps, anchored=True)
                covs[start + j] = own - Wj.T @ Wj + R @ self._info_inv @ R.T
        return mus, covs

    def _own_cov(self, rows, comps, anchored=False):
        k = len(rows)
        C = np.zeros((k, k))
        kernels = self.anchored_kernels_ if anchored else [c.kernel for c in comps]
        for c, kern in zip(comps, kernels):
            coords = rows.s if c.axis == REVIVAL else rows.t
            C += self.sigma2_[c.label] * kern.gram(coords)
        return 0.5 * (C + C.T)

    def _new_design(self, rows):
        X2 = self.mean_spec_.design(rows)
        extra = []
        comps = {c.label: c for c in self.variance_spec_.components}
        for label, j, block in self.design_.drift_columns:
            c = comps[label]
            coords = rows.s if c.axis == REVIVAL else rows.t
            extra.append(c.kernel.drift(coords)[:, j])
        return np.column_stack([X2] + extra) if extra else X2

    def as_process(self):
        """Known-parameter per-patient process at the fitted values (marginal mode)."""
        from .process import GaussianRevivalProcess
        check_is_fitted(self, "coef_")
        comps = []
        for c in self.variance_spec_.components:
            if c.shared:
                if c.kernel.is_generalized:
                    raise ValueError("a generalized shared component has no marginal process")
            comps.append((c.label, self.sigma2_[c.label], c.kernel))
        return GaussianRevivalProcess(self.mean_function(), tuple(comps))

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "mean": self.mean_spec_.to_config(),
            "variance": self.variance_spec_.to_config(),
            "method": self.method,
            **self.summary(),
        }


def fit_reml(dataset, mean_spec=None, variance_spec=None, **kwargs) -> RevivalGP:
    return RevivalGP(mean=mean_spec, variance=variance_spec, **kwargs).fit(dataset)


# ---------------------------------------------------------------------------
# revival-assumption tests and alignment comparison
# ---------------------------------------------------------------------------

@dataclass
class RevivalTestResult:
    wald: dict
    lr_statistic: float
    df: int
    p_value: float
    base: RevivalGP
    augmented: RevivalGP

    @property
    def wald_on_T(self):
        return self.wald.get(SurvivalTime().name)


def _nested(dataset, base_mean, augmented_mean):
    rows = _rows_for(dataset)[0]
    Xb = base_mean.resolve(rows).design(rows)
    Xa = augmented_mean.resolve(rows).design(rows)
    ra = np.linalg.matrix_rank(Xa)
    return np.linalg.matrix_rank(np.column_stack([Xa, Xb])) == ra and ra > np.linalg.matrix_rank(Xb)


def test_revival_assumption(dataset, base_mean, augmented_mean, variance_spec,
                            **fit_kwargs) -> RevivalTestResult:
    """Wald and likelihood-ratio tests of mean terms that involve ``T``.

    The Wald statistics come from the REML fit of the augmented model; the
    LR statistic compares profile likelihoods with the variance parameters
    re-estimated under each mean model.
    """
    dataset = check_dataset(dataset, uncensored=True)
    if not _nested(dataset, base_mean, augmented_mean):
        raise ValueError("augmented mean model does not strictly nest the base model")
    aug_reml = fit_reml(dataset, augmented_mean, variance_spec, **fit_kwargs)
    base_names = set(base_mean.resolve(_rows_for(dataset)[0]).column_names())
    wald = {n: float(b / se) for n, b, se, e in zip(aug_reml.coef_names_, aug_reml.coef_,
                                                    aug_reml.coef_se_, aug_reml.estimable_)
            if n not in base_names and e}
    ml_base = RevivalGP(mean=base_mean, variance=variance_spec, method="ml", **fit_kwargs).fit(dataset)
    ml_aug = RevivalGP(mean=augmented_mean, variance=variance_spec, method="ml", **fit_kwargs).fit(dataset)
    lr = max(2.0 * (ml_aug.max_loglik_ - ml_base.max_loglik_), 0.0)
    df = ml_aug.design_.X_tilde.shape[1] - ml_base.design_.X_tilde.shape[1]
    p = float(stats.chi2.sf(lr, df)) if df > 0 else np.nan
    return RevivalTestResult(wald, float(lr), int(df), p, ml_base, aug_reml)


test_revival_assumption.__test__ = False  # not a pytest test


@dataclass
class AlignmentComparison:
    loglik_reverse: float
    loglik_forward: float
    reverse: RevivalGP
    forward: RevivalGP

    @property
    def delta(self):
        return self.loglik_reverse - self.loglik_forward

    @property
    def comparable(self) -> bool:
        return likelihoods_comparable(self.reverse, self.forward)

    def __iter__(self):
        return iter((self.loglik_reverse, self.loglik_forward, self.delta))


def compare_alignment_models(dataset, variance_spec, mean_spec=None, **fit_kwargs
                             ) -> AlignmentComparison:
    """Fit with shared kernels on revival time and again on forward time."""
    if not variance_spec.has_shared:
        raise ValueError("alignment comparison needs a shared temporal component")
    rev = fit_reml(dataset, mean_spec, variance_spec.with_axis(REVIVAL), **fit_kwargs)
    fwd = fit_reml(dataset, mean_spec, variance_spec.with_axis(FORWARD), **fit_kwargs)
    return AlignmentComparison(rev.max_residual_loglik_, fwd.max_residual_loglik_, rev, fwd)


def likelihoods_comparable(a: RevivalGP, b: RevivalGP, tol=1e-9) -> bool:
    """Whether the maximized log-likelihoods of two fits may be differenced.

    Both fits must use the same outcomes and the same criterion. Residual
    likelihoods additionally need the augmented designs (mean plus drift
    columns) to span the same space, otherwise they are densities of different
    contrasts. Drift bases that move with a kernel parameter, such as the log
    warp offset, break this.
    """
    check_is_fitted(a, "coef_")
    check_is_fitted(b, "coef_")
    if a.method != b.method or a.design_.y.shape != b.design_.y.shape:
        return False
    if not np.array_equal(a.design_.y, b.design_.y):
        return False
    if a.method != "reml":
        return True
    Xa, Xb = a.design_.X_tilde, b.design_.X_tilde
    rank = lambda M: np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max()) * max(M.shape))
    ra, rb = rank(Xa), rank(Xb)
    return ra == rb == rank(np.column_stack([Xa, Xb]))
