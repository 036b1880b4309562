import numpy as np
import pytest
from scipy import linalg, stats
from scipy.linalg import null_space

from revival import kernels as kb
from revival.exceptions import DataError, RankDeficiencyError
from revival.gp import (RevivalGP, VarianceComponent, VarianceModelSpec, build_design,
                        compare_alignment_models, fit_reml, growth_curve_variance,
                        likelihoods_comparable,
                        test_revival_assumption as revival_assumption_test)
from revival.mean import (Custom, InverseLinear, Intercept, MeanFunction, MeanModelSpec,
                          RevivalTime, SurvivalTime, Treatment)
from revival.process import GaussianRevivalProcess
from revival.records import Dataset, HealthRecord
from revival.simulate import AppointmentScheme, SimConfig, simulate
from revival.survival import ExponentialSurvival

from conftest import make_record

INTERCEPT = MeanModelSpec((Intercept(),))
NOISE_ONLY = VarianceModelSpec((VarianceComponent("noise", kb.WhiteNoise()),))
FOUR = VarianceModelSpec((
    VarianceComponent("shared", kb.LinearSpline(), shared=True),
    VarianceComponent("patient_temporal", kb.Exponential(1.5)),
    VarianceComponent("patient", kb.Constant()),
    VarianceComponent("noise", kb.WhiteNoise()),
))


def scaled(dataset, a=1.0, b=0.0):
    return Dataset([HealthRecord(r.patient_id, r.appointments, tuple(a * y + b for y in r.outcomes),
                                 r.event, r.covariates, r.arm_schedule) for r in dataset])


def sim_data(n=40, seed=0, sigma2=(1.0, 0.5, 1.0, 0.3), shared_axis="revival", mean=(10.0, 5.0),
             survival_mean=4.0, interval=0.5, terms=None):
    terms = terms or (Intercept(), InverseLinear(1.0))
    proc = GaussianRevivalProcess(MeanFunction(MeanModelSpec(terms), mean), (
        ("patient_temporal", sigma2[1], kb.Exponential(1.5)),
        ("patient", sigma2[2], kb.Constant()),
        ("noise", sigma2[3], kb.WhiteNoise())))
    shared = (("shared", sigma2[0], kb.LinearSpline()),) if sigma2[0] > 0 else ()
    cfg = SimConfig(n, ExponentialSurvival.from_params(survival_mean), proc, shared=shared,
                    shared_axis=shared_axis, appointments=AppointmentScheme("keep", interval, np.inf),
                    seed=seed)
    return simulate(cfg)


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(5)
    recs = []
    for i in range(5):
        T = float(rng.uniform(2, 6))
        times = np.arange(0, T, 1.0)[:5]
        recs.append(make_record(i + 1, times, 10 + rng.normal(0, 2, times.size), T=T))
    return Dataset(recs)


# -- design -------------------------------------------------------------------

def test_design_intercept():
    d = Dataset([make_record(1, (0, 1), (1, 2), T=3), make_record(2, (0, 2), (3, 4), T=5)])
    des = build_design(d, INTERCEPT)
    assert des.X.shape == (4, 1) and np.all(des.X == 1)
    assert sorted(des.y) == [1, 2, 3, 4]


def test_design_treatment_null_before_randomization():
    d = Dataset([make_record(1, (0, 1, 2), (1, 2, 3), T=3, arm="a"),
                 make_record(2, (0, 1), (1, 2), T=2.5, arm="b")])
    des = build_design(d, MeanModelSpec((Intercept(), Treatment())))
    assert des.column_names == ["intercept", "treatment[a]", "treatment[b]"]
    rows = des.rows
    pre = rows.t == 0
    assert np.all(des.X[pre, 1:] == 0)
    assert set(np.asarray(rows.arms)[pre]) == {"null"}


def test_design_survival_time_column():
    d = Dataset([make_record(1, (0, 1), (1, 2), T=3), make_record(2, (0, 2), (3, 4), T=5)])
    des = build_design(d, MeanModelSpec((Intercept(), SurvivalTime())))
    np.testing.assert_array_equal(des.X[:, 1], des.rows.T)
    assert set(des.X[:, 1]) == {3.0, 5.0}


def test_design_rank_deficiency():
    d = Dataset([make_record(1, (0, 1), (1, 2), T=3), make_record(2, (0, 2), (3, 4), T=5)])
    spec = MeanModelSpec((Intercept(), Custom("ones", lambda r: np.ones(len(r)))))
    with pytest.raises(RankDeficiencyError):
        RevivalGP(mean=spec, variance=NOISE_ONLY).fit(d)


def test_fit_excludes_censored():
    d = Dataset([make_record(1, (0, 1), (1, 2), c=3), make_record(2, (0, 1, 2), (3, 4, 6), T=4)])
    m = RevivalGP(variance=NOISE_ONLY).fit(d)
    assert m.design_.patient_ids == [2] and len(m.design_.y) == 3
    with pytest.raises(DataError):
        RevivalGP(variance=NOISE_ONLY).fit(d.censored())


# -- residual likelihood ---------------------------------------------------------

def contrast_oracle(dataset, sigma2, mean_columns):
    """log density of orthonormal contrasts, covariance assembled from raw kernels."""
    s, y, pid, X = [], [], [], []
    for r in dataset:
        for t, v in zip(r.appointments, r.outcomes):
            s.append(r.T - t)
            y.append(v)
            pid.append(r.patient_id)
            X.append(mean_columns(r.T - t))
    s, y, pid, X = map(np.asarray, (s, y, pid, X))
    same = pid[:, None] == pid[None, :]
    D = np.abs(s[:, None] - s[None, :])
    S = (sigma2["shared"] * -D + sigma2["patient_temporal"] * same * np.exp(-D / 1.5)
         + sigma2["patient"] * same + sigma2["noise"] * np.eye(s.size))
    Q = null_space(X.T)
    return stats.multivariate_normal(np.zeros(Q.shape[1]), Q.T @ S @ Q).logpdf(Q.T @ y)


@pytest.mark.parametrize("sig", [dict(shared=0.7, patient_temporal=1.3, patient=2.0, noise=0.4),
                                 dict(shared=2.0, patient_temporal=0.1, patient=0.5, noise=1.0)])
def test_residual_loglik_matches_contrast_oracle(toy, sig):
    assert toy.n_observations <= 30
    mean = MeanModelSpec((Intercept(), InverseLinear(1.0)))
    m = RevivalGP(mean=mean, variance=FOUR, sigma2=sig, jitter=0.0).fit(toy)
    oracle = contrast_oracle(toy, sig, lambda s: [1.0, s / (1.0 + s)])
    assert abs(m.max_residual_loglik_ - oracle) < 1e-8
    assert abs(m.residual_loglik() - oracle) < 1e-8
    # default jitter perturbs the value far below optimizer tolerance
    m2 = RevivalGP(mean=mean, variance=FOUR, sigma2=sig).fit(toy)
    assert abs(m2.max_residual_loglik_ - oracle) < 1e-6


def test_white_noise_reml_is_sample_variance(rng):
    recs = [make_record(i, (0,), (float(v),), T=1.0) for i, v in enumerate(rng.normal(3, 2, 40))]
    d = Dataset(recs)
    m = RevivalGP(mean=INTERCEPT, variance=NOISE_ONLY).fit(d)
    y = np.array([r.outcomes[0] for r in d])
    assert abs(m.sigma2_["noise"] - y.var(ddof=1)) < 1e-10 * y.var(ddof=1)
    assert m.coef_[0] == pytest.approx(y.mean(), abs=1e-12)


@pytest.fixture(scope="module")
def sim_small():
    return sim_data(n=25, seed=3, interval=1.0)


@pytest.fixture(scope="module")
def fit_small(sim_small):
    return RevivalGP(mean=MeanModelSpec((Intercept(), InverseLinear(1.0))), variance=FOUR).fit(sim_small)


def test_scale_equivariance(sim_small, fit_small):
    doubled = RevivalGP(mean=MeanModelSpec((Intercept(), InverseLinear(1.0))),
                        variance=FOUR).fit(scaled(sim_small, 2.0))
    for lab, v in fit_small.sigma2_.items():
        assert doubled.sigma2_[lab] == pytest.approx(4 * v, rel=1e-4, abs=1e-8)


def test_reparametrized_mean_invariance(sim_small):
    var = VarianceModelSpec(FOUR.components[1:])
    base = RevivalGP(mean=MeanModelSpec((Intercept(), RevivalTime())), variance=var).fit(sim_small)
    A = np.array([[1.0, 2.0], [1.0, -3.0]])
    col = Custom("mixed", lambda r: np.column_stack([np.ones(len(r)), r.s]) @ A, width=2)
    alt = RevivalGP(mean=MeanModelSpec((col,)), variance=var).fit(sim_small)
    for lab, v in base.sigma2_.items():
        assert alt.sigma2_[lab] == pytest.approx(v, rel=1e-6, abs=1e-9)
    assert alt.max_residual_loglik_ == pytest.approx(base.max_residual_loglik_, abs=1e-6)
    np.testing.assert_allclose(A @ alt.coef_, base.coef_, rtol=1e-5)


def test_gls_orthogonality(fit_small):
    des = fit_small.design_
    r = des.y - des.X_tilde @ fit_small.coef_full_
    score = des.X_tilde.T @ linalg.solve(fit_small._sigma, r, assume_a="pos")
    assert np.max(np.abs(score)) < 1e-8 * np.linalg.norm(des.y)


def test_fit_is_deterministic(sim_small, fit_small):
    again = RevivalGP(mean=MeanModelSpec((Intercept(), InverseLinear(1.0))), variance=FOUR).fit(sim_small)
    assert again.sigma2_ == fit_small.sigma2_
    np.testing.assert_array_equal(again.coef_, fit_small.coef_)


def test_fit_reports_maximum(fit_small):
    best = fit_small.max_residual_loglik_
    assert fit_small.converged_
    for lab in fit_small.sigma2_:
        for f in (0.9, 1.1):
            alt = dict(fit_small.sigma2_)
            alt[lab] *= f
            assert fit_small.residual_loglik(alt) <= best + 1e-9


def test_intercept_not_estimable_with_linear_spline(fit_small):
    est = dict(zip(fit_small.coef_names_, fit_small.estimable_))
    assert not est["intercept"] and est["inverse_linear[1]"]


def test_estimated_range(sim_small):
    m = RevivalGP(mean=MeanModelSpec((Intercept(), InverseLinear(1.0))),
                  variance=growth_curve_variance(1.5, estimate_range=True)).fit(sim_small)
    assert 0.05 < m.ranges_["patient_temporal"] < 100
    assert m.max_residual_loglik_ >= RevivalGP(
        mean=MeanModelSpec((Intercept(), InverseLinear(1.0))), variance=FOUR
    ).fit(sim_small).max_residual_loglik_ - 1e-6


# -- Bayes trajectories -----------------------------------------------------------

def test_bayes_trajectory_zero_variance(sim_small):
    sig = dict(shared=0.0, patient_temporal=0.5, patient=1.0, noise=0.3)
    m = RevivalGP(variance=FOUR, sigma2=sig).fit(sim_small)
    np.testing.assert_array_equal(m.bayes_trajectory("shared", np.linspace(0, 5, 11)), 0.0)


def test_bayes_trajectory_shift_invariant(sim_small):
    sig = dict(shared=1.0, patient_temporal=0.5, patient=1.0, noise=0.3)
    grid = np.linspace(0.1, 8, 40)
    a = RevivalGP(variance=FOUR, sigma2=sig).fit(sim_small).bayes_trajectory("shared", grid)
    b = RevivalGP(variance=FOUR, sigma2=sig).fit(scaled(sim_small, 1.0, 37.0)).bayes_trajectory(
        "shared", grid)
    np.testing.assert_allclose(a, b, atol=1e-8)


@pytest.mark.parametrize("kernel,order", [(kb.LinearSpline(), 2), (kb.CubicSpline(), 4)])
def test_bayes_trajectory_piecewise_degree(rng, kernel, order):
    """Between data points a linear (cubic) spline has vanishing 2nd (4th) differences."""
    recs = [make_record(i, (0.0,), (float(rng.normal()),), T=float(T))
            for i, T in enumerate([0.5, 1.7, 3.1, 4.4, 6.0])]
    spec = VarianceModelSpec((VarianceComponent("shared", kernel, shared=True),
                              VarianceComponent("noise", kb.WhiteNoise())))
    m = RevivalGP(variance=spec, sigma2=dict(shared=1.0, noise=0.1)).fit(Dataset(recs))
    knots = np.array([0.5, 1.7, 3.1, 4.4, 6.0])
    h = 1e-2
    for a, b in zip(knots[:-1], knots[1:]):
        g = np.linspace(a + h, b - h, 30)
        d = np.diff(m.bayes_trajectory("shared", g), n=order)
        assert np.max(np.abs(d)) < 1e-8
    g = np.linspace(1.7 - 0.2, 1.7 + 0.2, 41)
    assert np.max(np.abs(np.diff(m.bayes_trajectory("shared", g), n=order))) > 1e-6


def test_bayes_trajectory_interpolates_single_patient(rng):
    times = np.arange(0, 6.0)
    rec = make_record(1, times, 5 + np.cumsum(rng.normal(size=6)), T=6.5)
    spec = VarianceModelSpec((VarianceComponent("shared", kb.LinearSpline(), shared=True),
                              VarianceComponent("noise", kb.WhiteNoise())))
    m = RevivalGP(variance=spec, sigma2=dict(shared=1.0, noise=1e-9)).fit(Dataset([rec]))
    des = m.design_
    resid = des.y - m.bayes_trajectory("shared", des.s)
    # the remainder lies in the drift span (constants)
    assert np.ptp(resid) < 1e-6


def test_bayes_trajectory_rejects_per_patient(fit_small):
    with pytest.raises(ValueError):
        fit_small.bayes_trajectory("patient", [1.0])


# -- revival assumption and alignment ---------------------------------------------

SMALL_VAR = VarianceModelSpec((VarianceComponent("patient", kb.Constant()),
                               VarianceComponent("noise", kb.WhiteNoise())))
BASE = MeanModelSpec((Intercept(), InverseLinear(1.0)))
AUG = MeanModelSpec((Intercept(), InverseLinear(1.0), SurvivalTime()))


def test_revival_assumption_null_calibration():
    """Under the revival assumption the Wald z on T stays below 3 in >= 99% of replications."""
    zs = []
    for seed in range(100):
        d = sim_data(n=15, seed=seed, sigma2=(0.0, 0.0, 1.0, 0.5), interval=1.0)
        m = RevivalGP(mean=AUG, variance=SMALL_VAR).fit(d)
        zs.append(m.coef_[2] / m.coef_se_[2])
    assert np.mean(np.abs(zs) < 3) >= 0.99


def test_revival_assumption_detects_T_effect():
    terms = (Intercept(), InverseLinear(1.0), SurvivalTime())
    d = sim_data(n=40, seed=1, sigma2=(0.0, 0.0, 1.0, 0.5), mean=(10.0, 5.0, 1.5), terms=terms,
                 interval=1.0)
    res = revival_assumption_test(d, BASE, AUG, SMALL_VAR)
    assert abs(res.wald_on_T) > 3
    assert res.df == 1 and res.p_value < 1e-3
    null = revival_assumption_test(sim_data(n=40, seed=1, sigma2=(0.0, 0.0, 1.0, 0.5),
                                            interval=1.0), BASE, AUG, SMALL_VAR)
    assert null.lr_statistic < res.lr_statistic


def test_revival_assumption_requires_nesting():
    d = sim_data(n=10, seed=0, sigma2=(0.0, 0.0, 1.0, 0.5))
    with pytest.raises(ValueError):
        revival_assumption_test(d, AUG, BASE, SMALL_VAR)


def test_alignment_prefers_true_axis():
    spec = VarianceModelSpec((VarianceComponent("shared", kb.LinearSpline(), shared=True),
                              VarianceComponent("patient", kb.Constant()),
                              VarianceComponent("noise", kb.WhiteNoise())))
    deltas = []
    for seed in range(20):
        d = sim_data(n=30, seed=seed, sigma2=(2.0, 0.0, 1.0, 0.3), interval=1.0)
        deltas.append(compare_alignment_models(d, spec, BASE).delta)
    assert np.mean(np.array(deltas) > 0) >= 0.95


def test_alignment_without_shared_signal():
    spec = VarianceModelSpec((VarianceComponent("shared", kb.LinearSpline(), shared=True),
                              VarianceComponent("patient", kb.Constant()),
                              VarianceComponent("noise", kb.WhiteNoise())))
    d = sim_data(n=30, seed=4, sigma2=(0.0, 0.0, 1.0, 0.3), interval=1.0)
    cmp = compare_alignment_models(d, spec, BASE)
    assert abs(cmp.delta) < 3
    assert cmp.reverse.sigma2_["shared"] < 0.05 and cmp.forward.sigma2_["shared"] < 0.05
    rev, fwd, delta = cmp
    assert delta == rev - fwd


def test_alignment_requires_shared_component(sim_small):
    with pytest.raises(ValueError):
        compare_alignment_models(sim_small, SMALL_VAR)


def test_fit_reml_wrapper_and_summary(sim_small):
    m = fit_reml(sim_small, BASE, SMALL_VAR)
    s = m.summary()
    assert set(s["sigma2"]) == {"patient", "noise"}
    assert s["n_observations"] == sim_small.n_observations
    assert m.to_dict()["variance"][0]["label"] == "patient"


def _warped(delta):
    return VarianceModelSpec((VarianceComponent("shared", kb.LogWarp(kb.CubicSpline(), delta),
                                                shared=True),
                              VarianceComponent("patient", kb.Constant()),
                              VarianceComponent("noise", kb.WhiteNoise())))


def test_likelihoods_comparable_same_drift(sim_small):
    a = fit_reml(sim_small, BASE, SMALL_VAR)
    b = fit_reml(sim_small, BASE, VarianceModelSpec(SMALL_VAR.components[1:]))
    assert likelihoods_comparable(a, b)
    assert a.summary()["drift_basis"] == []


def test_log_warp_offset_breaks_comparability(sim_small):
    a = fit_reml(sim_small, BASE, _warped(0.5))
    b = fit_reml(sim_small, BASE, _warped(2.0))
    assert not likelihoods_comparable(a, b)
    assert likelihoods_comparable(a, fit_reml(sim_small, BASE, _warped(0.5)))
    assert a.summary()["drift_basis"][0].startswith("shared:")


def test_different_data_or_method_not_comparable(sim_small):
    a = fit_reml(sim_small, BASE, SMALL_VAR)
    assert not likelihoods_comparable(a, fit_reml(scaled(sim_small, 2.0), BASE, SMALL_VAR))
    assert not likelihoods_comparable(a, fit_reml(sim_small, BASE, SMALL_VAR, method="ml"))
