import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qgbeta.integrator import IntegratorConfig, run_ensemble
from qgbeta.lattice import ModelParams, NoiseSpec, SpectralState
from qgbeta.resonance import strongly_resonant_L_values
from qgbeta.statistics import (
    CertificateError,
    DistanceReport,
    EmpiricalActionLaw,
    StudyResult,
    StudyRow,
    action_law_distance,
    beta_convergence_study,
    exp_moment_estimate,
    marginal_w1,
    mode_weights,
    stationary_action_law,
)

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30)


def test_w1_examples():
    assert marginal_w1([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == 0.0
    assert marginal_w1([0, 0], [1, 1]) == 1.0
    x = np.random.default_rng(0).standard_normal(50)
    assert marginal_w1(x, x + 2.5) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        marginal_w1([], [1.0])


@given(samples, samples)
def test_w1_matches_scipy(a, b):
    assert marginal_w1(a, b) == pytest.approx(stats.wasserstein_distance(a, b), abs=1e-9)


@settings(max_examples=50)
@given(st.integers(1, 20).flatmap(lambda n: st.tuples(*[st.lists(
    st.floats(-50, 50, allow_nan=False), min_size=n, max_size=n)] * 3)))
def test_w1_is_a_metric(abc):
    a, b, c = abc
    ab, bc, ac = marginal_w1(a, b), marginal_w1(b, c), marginal_w1(a, c)
    assert ab >= 0 and marginal_w1(a, a) == 0
    assert ab == pytest.approx(marginal_w1(b, a))
    assert ac <= ab + bc + 1e-9


def _law(actions, modes=((1, 0), (0, 1)), L=1.0, pooled=False):
    return EmpiricalActionLaw(np.asarray(actions), modes, mode_weights(modes, L), pooled=pooled)


def test_weights():
    w = mode_weights([(1, 0), (1, 1), (2, 0)], 1.0, gamma_prime=0.5)
    raw = np.array([2.0, 3.0, 5.0]) ** 1.5
    np.testing.assert_allclose(w, raw / raw.sum())


def test_law_validation():
    with pytest.raises(ValueError):
        _law(-np.ones((3, 1, 2)))
    with pytest.raises(ValueError):
        _law(np.ones((3, 1, 3)))
    with pytest.raises(ValueError):
        EmpiricalActionLaw(np.ones((3, 1, 2)), ((1, 0), (0, 1)), np.array([0.5, 0.6]))


def test_distance_to_itself_is_zero():
    rng = np.random.default_rng(1)
    A = _law(rng.exponential(size=(50, 2, 2)))
    rep = action_law_distance(A, A, n_boot=50, paired=True)
    assert rep.aggregate == 0.0 and rep.bootstrap_ci == (0.0, 0.0)
    assert action_law_distance(A, A, n_boot=0).aggregate == 0.0


def test_distance_rejects_mismatch():
    rng = np.random.default_rng(1)
    A = _law(rng.exponential(size=(10, 1, 2)))
    B = _law(rng.exponential(size=(10, 1, 2)), modes=((1, 0), (1, 1)))
    with pytest.raises(ValueError):
        action_law_distance(A, B)
    C = _law(rng.exponential(size=(10, 2, 2)))
    with pytest.raises(ValueError):
        action_law_distance(A, C)
    with pytest.raises(ValueError):
        action_law_distance(A, _law(rng.exponential(size=(9, 1, 2))), paired=True)


def test_aggregate_is_weighted_sum():
    rng = np.random.default_rng(2)
    A = _law(rng.exponential(size=(40, 1, 2)))
    B = _law(2 * rng.exponential(size=(40, 1, 2)))
    rep = action_law_distance(A, B, n_boot=100)
    total = sum(rep.weights[k] * w for k, w in rep.per_mode_w1.items())
    assert rep.aggregate == pytest.approx(total, rel=1e-14)
    assert rep.bootstrap_ci[0] <= rep.aggregate <= rep.bootstrap_ci[1]
    assert rep.to_json()["n_boot"] == 100


def test_bootstrap_is_deterministic():
    rng = np.random.default_rng(3)
    A = _law(rng.exponential(size=(30, 1, 2)))
    B = _law(rng.exponential(size=(30, 1, 2)))
    assert action_law_distance(A, B, 200, seed=5) == action_law_distance(A, B, 200, seed=5)


def test_unequal_sizes():
    rng = np.random.default_rng(4)
    A = _law(rng.exponential(size=(30, 1, 2)))
    B = _law(rng.exponential(size=(45, 1, 2)))
    rep = action_law_distance(A, B, n_boot=20)
    for i, k in enumerate(A.modes):
        assert rep.per_mode_w1[k] == pytest.approx(
            stats.wasserstein_distance(A.actions[:, 0, i], B.actions[:, 0, i]))


def _ou_ensemble(kappa, n_paths, seed=0, t_final=4.0):
    p = ModelParams(L=1.0, K=0.0, rho=0.0, kappa=kappa, cutoff=2, noise=NoiseSpec(c=1.0, q=1.0))
    cfg = IntegratorConfig(dt=2e-3, t_final=t_final, record_times=(t_final,), seed=seed)
    return p, run_ensemble(None, p, cfg, n_paths, system="effective")


def test_ou_exponential_law_distance():
    p1, e1 = _ou_ensemble(1.0, 2000, seed=1)
    p2, e2 = _ou_ensemble(0.01, 2000, seed=2)
    A = EmpiricalActionLaw.from_ensemble(e1)
    B = EmpiricalActionLaw.from_ensemble(e2)
    rep = action_law_distance(A, B, n_boot=200)
    s1, s2 = p1.b**2 / p1.gamma, p2.b**2 / p2.gamma
    for i, k in enumerate(p1.lattice.modes):
        exact = abs(s1[i] - s2[i]) / 2
        # exponential laws: sd of the W1 estimate is about the larger mean / sqrt(n)
        tol = 4 * max(s1[i], s2[i]) / 2 / math.sqrt(2000) * math.sqrt(2)
        assert abs(rep.per_mode_w1[k] - exact) < tol, (k, rep.per_mode_w1[k], exact)
    analytic = sum(rep.weights[k] * abs(s1[i] - s2[i]) / 2 for i, k in enumerate(A.modes))
    assert abs(rep.aggregate - analytic) < rep.ci_width


def test_half_sample_within_ci_width():
    _, e1 = _ou_ensemble(1.0, 800, seed=1)
    _, e2 = _ou_ensemble(0.01, 800, seed=1)
    A, B = EmpiricalActionLaw.from_ensemble(e1), EmpiricalActionLaw.from_ensemble(e2)
    full = action_law_distance(A, B, n_boot=300, paired=True)
    half = action_law_distance(
        EmpiricalActionLaw(A.actions[:400], A.modes, A.weights, A.times),
        EmpiricalActionLaw(B.actions[:400], B.modes, B.weights, B.times), n_boot=0)
    assert abs(half.aggregate - full.aggregate) < full.ci_width


def test_from_ensemble_tracks_modes_within_radius():
    p = ModelParams(L=1.0, cutoff=5, beta=10.0)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.01, record_times=(0.0, 0.01))
    ens = run_ensemble(None, p, cfg, 2)
    law = EmpiricalActionLaw.from_ensemble(ens, radius=2.0)
    assert all(k.norm_sq(1.0) <= 4 for k in law.modes)
    assert len(law.modes) == sum(1 for k in p.lattice.modes if k.norm_sq(1.0) <= 4)
    assert law.actions.shape == (2, 1, len(law.modes))
    assert law.times.tolist() == [0.01]


def test_stationary_ou_mean_action():
    p = ModelParams(L=1.0, K=0.0, rho=0.0, kappa=1.0, cutoff=2.5)
    cfg = IntegratorConfig.uniform(12.0, 0.1, dt=2e-3, seed=5)
    law = stationary_action_law(p, cfg, burn_in=4.0, n_paths=200, system="full")
    assert law.pooled
    target = 0.5 * p.b**2 / p.gamma
    z = np.abs(law.mean_action() - target) / law.mean_action_se()
    assert np.all(z < 3), z


def test_stationary_checks():
    p = ModelParams(cutoff=2)
    cfg = IntegratorConfig.uniform(1.0, 0.1, dt=1e-2)
    with pytest.raises(ValueError):
        stationary_action_law(p, cfg, burn_in=1.0, n_paths=2)
    with pytest.raises(ValueError):
        stationary_action_law(p, cfg, burn_in=0.5, n_paths=2, stride=0)
    with pytest.raises(ValueError):
        stationary_action_law(p, cfg, burn_in=0.95, n_paths=1, stride=10)


@pytest.fixture(scope="module")
def effective_runs():
    p = ModelParams(L=1.0, K=0.0, rho=1.0, kappa=1.0, cutoff=3, noise=NoiseSpec(c=3.0))
    cfg = IntegratorConfig.uniform(20.0, 0.1, dt=2e-3, seed=7)
    lat = p.lattice
    cold = run_ensemble(None, p, cfg, 200, system="effective")
    hot = SpectralState.random(lat, np.random.default_rng(0), scale=2.0)
    # independent noise: with shared increments the two ensembles synchronise path by path
    warm = run_ensemble(hot, p, cfg.replace(seed=8), 200, system="effective")
    return p, cfg, cold, warm


def test_stationary_law_forgets_initial_condition(effective_runs):
    p, cfg, cold, warm = effective_runs
    A = stationary_action_law(p, cfg, 10.0, 200, ensemble=cold)
    B = stationary_action_law(p, cfg, 10.0, 200, ensemble=warm)
    rep = action_law_distance(A, B, n_boot=300)
    assert rep.aggregate < 2 * rep.ci_width


def test_stationary_burn_in_doubling(effective_runs):
    p, cfg, cold, _ = effective_runs
    a = stationary_action_law(p, cfg, 5.0, 200, ensemble=cold)
    b = stationary_action_law(p, cfg, 10.0, 200, ensemble=cold)
    tot_a, tot_b = a.actions.sum(axis=2).mean(axis=1), b.actions.sum(axis=2).mean(axis=1)
    se = tot_b.std(ddof=1) / math.sqrt(len(tot_b))
    assert abs(tot_a.mean() - tot_b.mean()) < se


def test_exp_moment_of_zero_state():
    p = ModelParams(cutoff=2, noise=NoiseSpec(overrides={}), beta=10.0)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.01, record_times=(0.0, 0.01))
    ens = run_ensemble(None, p, cfg, 5)
    assert exp_moment_estimate(ens, 1.0, 0.3, t=0.0) == 1.0
    with pytest.raises(ValueError):
        exp_moment_estimate(ens, 1.0, -1.0)


def test_exp_moment_gaussian_oracle():
    p, ens = _ou_ensemble(1.0, 3000, seed=3)
    eps, power = 0.5, 1.0
    sig2 = p.b**2 / p.gamma
    # the norm counts both halves: t_k = 2 eps |k_L|^(2p) per stored mode
    tk = 2 * eps * p.lattice.kL2**power
    assert np.all(tk * sig2 < 1)
    exact = float(np.prod(1.0 / (1.0 - tk * sig2)))
    est, se = exp_moment_estimate(ens, power, eps, return_se=True)
    assert abs(est - exact) < 3 * se


def test_exp_moment_overflow_guard():
    p = ModelParams(cutoff=2, beta=10.0)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.001, record_times=(0.001,))
    ens = run_ensemble(SpectralState.random(p.lattice, np.random.default_rng(0), scale=10.0),
                       p, cfg, 3)
    with pytest.raises(OverflowError):
        exp_moment_estimate(ens, 2.0, 1e3)


def test_exp_moment_uniform_in_beta():
    p = ModelParams(L=1.0, K=0.0, rho=1.0, cutoff=3, noise=NoiseSpec(c=2.0))
    cfg = IntegratorConfig(dt=1e-3, t_final=2.0, record_times=(2.0,), seed=1)
    ests = []
    for beta in (10.0, 1000.0):
        ens = run_ensemble(None, p.replace(beta=beta), cfg, 300, system="interaction")
        ests.append(exp_moment_estimate(ens, 1.0, 0.2, return_se=True))
    (m1, s1), (m2, s2) = ests
    assert abs(m1 - m2) < 3 * math.hypot(s1, s2)


def _report(agg, half):
    return DistanceReport({}, agg, (agg - half, agg + half))


def test_study_verdict_logic():
    rows = [StudyRow(10.0, 1.0, _report(1.0, 0.1)), StudyRow(100.0, 1.0, _report(0.5, 0.1)),
            StudyRow(1000.0, 1.0, _report(0.1, 0.05)), StudyRow(1000.0, 0.1, _report(0.2, 0.05))]
    res = StudyResult(rows, None, null=_report(0.01, 0.02))
    assert res.monotone_decreasing(1.0)
    assert res.kappa_spread(1000.0) == pytest.approx(2.0)
    assert res.null_ok()
    v = res.verdicts()
    assert v["monotone_decreasing"]["1.0"] and v["null_calibration"]["ok"]
    rows[1] = StudyRow(100.0, 1.0, _report(0.95, 0.1))
    assert not StudyResult(rows, None).monotone_decreasing(1.0)
    assert StudyResult(rows, None).null_ok() is None


def test_study_refuses_resonant_parameters():
    L = strongly_resonant_L_values((1, 1), (1, -2), 0)[0]
    p = ModelParams(L=L, K=0.0, cutoff=3, resonance_tol=1e-9)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.01, record_times=(0.0, 0.01))
    with pytest.raises(CertificateError):
        beta_convergence_study(p, [10.0], cfg, 2, n_boot=10)
    res = beta_convergence_study(p, [10.0], cfg, 2, n_boot=10, override_resonant=True)
    assert res.exploratory and res.verdicts()["exploratory"]


def test_study_small_run_is_deterministic():
    p = ModelParams(L=1.0, K=0.0, cutoff=2.5, noise=NoiseSpec(c=3.0))
    cfg = IntegratorConfig(dt=1e-3, t_final=0.2, record_times=(0.0, 0.2), seed=3)
    kw = dict(kappas=[0.1, 1.0], null_seed=9, n_boot=50)
    a = beta_convergence_study(p, [10.0, 100.0], cfg, 20, **kw)
    b = beta_convergence_study(p, [10.0, 100.0], cfg, 20, **kw)
    assert [r.as_dict() for r in a.rows] == [r.as_dict() for r in b.rows]
    assert [(r.beta, r.kappa) for r in a.rows] == [(10.0, 1.0), (100.0, 1.0), (100.0, 0.1)]
    assert a.null is not None and not a.exploratory
    with pytest.raises(ValueError):
        beta_convergence_study(p, [100.0, 10.0], cfg, 2)
    with pytest.raises(ValueError):
        beta_convergence_study(p, [10.0], cfg, 2, coupling="weird")
