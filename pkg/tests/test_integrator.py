import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgbeta.integrator import (
    IntegratorConfig,
    NumericalBlowUp,
    StiffnessError,
    WienerIncrementStream,
    _stepper,
    manifest,
    oscillatory_integral,
    oscillatory_integral_sup,
    run_ensemble,
    run_single,
    step_effective,
    step_full_v,
    step_interaction,
)
from qgbeta.lattice import ModelParams, SpectralState, sobolev_norm
from qgbeta.nonlinearity import full_nonlinearity, oscillatory_part, resonant_part


def _params(**kw):
    base = dict(L=1.0, K=0.0, beta=50.0, rho=1.0, kappa=1.0, cutoff=3)
    base.update(kw)
    return ModelParams(**base)


def _state(p, seed=0, scale=1.0):
    return SpectralState.random(p.lattice, np.random.default_rng(seed), scale=scale)


def test_increment_stream_statistics():
    s = WienerIncrementStream(seed=1, dt=0.01, n_modes=5)
    z = s.draw(40000)
    assert z.shape == (40000, 5)
    assert np.var(z.real) == pytest.approx(0.01, rel=0.03)
    assert np.var(z.imag) == pytest.approx(0.01, rel=0.03)
    assert abs(np.mean(z.real * z.imag)) < 3e-4
    assert np.mean(np.abs(z) ** 2) == pytest.approx(0.02, rel=0.03)


def test_increment_stream_is_blocking_invariant():
    a = WienerIncrementStream(3, 0.1, 4, path=7)
    b = WienerIncrementStream(3, 0.1, 4, path=7)
    np.testing.assert_array_equal(np.concatenate([a.draw(3), a.draw(2)]), b.draw(5))
    c = WienerIncrementStream(3, 0.1, 4, path=8)
    assert not np.array_equal(c.draw(5), WienerIncrementStream(3, 0.1, 4, path=7).draw(5))


def test_linear_step_is_exact():
    p = _params(rho=0.0, beta=1e4)
    v = _state(p, 1)
    dt = 0.01
    out = step_full_v(v, 0.3, dt, None, p)
    expected = np.exp(-(1j * p.beta * p.lam + p.gamma) * dt) * v.amplitudes
    np.testing.assert_allclose(out.amplitudes, expected, rtol=1e-12)


@pytest.mark.parametrize("beta", [0.0, 10.0, 1e3, 1e5])
def test_rotation_is_an_isometry(beta):
    # without forcing and nonlinearity, |v_k| decays at rate gamma_k whatever beta is
    p = _params(rho=0.0, beta=beta)
    v = _state(p, 2)
    w = v
    for i in range(20):
        w = step_full_v(w, i * 0.01, 0.01, None, p)
    np.testing.assert_allclose(np.abs(w.amplitudes),
                               np.exp(-p.gamma * 0.2) * np.abs(v.amplitudes), rtol=1e-12)


def test_em_refuses_stiff_rotation():
    p = _params(beta=1000.0)
    v = _state(p)
    with pytest.raises(StiffnessError):
        step_full_v(v, 0.0, 1e-3, None, p, scheme="euler_maruyama")
    # interaction and effective systems carry no rotation
    step_interaction(v, 0.0, 1e-3, None, p, scheme="euler_maruyama")
    step_effective(v, 1e-3, None, p, scheme="euler_maruyama")
    step_full_v(v, 0.0, 1e-5, None, p, scheme="euler_maruyama")


def test_full_system_rejects_zero_viscosity():
    p = _params(kappa=0.0)
    with pytest.raises(ValueError):
        step_full_v(_state(p), 0.0, 1e-3, None, p)
    step_effective(_state(p), 1e-3, None, p)


def test_bad_scheme_and_dt():
    p = _params()
    with pytest.raises(ValueError):
        step_full_v(_state(p), 0.0, 1e-3, None, p, scheme="rk4")
    with pytest.raises(ValueError):
        step_full_v(_state(p), 0.0, -1e-3, None, p)


def test_full_and_interaction_agree_with_rotated_increments():
    p = _params(beta=300.0)
    dt, n = 2e-3, 200
    v = _state(p, 3)
    a = v
    rng = np.random.default_rng(5)
    for i in range(n):
        t = i * dt
        dB = math.sqrt(dt) * (rng.standard_normal(p.lattice.size)
                              + 1j * rng.standard_normal(p.lattice.size))
        a = step_interaction(a, t, dt, dB, p)
        v = step_full_v(v, t, dt, np.exp(-1j * p.beta * p.lam * (t + dt)) * dB, p)
    T = n * dt
    np.testing.assert_allclose(np.exp(1j * p.beta * p.lam * T) * v.amplitudes, a.amplitudes,
                               atol=1e-11)
    np.testing.assert_allclose(np.abs(v.amplitudes) ** 2, np.abs(a.amplitudes) ** 2, atol=1e-11)


def test_zero_beta_drifts_coincide():
    p = _params(beta=0.0)
    v = _state(p, 4)
    np.testing.assert_allclose((resonant_part(v, p) + oscillatory_part(v, 1.7, p)).amplitudes,
                               full_nonlinearity(v, p).amplitudes, atol=1e-13)
    dB = 0.01 * (np.arange(p.lattice.size) + 1j)
    full = step_full_v(v, 0.0, 1e-3, dB, p, scheme="euler_maruyama")
    inter = step_interaction(v, 0.0, 1e-3, dB, p, scheme="euler_maruyama")
    np.testing.assert_allclose(full.amplitudes, inter.amplitudes, atol=1e-14)


def test_effective_step_matches_formula():
    p = _params()
    v = _state(p, 6)
    dt = 1e-2
    from qgbeta.effective import effective_rhs

    R = effective_rhs(v, p).amplitudes
    out = step_effective(v, dt, None, p)
    np.testing.assert_allclose(out.amplitudes, np.exp(-p.gamma * dt) * (v.amplitudes + dt * R))


def _strong_error(p, system, dts, T, n_paths, seed):
    """Mean endpoint error against a fine reference on the same Brownian paths."""
    m = p.lattice.size
    fine = min(dts) / 8
    n_fine = int(round(T / fine))
    rng = np.random.default_rng(seed)
    dW = math.sqrt(fine) * (rng.standard_normal((n_fine, n_paths, m))
                            + 1j * rng.standard_normal((n_fine, n_paths, m)))
    y0 = np.array([_state(p, 100 + i, 0.5).amplitudes for i in range(n_paths)])

    def run(dt):
        r = int(round(dt / fine))
        st_ = _stepper(p, dt, "integrating_factor", system)
        y = y0.copy()
        inc = dW.reshape(n_fine // r, r, n_paths, m).sum(axis=1)
        for i in range(n_fine // r):
            y = st_.step(y, i * dt, inc[i])
        return y

    ref = run(fine)
    return np.array([np.mean(np.max(np.abs(run(dt) - ref), axis=1)) for dt in dts])


@pytest.mark.parametrize("system", ["effective", "interaction"])
def test_strong_order_one(system):
    p = _params(beta=20.0, cutoff=2.5, noise=ModelParams().noise)
    dts = [1 / 32, 1 / 64, 1 / 128]
    err = _strong_error(p, system, dts, T=1.0, n_paths=20, seed=1)
    ratios = err[:-1] / err[1:]
    assert np.all(ratios > 1.6) and np.all(ratios < 2.6), err


def test_full_step_converges_to_fine_euler_maruyama():
    # reference: explicit scheme at dt/100 of the finest step, on the same Brownian paths
    p = _params(beta=20.0, cutoff=4, noise=ModelParams().noise)
    m, n_paths, T = p.lattice.size, 8, 0.5
    dts = [1 / 64, 1 / 128, 1 / 256]
    fine = dts[-1] / 100
    n_fine = int(round(T / fine))
    rng = np.random.default_rng(2)
    dW = math.sqrt(fine) * (rng.standard_normal((n_fine, n_paths, m))
                            + 1j * rng.standard_normal((n_fine, n_paths, m)))
    y0 = np.array([_state(p, 200 + i, 0.5).amplitudes for i in range(n_paths)])

    def run(dt, scheme):
        r = int(round(dt / fine))
        st_ = _stepper(p, dt, scheme, "full")
        inc = dW.reshape(n_fine // r, r, n_paths, m).sum(axis=1)
        y = y0.copy()
        for i in range(n_fine // r):
            y = st_.step(y, i * dt, inc[i])
        return y

    ref = run(fine, "euler_maruyama")
    err = np.array([np.mean(np.max(np.abs(run(dt, "integrating_factor") - ref), axis=1))
                    for dt in dts])
    ratios = err[:-1] / err[1:]
    assert np.all(ratios > 1.6) and np.all(ratios < 2.6), err


def test_integrating_factor_handles_large_beta_dt():
    # beta dt = 10: the step stays bounded and close to a fine-step reference
    p = _params(beta=1e4, cutoff=2.5)
    v = _state(p, 8, 0.5)
    coarse, fine = v, v
    for i in range(10):
        coarse = step_full_v(coarse, i * 1e-3, 1e-3, None, p)
    for i in range(1000):
        fine = step_full_v(fine, i * 1e-5, 1e-5, None, p)
    assert np.max(np.abs(coarse.amplitudes - fine.amplitudes)) < 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(record_times=(1.0, 0.5))
    with pytest.raises(ValueError):
        IntegratorConfig(t_final=1.0, record_times=(2.0,))
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.3, t_final=1.0, record_times=(0.5,))
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="heun")
    cfg = IntegratorConfig.uniform(1.0, 0.25, dt=0.05)
    assert cfg.record_times == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert cfg.n_steps == 20 and list(cfg.record_steps) == [0, 5, 10, 15, 20]


def test_ensemble_shapes_and_initial_data():
    p = _params()
    cfg = IntegratorConfig(dt=1e-3, t_final=0.05, record_times=(0.0, 0.02, 0.05))
    v0 = _state(p, 1)
    ens = run_ensemble(v0, p, cfg, 3)
    assert ens.amplitudes.shape == (3, 3, p.lattice.size)
    assert ens.actions().shape == (3, 3, p.lattice.size)
    np.testing.assert_array_equal(ens.amplitudes[:, 0], np.broadcast_to(v0.amplitudes, (3, p.lattice.size)))
    assert ens.time_index(0.02) == 1
    with pytest.raises(KeyError):
        ens.time_index(0.03)
    sampler = run_ensemble(lambda rng: SpectralState.random(p.lattice, rng), p, cfg, 2)
    assert not np.array_equal(sampler.amplitudes[0, 0], sampler.amplitudes[1, 0])


def test_interaction_and_effective_share_increments():
    # with no nonlinearity both systems are the same OU process in a-variables
    p = _params(rho=0.0)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.1, record_times=(0.1,), seed=4)
    a = run_ensemble(None, p, cfg, 3, system="interaction")
    b = run_ensemble(None, p, cfg, 3, system="effective")
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)


@pytest.mark.parametrize("system", ["full", "interaction", "effective"])
def test_bitwise_determinism_under_any_schedule(system):
    p = _params(beta=200.0)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.6, record_times=(0.3, 0.6), seed=11)
    init = functools.partial(SpectralState.random, p.lattice)
    ref = run_ensemble(init, p, cfg, 7, system)
    for chunk in (1, 3, 7):
        other = run_ensemble(init, p, cfg, 7, system, chunk_size=chunk)
        assert other.amplitudes.tobytes() == ref.amplitudes.tobytes()
    par = run_ensemble(init, p, cfg.replace(workers=3), 7, system)
    assert par.amplitudes.tobytes() == ref.amplitudes.tobytes()
    single = run_single(init, p, cfg, path=4, system=system)
    assert single.amplitudes.tobytes() == ref.amplitudes[4].tobytes()


def test_blowup_guard():
    p = _params()
    cfg = IntegratorConfig(dt=1e-3, t_final=1.0, record_times=(1.0,), blowup_guard=1e-6)
    with pytest.raises(NumericalBlowUp) as exc:
        run_ensemble(_state(p), p, cfg, 2)
    assert exc.value.path == 0 and exc.value.norm > 1e-6


def test_ou_mean_action_of_linear_system():
    p = _params(rho=0.0, beta=100.0, noise=ModelParams().noise.__class__(c=1.0, q=1.0))
    cfg = IntegratorConfig.uniform(4.0, 0.5, dt=2e-3, seed=9)
    ens = run_ensemble(None, p, cfg, 400)
    sel = ens.times >= 2.0
    per_path = ens.actions()[:, sel].mean(axis=1)
    mean = per_path.mean(axis=0)
    se = per_path.std(axis=0, ddof=1) / math.sqrt(per_path.shape[0])
    target = 0.5 * p.b**2 / p.gamma
    z = np.abs(mean - target) / se
    assert np.all(z < 3.5), z.max()
    assert np.mean(z < 2) > 0.8


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_reality_is_structural(seed):
    p = _params()
    v = _state(p, seed)
    for fn in (lambda x: step_full_v(x, 0.1, 1e-3, None, p),
               lambda x: step_interaction(x, 0.1, 1e-3, None, p),
               lambda x: step_effective(x, 1e-3, None, p)):
        w = fn(v)
        assert isinstance(w, SpectralState) and w.lattice == p.lattice
        d = dict(w.items())
        for k, val in d.items():
            assert d[-k] == np.conj(val)


def test_noise_argument_forms_agree():
    p = _params()
    v = _state(p, 1)
    dB = _state(p, 2, 0.01)
    a = step_full_v(v, 0.0, 1e-3, dB, p)
    b = step_full_v(v, 0.0, 1e-3, dB.amplitudes, p)
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)


def test_trajectory_csv(tmp_path):
    p = _params(cutoff=1.5)
    cfg = IntegratorConfig(dt=1e-3, t_final=0.01, record_times=(0.0, 0.01))
    tr = run_single(_state(p), p, cfg)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[0] == "time"
    assert len(lines[0].split(",")) == 1 + 2 * p.lattice.size
    row = [float(x) for x in lines[2].split(",")]
    assert row[0] == 0.01
    assert complex(row[1], row[2]) == tr.amplitudes[1, 0]


def test_manifest_contents():
    p = _params()
    cfg = IntegratorConfig()
    m = manifest(p, cfg, system="full")
    assert m["seed"] == cfg.seed and m["system"] == "full"
    assert m["params"]["beta"] == p.beta
    assert len(m["config_hash"]) == 64
    assert manifest(p, cfg, system="full") == m
    assert manifest(p.replace(beta=1.0), cfg, system="full")["config_hash"] != m["config_hash"]


def test_oscillatory_integral_matches_quadrature():
    from scipy.integrate import quad

    p = _params(beta=7.0, cutoff=2.5)
    a = _state(p, 3)
    t = 0.8
    closed = oscillatory_integral(a, t, p)[0]
    for i in range(p.lattice.size):
        re = quad(lambda s: oscillatory_part(a, s, p).amplitudes[i].real, 0, t, limit=200)[0]
        im = quad(lambda s: oscillatory_part(a, s, p).amplitudes[i].imag, 0, t, limit=200)[0]
        assert closed[i] == pytest.approx(re + 1j * im, abs=1e-10)


def test_oscillatory_sup_is_bounded_by_coefficients():
    p = _params(beta=1e3, cutoff=2.5)
    a = _state(p, 5)
    sup = oscillatory_integral_sup(a, p)
    assert 0 < sup < 1.0
    assert oscillatory_integral_sup(a, p.replace(rho=0.0)) == 0.0


def test_norm_stays_finite_over_long_run():
    p = _params(beta=1e3, noise=ModelParams().noise)
    cfg = IntegratorConfig(dt=1e-3, t_final=2.0, record_times=(2.0,), seed=2)
    ens = run_ensemble(_state(p), p, cfg, 4)
    assert np.all(np.isfinite(ens.amplitudes))
    assert max(sobolev_norm(t.states[-1][1], 1) for t in ens) < 50
