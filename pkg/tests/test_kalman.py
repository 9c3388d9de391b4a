import math
import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_are

from magkalman import INFINITE, ConfigError, OuParams, PhysParams
from magkalman.bounds import cs_limit
from magkalman.kalman import (amse_noiseless, amse_noiseless_asymptotes, build_model,
                              filter_ensemble, integrate_riccati, kalman_gain, riccati_rhs,
                              run_filter, steady_state, transition_scales)
from magkalman.moments import integrate_conditional, variance_regimes
from magkalman.stochproc import simulate_ou

FIG5 = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0, gamma_y=0.1)
FIG5_INSET = PhysParams(J=1e5, gamma=1e6, M=1e5, eta=1.0, gamma_y=0.1)
OU5 = OuParams(q_B=100.0)
NOISELESS = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0)


def care(p, ou, t):
    """Frozen-time algebraic Riccati solution from scipy (long-time variance branch)."""
    m = build_model(p, ou, long_time_var=True)
    F, B, H, Q, R, S = m.F(t), m.Bmat(t), m.H, m.Q, m.R, m.S
    A = F - B @ S @ H / R
    return solve_continuous_are(A.T, H.T, B @ (Q - S @ S.T / R) @ B.T, np.array([[R]])), m


def reference_riccati(m, sigma0, t):
    """Plain full-matrix Riccati integration in log-time, from a tiny start time."""
    def rhs(s, u):
        tt = math.exp(s)
        return (tt * riccati_rhs(u.reshape(2, 2), tt, m)).ravel()

    sol = solve_ivp(rhs, (math.log(1e-22), math.log(t[-1])), np.asarray(sigma0).ravel(),
                    t_eval=np.log(t), method="Radau", rtol=1e-11, atol=1e-30)
    return sol.y.reshape(2, 2, -1).transpose(2, 0, 1)


def test_model_matrices():
    p = PhysParams(J=50, gamma=3.0, M=2.0, eta=0.5, gamma_y=0.1)
    m = build_model(p, OuParams(chi=0.3, q_B=4.0))
    x = np.array([1.7, -0.4])
    # H matches the record normalization dy = 2 eta sqrt(M) <J_z> dt + sqrt(eta) dW
    assert (m.H @ x)[0] == pytest.approx(2 * p.eta * math.sqrt(p.M) * 1.7)
    assert np.allclose(m.Q - m.S @ m.S.T / m.R, np.diag([0.0, 4.0]))
    assert m.F(0.0)[0, 1] == pytest.approx(-p.gamma * p.J)
    assert m.F(0.0)[1, 1] == -0.3
    block = np.block([[m.Q, m.S], [m.S.T, np.array([[m.R]])]])
    assert np.min(np.linalg.eigvalsh(block)) >= -1e-14
    assert m.Bmat(0.5)[0, 0] >= 0
    with pytest.raises(ConfigError):
        build_model(PhysParams(J=5, M=2.0, gamma_z=1.0), OuParams())


def test_rhs_fixed_point_and_symmetry():
    m = build_model(NOISELESS, OuParams())
    assert np.allclose(riccati_rhs(np.zeros((2, 2)), 1e-6, m), 0.0)
    m = build_model(FIG5, OuParams(chi=2.0, q_B=100.0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = rng.standard_normal((2, 2))
        sig = a @ a.T * np.array([[1e3, 1e-2], [1e-2, 1e-6]])
        r = riccati_rhs(sig, 3e-6, m)
        assert np.allclose(r, r.T, rtol=1e-12, atol=0)


@pytest.mark.parametrize("chi", [0.0, 50.0])
@pytest.mark.parametrize("t", [1e-7, 1e-6, 5e-6])
def test_steady_state_matches_care(chi, t):
    ou = OuParams(chi=chi, q_B=100.0)
    X, m = care(FIG5, ou, t)
    assert float(steady_state(FIG5, ou, t).value) == pytest.approx(X[1, 1], rel=1e-9)
    # the CARE solution zeroes the (2,2) entry of the Riccati right-hand side
    r = riccati_rhs(X, t, m)
    assert abs(r[1, 1]) <= 1e-9 * ou.q_B


def test_steady_state_small_J_matches_care():
    ou = OuParams(chi=5.0, q_B=100.0)
    X, _ = care(FIG5_INSET, ou, 2e-6)
    assert float(steady_state(FIG5_INSET, ou, 2e-6).value) == pytest.approx(X[1, 1], rel=1e-9)


def test_steady_state_limits():
    t = 3e-6
    s0 = float(steady_state(FIG5, OU5, t).value)
    s_eps = float(steady_state(FIG5, OuParams(chi=1e-9, q_B=100.0), t).value)
    assert s_eps == pytest.approx(s0, rel=1e-8)
    p = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0)
    expected = math.sqrt(math.sqrt(100.0**3 / 1e5) * math.exp(p.M * t / 2) / (1e6 * 1e9))
    assert float(steady_state(p, OU5, t).value) == pytest.approx(expected)
    big = PhysParams(J=1e14, gamma=1e6, M=1e5, eta=1.0, gamma_y=0.1)
    assert float(steady_state(big, OU5, t).value) == pytest.approx(math.sqrt(10.0) / 1e6, rel=1e-3)
    assert float(steady_state(big, OU5, t).large_J) == pytest.approx(math.sqrt(10.0) / 1e6)


def test_finite_prior_initial_condition():
    m = build_model(FIG5, OuParams(q_B=100.0, sigma0_sq=1e-3))
    S = integrate_riccati(np.diag([0.0, 1e-3]), np.array([0.0, 1e-6]), m)
    assert np.array_equal(S[0], np.diag([0.0, 1e-3]))
    S = integrate_riccati(INFINITE, np.array([0.0, 1e-6]), m)
    assert S[0, 1, 1] == np.inf


@pytest.mark.parametrize("p,ou", [
    (FIG5, OuParams(q_B=100.0, sigma0_sq=1e-4)),
    (FIG5_INSET, OuParams(chi=30.0, q_B=100.0, sigma0_sq=1e-2)),
    (PhysParams(J=100, gamma=1.0, M=1.0, eta=0.7, gamma_y=0.05), OuParams(q_B=0.2, sigma0_sq=1.0)),
])
def test_riccati_matches_reference_integrator(p, ou):
    m = build_model(p, ou)
    t = np.geomspace(1e-8, 1.0, 25) / p.r
    S = integrate_riccati(np.diag([0.0, ou.sigma0_sq]), t, m)
    ref = reference_riccati(m, np.diag([0.0, ou.sigma0_sq]), t)
    assert np.allclose(S[:, 1, 1], ref[:, 1, 1], rtol=1e-7, atol=0)
    assert np.allclose(S[:, 0, 0], ref[:, 0, 0], rtol=1e-7, atol=0)
    assert np.allclose(S[:, 0, 1], ref[:, 0, 1], rtol=1e-6, atol=0)


def test_improper_prior_is_limit_of_wide_prior():
    t = np.geomspace(1e-4, 1.0, 10) / FIG5.r
    m = build_model(FIG5, OU5)
    S_inf = integrate_riccati(INFINITE, t, m)
    S_wide = integrate_riccati(np.diag([0.0, 1e6]), t, m)
    assert np.allclose(S_inf[:, 1, 1], S_wide[:, 1, 1], rtol=1e-6)


def test_noiseless_closed_form_vs_riccati():
    t = np.geomspace(1e-6, 1.0, 50) / NOISELESS.r
    m = build_model(NOISELESS, OuParams())
    S = integrate_riccati(INFINITE, t, m)[:, 1, 1]
    assert np.allclose(S, amse_noiseless(t, INFINITE, NOISELESS), rtol=1e-6, atol=0)


def test_noiseless_closed_form_finite_prior():
    p = PhysParams(J=1e4, gamma=1e6, M=1e5, eta=0.8)
    t = np.geomspace(1e-6, 1.0, 30) / p.r
    for s0 in (1e-12, 1e-9, 1e-6):
        S = integrate_riccati(np.diag([0.0, s0]), t, build_model(p, OuParams(sigma0_sq=s0)))
        assert np.allclose(S[:, 1, 1], amse_noiseless(t, s0, p), rtol=1e-6, atol=0)
    assert np.all(amse_noiseless(t, 0.0, p) == 0)


def test_noiseless_asymptotes():
    p = NOISELESS
    t1 = np.geomspace(1e-6, 1e-2, 10) / (p.J * p.M)
    short, _ = amse_noiseless_asymptotes(t1, p)
    assert np.allclose(amse_noiseless(t1, INFINITE, p), short, rtol=0.02)
    t2 = np.geomspace(100 / (p.J * p.M), 1e-2 / p.M, 10)
    _, long = amse_noiseless_asymptotes(t2, p)
    assert np.allclose(amse_noiseless(t2, INFINITE, p), long, rtol=0.05)


def test_riccati_plateau_fig5():
    t = np.array([1.0]) / FIG5.r
    S = integrate_riccati(INFINITE, t, build_model(FIG5, OU5))
    assert S[0, 1, 1] == pytest.approx(math.sqrt(100.0 * 0.1) / 1e6, rel=0.05)


@pytest.mark.parametrize("p", [FIG5, FIG5_INSET])
def test_riccati_psd_and_above_cs_limit(p):
    t = np.geomspace(1e-8, 1.0, 120) / p.r
    S = integrate_riccati(INFINITE, t, build_model(p, OU5))
    for s in S:
        assert np.min(np.linalg.eigvalsh(s)) >= -1e-12 * np.trace(s)
    bound = cs_limit(t, p, OU5).value
    assert np.all(S[:, 1, 1] >= bound * (1 - 1e-9))


def test_information_monotone_without_fluctuations():
    p = PhysParams(J=1e6, gamma=1e6, M=1e5, eta=1.0, gamma_y=0.1)
    t = np.geomspace(1e-8, 1.0, 100) / p.r
    S = integrate_riccati(INFINITE, t, build_model(p, OuParams()))[:, 1, 1]
    assert np.all(np.diff(S) <= 1e-12 * S[1:])


def test_transition_scales():
    sc = transition_scales(FIG5, OU5, 1e-4 / FIG5.r)
    assert sc.t_CS == pytest.approx(1.732e-11, rel=1e-3)
    assert sc.t_CS * FIG5.r == pytest.approx(1.73e-6, rel=1e-2)
    assert sc.t_CS_prime == pytest.approx(3.162e-8, rel=1e-3)
    assert sc.t_CS_prime * FIG5.r == pytest.approx(3.16e-3, rel=1e-2)
    assert sc.J_CS_prime == pytest.approx(3.162e5, rel=1e-3)
    t = 1e-2 / FIG5.r
    assert transition_scales(FIG5, OU5, t).J_SS == pytest.approx(6.58e4, rel=1e-2)
    # shared formula: J t_CS(J) = t J_CS(t)
    assert FIG5.J * sc.t_CS == pytest.approx(1e-4 / FIG5.r * sc.J_CS)
    # t_SS and J_SS describe the same crossing
    q = PhysParams(J=transition_scales(FIG5, OU5, t).J_SS, gamma=1e6, M=1e5, eta=1.0,
                   gamma_y=0.1)
    assert transition_scales(q, OU5, t).t_SS == pytest.approx(t, rel=1e-12)


def test_kalman_gain():
    p = PhysParams(J=10, gamma=1.0, M=1.0, eta=1.0)
    m = build_model(p, OuParams(), var_fn=lambda t: 0.0)
    assert np.allclose(kalman_gain(np.zeros((2, 2)), 0.0, m), 0.0)
    m = build_model(p, OuParams(), var_fn=lambda t: 1.0)
    assert np.allclose(kalman_gain(np.zeros((2, 2)), 0.0, m), [2.0, 0.0])
    q = PhysParams(J=10, gamma=1.0, M=3.0, eta=0.4)
    m = build_model(q, OuParams(), var_fn=lambda t: 0.0)
    sig = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert kalman_gain(sig, 0.0, m)[1] == pytest.approx(0.3 * 2 * q.eta * math.sqrt(q.M) / q.eta)
    z = PhysParams(J=10, gamma=1.0, M=3.0, eta=0.0)
    with pytest.raises(ConfigError):
        kalman_gain(sig, 0.0, build_model(z, OuParams(), var_fn=lambda t: 0.0))


def _record(p, ou, times, seed, index=0, noise=None):
    f = simulate_ou(ou, 0.0, 0, seed, index=index, times=times)
    return integrate_conditional(p, f, seed, index=index, noise=noise, check_regime=False)


def test_run_filter_zero_record():
    p = PhysParams(J=100, gamma=1.0, M=1.0, eta=1.0, gamma_y=0.01)
    ou = OuParams(q_B=0.0, sigma0_sq=0.0)
    times = np.linspace(0, 0.5, 501)
    rec = _record(p, ou, times, 0, noise=np.zeros(500))
    m = build_model(p, ou)
    run = run_filter(rec, m, integrate_riccati(np.diag([0.0, 1.0]), times, m))
    assert np.all(run.estimates == 0)
    assert len(run.states()) == len(times)
    with pytest.raises(ConfigError):
        run_filter(rec, m, np.zeros((3, 2, 2)))


def test_ensemble_matches_single_filter():
    p = PhysParams(J=100, gamma=1.0, M=1.0, eta=0.8, gamma_y=0.02)
    ou = OuParams(chi=0.5, q_B=0.3, sigma0_sq=0.5, B0=0.1)
    times = np.linspace(0, 0.6, 601)
    idx = np.array([0, 100, 600])
    m = build_model(p, ou)
    sig = integrate_riccati(np.diag([0.0, ou.sigma0_sq]), times, m)
    err, _ = filter_ensemble(p, ou, times, 3, 21, idx, m=m, sigma_path=sig, start=4, block=64)
    for i in range(3):
        rec = _record(p, ou, times, 21, index=4 + i)
        run = run_filter(rec, m, sig)
        assert np.allclose(err[i], (rec.field.values - run.B_hat)[idx], rtol=1e-10, atol=1e-12)


def test_ensemble_needs_proper_prior():
    with pytest.raises(ConfigError):
        filter_ensemble(FIG5, OU5, np.linspace(0, 1e-6, 3), 1, 0, [2])


def test_filter_mse_small_system():
    p = PhysParams(J=100, gamma=1.0, M=1.0, eta=1.0, gamma_y=0.01)
    ou = OuParams(q_B=0.05, sigma0_sq=0.2)
    times = np.linspace(0, 0.9, 1801)
    idx = np.array([200, 600, 1200, 1800])
    err, sig = filter_ensemble(p, ou, times, 2000, 5, idx)
    mse = np.mean(err**2, axis=0)
    ratio = mse / sig[idx, 1, 1]
    assert np.all((ratio > 0.9) & (ratio < 1.1))
    se = err.std(axis=0, ddof=1) / math.sqrt(len(err))
    assert np.all(np.abs(err.mean(axis=0)) <= 3 * se)


def test_variance_model_branch_flag():
    m = build_model(FIG5, OU5, long_time_var=True)
    reg = variance_regimes(FIG5)
    assert float(m.var_fn(1e-6)) == pytest.approx(float(reg.long_time(1e-6)))
