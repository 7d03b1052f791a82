import numpy as np
import pytest

from agclab.dynamics import AGC, PRIMARY, discretize, expm, simulate, step_state
from agclab.fleet import (BessParams, NonReheatTurbineParams,
                          ReheatTurbineParams, SystemModel, build_state_space,
                          droop_sum, with_parameters)
from agclab.presets import example_fleet

from .oracles import rk4_trajectory, taylor_expm


def scalar_model(H=5.0, D=1.0):
    return SystemModel(inertia_H=H, damping_D=D)


def stable_matrix(rng, n):
    M = rng.standard_normal((n, n))
    return M - (np.abs(np.linalg.eigvals(M)).max() + 0.1) * np.eye(n)


# --- expm -------------------------------------------------------------------

def test_expm_zero_and_nilpotent():
    np.testing.assert_array_equal(expm(np.zeros((3, 3)), 2.5), np.eye(3))
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(expm(A, 1.0), [[1, 1], [0, 1]], atol=1e-15)


def test_expm_against_taylor_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        A = stable_matrix(rng, 7)
        t = 0.9 / max(np.linalg.norm(A), 1.0)
        ours = expm(A, t)
        ref = taylor_expm(A * t)
        assert np.linalg.norm(ours - ref) / np.linalg.norm(ref) < 1e-12


def test_expm_semigroup_and_inverse():
    rng = np.random.default_rng(11)
    for n in (2, 5, 10):
        A = stable_matrix(rng, n)
        t1, t2 = 0.3, 1.1
        lhs = expm(A, t1 + t2)
        rhs = expm(A, t1) @ expm(A, t2)
        assert np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs) < 1e-9
        prod = expm(A, 0.7) @ expm(A, -0.7)
        assert np.linalg.norm(prod - np.eye(n)) < 1e-9


def test_expm_rejects_bad_input():
    with pytest.raises(ValueError):
        expm(np.array([[np.nan, 0], [0, 1.0]]), 1.0)
    with pytest.raises(ValueError):
        expm(np.zeros((2, 3)), 1.0)


# --- discretize -------------------------------------------------------------

def test_scalar_damping_discretization():
    ss = build_state_space(scalar_model())
    dyn = discretize(ss, 4.0, kind=AGC)
    assert dyn.A_d[0, 0] == pytest.approx(np.exp(-0.4), rel=1e-12)
    assert dyn.A_d[0, 0] == pytest.approx(0.670320, abs=1e-6)
    x1 = step_state(dyn, np.zeros(1), (0.0, 0.01, 0.01))
    assert x1[0] == pytest.approx(-0.01 * (1 - np.exp(-0.4)), rel=1e-12)
    assert x1[0] == pytest.approx(-0.0032968, abs=1e-7)


def test_first_order_consistency():
    # moderate system: the literal 1e-6 bound at step 1e-6
    ss = build_state_space(scalar_model())
    dyn = discretize(ss, 1e-6)
    assert abs((dyn.A_d[0, 0] - 1.0) / 1e-6 - ss.A[0, 0]) <= 1e-6
    # stiff fleet: error is governed by ||A^2||*h/2, so check the scaled form
    ss = build_state_space(example_fleet())
    h = 1e-6
    dyn = discretize(ss, h)
    err = np.linalg.norm((dyn.A_d - np.eye(ss.n)) / h - ss.A)
    assert err <= 0.6 * h * np.linalg.norm(ss.A @ ss.A) + 1e-9


def test_primary_has_no_agc_column():
    ss = build_state_space(example_fleet())
    pri = discretize(ss, 0.1, kind=PRIMARY)
    sec = discretize(ss, 0.1, kind=AGC)
    assert pri.step_R is None and sec.step_R is not None
    np.testing.assert_array_equal(pri.A_d, sec.A_d)
    np.testing.assert_array_equal(pri.step_NL, sec.step_NL)
    with pytest.raises(ValueError):
        step_state(pri, np.zeros(ss.n), (0.1, 0.0, 0.0))
    with pytest.raises(ValueError):
        step_state(sec, np.zeros(ss.n), (0.0, 0.0))


def test_discretize_validates_step():
    ss = build_state_space(scalar_model())
    with pytest.raises(ValueError):
        discretize(ss, 0.0)
    with pytest.raises(ValueError):
        discretize(ss, 1.0, kind="weekly")


def test_one_step_matches_rk4_oracle():
    ss = build_state_space(example_fleet())
    dyn = discretize(ss, 0.1, kind=AGC)
    x0 = np.zeros(ss.n)
    dpr, nl0, nl1 = 0.02, 0.01, 0.015
    ours = step_state(dyn, x0, (dpr, nl0, nl1))
    dist = (np.array([0.0, 0.1]), np.array([nl0, nl1]))
    ctrl = (np.array([0.0]), np.array([dpr]))
    _, states = rk4_trajectory(ss, dist, ctrl, substep=1e-4, t_end=0.1, x0=x0,
                               output_every=1000)
    np.testing.assert_allclose(ours, states[-1], atol=1e-8)


def test_chained_steps_match_rk4_on_piecewise_linear_disturbance():
    ss = build_state_space(example_fleet())
    rng = np.random.default_rng(3)
    knots = np.arange(0.0, 20.5, 0.5)
    vals = np.cumsum(rng.normal(0, 0.004, size=len(knots)))
    ctrl_t = np.arange(0.0, 20.0, 4.0)
    ctrl_v = rng.normal(0, 0.01, size=len(ctrl_t))
    traj = simulate(ss, (knots, vals), (ctrl_t, ctrl_v), step=0.5, t_end=20.0)
    _, states = rk4_trajectory(ss, (knots, vals), (ctrl_t, ctrl_v),
                               substep=2e-4, t_end=20.0, x0=None,
                               output_every=2500)
    np.testing.assert_allclose(traj.states, states, atol=1e-7)


def test_equilibrium_stays_at_zero():
    ss = build_state_space(example_fleet())
    t = np.arange(0.0, 10.0, 1.0)
    traj = simulate(ss, (t, np.zeros_like(t)), (t, np.zeros_like(t)), step=0.5,
                    t_end=9.0)
    assert np.all(traj.states == 0.0)


def test_primary_steady_state_droop():
    m = example_fleet()
    ss = build_state_space(m)
    p = 0.02
    t = np.array([0.0, 150.0])
    traj = simulate(ss, (t, np.array([p, p])), None, step=0.5, t_end=150.0)
    expected = -p / (m.damping_D + droop_sum(m))
    assert traj.freq_deviation[-1] == pytest.approx(expected, abs=1e-6)


def test_stability_preserved_random_models():
    rng = np.random.default_rng(19)
    for _ in range(8):
        m = SystemModel(
            reheat=(ReheatTurbineParams(
                rng.uniform(0.1, 0.4), rng.uniform(0.2, 0.5), rng.uniform(5, 10),
                rng.uniform(0.1, 0.5), rng.uniform(0.03, 0.08), 0.6,
                300.0, 5.0),),
            nonreheat=(NonReheatTurbineParams(
                rng.uniform(0.1, 0.4), rng.uniform(0.2, 0.5),
                rng.uniform(0.03, 0.08), 0.3, 200.0, 4.0),),
            bess=(BessParams(rng.uniform(0.005, 0.05), rng.uniform(0.05, 0.1),
                             0.1, 40.0),),
            inertia_H=rng.uniform(3, 20), damping_D=rng.uniform(0.0, 2.0),
        )
        ss = build_state_space(m)
        assert np.linalg.eigvals(ss.A).real.max() <= 1e-12
        dyn = discretize(ss, rng.uniform(0.05, 8.0))
        assert np.abs(np.linalg.eigvals(dyn.A_d)).max() <= 1 + 1e-9


def test_simulate_rejects_misaligned_series():
    ss = build_state_space(scalar_model())
    t = np.array([0.0, 1.0, 2.0])
    with pytest.raises(ValueError, match="does not divide"):
        simulate(ss, (t, np.zeros(3)), None, step=0.3, t_end=2.0)
    with pytest.raises(ValueError, match="cover"):
        simulate(ss, (t, np.zeros(3)), None, step=0.5, t_end=5.0)
    with pytest.raises(ValueError, match="control=None"):
        simulate(ss, (t, np.zeros(3)), (t, np.zeros(3)), step=0.5, t_end=2.0,
                 kind=PRIMARY)


def test_discretization_cache_returns_same_object():
    ss = build_state_space(example_fleet())
    assert discretize(ss, 4.0) is discretize(ss, 4.0)
    assert discretize(ss, 4.0) is not discretize(ss, 2.0)


# --- RK4 oracle self-checks --------------------------------------------------

def test_rk4_matches_analytic_scalar():
    ss = build_state_space(scalar_model())
    t = np.array([0.0, 10.0])
    _, states = rk4_trajectory(ss, (t, np.array([0.01, 0.01])), None,
                               substep=1e-3, t_end=10.0, output_every=1000)
    exact = -0.01 * (1 - np.exp(-0.1 * 10.0))
    assert states[-1, 0] == pytest.approx(exact, abs=1e-10)


def test_rk4_convergence_order():
    ss = build_state_space(scalar_model(H=0.5, D=2.0))
    t = np.array([0.0, 2.0])
    dist = (t, np.array([0.0, 0.04]))  # pure ramp
    exact_traj = simulate(ss, dist, None, step=2.0, t_end=2.0)
    exact = exact_traj.states[-1, 0]
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        _, states = rk4_trajectory(ss, dist, None, substep=h, t_end=2.0,
                                   output_every=int(round(2.0 / h)))
        errs.append(abs(states[-1, 0] - exact))
    order = np.polyfit(np.log([1e-2, 5e-3, 2.5e-3]), np.log(errs), 1)[0]
    assert 3.7 < order < 4.3
