import math

import numpy as np
import pytest

from pencil_consensus.errors import NonFiniteState, StepBudgetExceeded
from pencil_consensus.graph import build_topology, manipulator_topology
from pencil_consensus.plant import ClosedLoop, integrator_fleet
from pencil_consensus.simulate import (
    SimOptions,
    SimTrace,
    check_consensus,
    integrate,
    monitor_lyapunov_decay,
    monitor_tracking_bound,
    switching_time,
)
from pencil_consensus.synthesis import build_system_matrices, synthesize_practical, synthesize_state_feedback
from pencil_consensus.timewarp import GainSchedule

SINGLE = build_topology([[0]], [1])


def _scalar_loop(K=1.3, T=2.0, e0=1.0):
    fleet = integrator_fleet(SINGLE, 1, [[0.0], [e0]])
    sys_m = build_system_matrices(1, SINGLE, [K], [1.0], [0.0])
    res = synthesize_state_feedback(sys_m, 1e-3, T)
    loop = ClosedLoop(fleet, [K], [1.0], GainSchedule.exact(T, res.b, 1), False)
    return loop, res, sys_m


def _scalar_exact(t, K, b, T, e0=1.0):
    # e' = -K b e / (T - t)  =>  e = e0 ((T - t) / T)^(K b)
    return e0 * ((T - t) / T) ** (K * b)


def test_linear_scalar_matches_closed_form():
    loop, res, sys_m = _scalar_loop()
    tr = integrate(loop, res, sys_m, SimOptions(h_max=1e-4, eps_stop=0.05))
    want = _scalar_exact(tr.times, 1.3, res.b, 2.0)
    np.testing.assert_allclose(tr.states[:, 1, 0], want, atol=1e-6)


def test_grid_refinement_order():
    loop, res, sys_m = _scalar_loop()
    errs = []
    for h in (0.04, 0.02, 0.01):
        opts = SimOptions(h_max=h, h_frac=1.0, cfl=100.0, eps_stop=1.0)
        tr = integrate(loop, res, sys_m, opts)
        errs.append(abs(tr.states[-1, 1, 0] - _scalar_exact(tr.times[-1], 1.3, res.b, 2.0)))
    p = 4
    for coarse, fine in zip(errs, errs[1:]):
        assert 2 ** (p - 1) <= coarse / fine <= 2 ** (p + 1)


def test_free_chain_of_integrators_is_exact():
    topo = build_topology([[0, 1], [1, 0]], [1, 0])
    x0 = np.tile([1.0, -2.0, 0.5], (3, 1))
    fleet = integrator_fleet(topo, 3, x0, None, x0)
    K = np.array([1.0, 3.0, 3.0])
    G = np.array([3.0, 3.0, 1.0])
    sys_m = build_system_matrices(3, topo, K, G, [0.0, 0.0, 0.0])
    res = synthesize_state_feedback(sys_m, 1e-3, 1.0)
    loop = ClosedLoop(fleet, K, G, GainSchedule.exact(1.0, res.b, 3), False)
    tr = integrate(loop, res, sys_m, SimOptions(eps_stop=0.3))
    t = tr.times[:, None]
    want = np.hstack([1.0 - 2.0 * t + 0.25 * t ** 2, -2.0 + 0.5 * t, 0.5 + 0 * t])
    for k in range(3):
        np.testing.assert_allclose(tr.states[:, k], want, rtol=1e-12, atol=1e-12)
    assert np.all(tr.inputs == 0.0)


def test_trace_invariants_and_determinism():
    loop, res, sys_m = _scalar_loop()
    opts = SimOptions(h_max=1e-3, eps_stop=0.1)
    a = integrate(loop, res, sys_m, opts)
    b = integrate(loop, res, sys_m, opts)
    assert np.all(np.diff(a.times) > 0)
    assert len({len(a.times), len(a.states), len(a.inputs), len(a.V), len(a.r)}) == 1
    for key in ("times", "states", "inputs", "V", "r", "eta"):
        assert np.array_equal(getattr(a, key), getattr(b, key))
    assert a.t_stop == pytest.approx(2.0 - 0.1)


def test_budget_and_nonfinite_errors():
    loop, res, sys_m = _scalar_loop()
    with pytest.raises(StepBudgetExceeded):
        integrate(loop, res, sys_m, SimOptions(max_steps=10))
    loop.fleet.F_fleet = lambda t, X: np.full_like(X, np.inf if t > 0.01 else 0.0)
    with pytest.raises(NonFiniteState):
        integrate(loop, res, sys_m, SimOptions(h_max=1e-3, eps_stop=0.5))


def test_eps_stop_must_exceed_guard():
    loop, res, sys_m = _scalar_loop()
    with pytest.raises(ValueError):
        integrate(loop, res, sys_m, SimOptions(eps_stop=1e-14))


def test_zero_growth_monitor_is_plain_power_law():
    fleet = integrator_fleet(manipulator_topology(), 2, [[0, 0], [1, 1], [2, 2], [3, 3], [4, 4]])
    sys_m = build_system_matrices(2, manipulator_topology(), [8.0, 9.0], [2.0, 2.0], [0.0, 0.0])
    res = synthesize_state_feedback(sys_m, 1e-3, 2.0)
    sched = GainSchedule.exact(2.0, res.b, 2)
    tr = integrate(ClosedLoop(fleet, [8.0, 9.0], [2.0, 2.0], sched, False), res, sys_m, SimOptions(eps_stop=0.05))
    rep = monitor_lyapunov_decay(tr, res, sched)
    assert rep.tau1 == 0.0 and rep.M == 1.0
    np.testing.assert_allclose(rep.envelope, ((2.0 - tr.times) / 2.0) ** 1e-3 * tr.V[0], rtol=1e-12)
    assert rep.ok and not rep.violations
    track = monitor_tracking_bound(tr, res, sched, rep)
    assert track.ok


def test_envelope_nonincreasing_after_switch(exact_run, of_synthesis):
    loop, tr, _ = exact_run
    rep = monitor_lyapunov_decay(tr, of_synthesis, loop.sched)
    taus = -np.log1p(-tr.times / 2.0)
    after = rep.log_envelope[taus >= rep.tau1]
    assert np.all(np.diff(after) <= 0)


def test_switching_time():
    taus = np.linspace(0, 10, 101)
    tau1, on_grid = switching_time(0.1, 0.5, 2.0, taus)
    assert on_grid and tau1 == pytest.approx(2.4)
    assert 0.1 - 1.0 * math.exp(-tau1) > 0
    assert not 0.1 - 1.0 * math.exp(-(tau1 - 0.1)) > 0
    tau1, on_grid = switching_time(1e-6, 10.0, 2.0, taus)
    assert not on_grid and tau1 == pytest.approx(math.log(2 * 10.0 * 2.0 / 1e-6))
    assert switching_time(1.0, 0.0, 2.0, taus) == (0.0, True)


def test_tracking_identical_states_trivial():
    fleet = integrator_fleet(manipulator_topology(), 2, np.ones((5, 2)))
    sys_m = build_system_matrices(2, manipulator_topology(), [8.0, 9.0], [2.0, 2.0], [0.0, 0.0])
    res = synthesize_state_feedback(sys_m, 1e-3, 2.0)
    sched = GainSchedule.exact(2.0, res.b, 2)
    tr = integrate(ClosedLoop(fleet, [8.0, 9.0], [2.0, 2.0], sched, False), res, sys_m, SimOptions(eps_stop=0.5))
    assert np.all(tr.errors == 0.0)
    assert monitor_tracking_bound(tr, res, sched).pointwise_ok


def test_pointwise_tracking_bound_on_preset(exact_run, of_synthesis):
    loop, tr, _ = exact_run
    rhs = (np.linalg.norm(tr.eta_hat, axis=1) + np.linalg.norm(tr.eps, axis=1)) / tr.r
    assert np.all(tr.errors <= rhs[:, None] * (1 + 1e-9) + 1e-300)


def test_consensus_queries(exact_run):
    _, tr, _ = exact_run
    assert not check_consensus(tr, 0.0, 0.1)
    assert check_consensus(tr, 2.0 - 2e-3, 1e-2)
    lonely = SimTrace(np.array([0.0]), np.zeros((1, 1, 2)), None, np.zeros((1, 1)),
                      np.zeros((1, 0)), None, None, np.zeros(1), np.ones(1))
    assert check_consensus(lonely, 0.0, 0.0)
    with pytest.raises(ValueError):
        check_consensus(tr, 5.0, 0.1)


def test_practical_run_on_linear_fleet():
    topo = manipulator_topology()
    fleet = integrator_fleet(topo, 2, [[0, 0], [1, 1], [2, 2], [3, 3], [4, 4]])
    sys_m = build_system_matrices(2, topo, [8.0, 9.0], [2.0, 2.0], [0.0, 0.0])
    res = synthesize_practical(sys_m, 0.9, 0.1, 1e-3, 0.9, 0.0, kappa_a=0.5)
    sched = GainSchedule.practical(0.9, 0.1, res.b, 2)
    loop = ClosedLoop(fleet, [8.0, 9.0], [2.0, 2.0], sched, True)
    tr = integrate(loop, res, sys_m, SimOptions(t_end=1.5, h_max=1e-3))
    assert tr.times[tr.index_at(0.9)] == 0.9
    rep = monitor_lyapunov_decay(tr, res, sched)
    track = monitor_tracking_bound(tr, res, sched, rep)
    assert rep.ok, rep.violations[:3]
    assert track.envelope_ok
    i_f = tr.index_at(0.9)
    assert np.all(tr.errors[i_f] <= track.radius)
    assert tr.errors[-1].max() <= tr.errors[i_f].max()
