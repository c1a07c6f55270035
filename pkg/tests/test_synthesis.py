import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_closed_loop
from pencil_consensus.errors import MatrixError, NotHurwitz, SensitivityInadmissible
from pencil_consensus.graph import build_topology, manipulator_topology, random_topology
from pencil_consensus.pencil import lambda_max, spectral_abscissa
from pencil_consensus.synthesis import (
    SynthesisMode,
    build_system_matrices,
    check_sensitivity_admissible,
    growth_matrix,
    omega_radius,
    recheck_certificates,
    synthesize_output_feedback,
    synthesize_practical,
    synthesize_state_feedback,
)

SINGLE = build_topology([[0]], [1])


def test_preset_system_shapes_and_stability(preset_sys):
    assert preset_sys.A_c.shape == (8, 8) and preset_sys.A_0.shape == (8, 8)
    assert spectral_abscissa(preset_sys.A_c) < 0
    assert spectral_abscissa(preset_sys.A_0) < 0


def test_single_follower_collapse():
    K = np.array([2.0, 3.0])
    sys_m = build_system_matrices(2, SINGLE, K, [1.0, 1.0])
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    np.testing.assert_array_equal(sys_m.A_c, A - B @ K[None, :])


def test_closed_loop_matches_naive_loops(rng):
    for _ in range(10):
        n = int(rng.integers(1, 4))
        topo = random_topology(int(rng.integers(1, 5)), rng)
        # gains from Hurwitz polynomials keep A - lambda B K stable for all lambda >= lambda_min
        K = np.poly(-rng.uniform(1.0, 3.0, n))[1:][::-1]
        try:
            sys_m = build_system_matrices(n, topo, K, K)
        except NotHurwitz:
            continue
        np.testing.assert_allclose(sys_m.A_c, naive_closed_loop(n, topo.laplacian_bar, K), atol=0)


def test_growth_matrix_structure():
    np.testing.assert_array_equal(growth_matrix([1.0, 2.0, 3.0]), [[1, 0, 0], [1, 2, 0], [1, 2, 3]])


def test_observer_gain_and_scaling_blocks(preset_sys):
    blk = preset_sys.A_g[:2, :2]
    np.testing.assert_array_equal(blk, [[2.0, 0.0], [2.0, 0.0]])
    np.testing.assert_array_equal(np.diag(preset_sys.D_blk), [2, 1] * 4)


def test_rejects_unstable_gains():
    with pytest.raises(NotHurwitz):
        build_system_matrices(2, manipulator_topology(), [-1.0, 1.0], [2.0, 2.0])
    with pytest.raises(MatrixError):
        build_system_matrices(2, manipulator_topology(), [1.0], [2.0, 2.0])
    with pytest.raises(MatrixError):
        build_system_matrices(2, manipulator_topology(), [8.0, 9.0], [2.0, 2.0], [-1.0, 0.0])


# -- state feedback -------------------------------------------------------

@pytest.mark.parametrize("K,kappa0,T,rho", [(3.0, 1e-3, 0.1, 0.5), (0.4, 0.2, 5.0, 0.0), (10.0, 1.0, 0.01, 2.0)])
def test_state_feedback_scalar_chain(K, kappa0, T, rho):
    sys_m = build_system_matrices(1, SINGLE, [K], [1.0], [rho])
    res = synthesize_state_feedback(sys_m, kappa0, T)
    # A_c = -K, D = 1: p0 = 1/(2K), scaled by max(1, K)
    p = max(1.0, K) / (2 * K)
    assert res.P_c[0, 0] == pytest.approx(p, rel=1e-12)
    assert res.b == pytest.approx(max((2 * p + kappa0 * p) / (2 * K * p), T), rel=1e-12)
    assert res.kappa2_or_btilde == pytest.approx(2 * rho, abs=1e-12)
    assert res.kappa1_or_b == pytest.approx(2 * rho, abs=1e-12)


def test_state_feedback_zero_growth_is_exactly_zero(preset):
    sys_m = build_system_matrices(2, preset.topology, preset.K, preset.G, [0.0, 0.0])
    res = synthesize_state_feedback(sys_m, 1e-3, 2.0)
    assert res.kappa1_or_b == 0.0 and res.kappa2_or_btilde == 0.0


def test_state_feedback_without_growth_rates(preset):
    sys_m = build_system_matrices(2, preset.topology, preset.K, preset.G)
    res = synthesize_state_feedback(sys_m, 1e-3, 2.0)
    assert res.kappa1_or_b is None
    assert {c.name for c in res.certificates} == {"lyapunov_Ac", "D_scaling", "decay_b"}


def test_state_feedback_preset_setup(preset_sys):
    res = synthesize_state_feedback(preset_sys, 1e-3, 2.0)
    assert res.all_certificates_pass
    assert res.b >= 2.0
    # frozen regression values of this construction
    assert res.b == pytest.approx(6.4056203719282045, rel=1e-9)
    assert res.kappa1_or_b == pytest.approx(160.46347819184345, rel=1e-9)


def test_b_monotone_in_kappa0(rng):
    done = 0
    while done < 50:
        n = int(rng.integers(1, 4))
        topo = random_topology(int(rng.integers(1, 5)), rng)
        K = np.poly(-rng.uniform(1.0, 3.0, n))[1:][::-1] * rng.uniform(1.0, 3.0)
        try:
            sys_m = build_system_matrices(n, topo, K, K)
        except NotHurwitz:
            continue
        k_lo = rng.uniform(1e-3, 1.0)
        k_hi = k_lo + rng.uniform(0.0, 5.0)
        lo = synthesize_state_feedback(sys_m, k_lo, 1e-6)
        hi = synthesize_state_feedback(sys_m, k_hi, 1e-6)
        assert hi.b_threshold >= lo.b_threshold * (1 - 1e-12)
        done += 1


# -- output feedback ------------------------------------------------------

def _scalar_output_oracle(K, G, c1, margin, kappa, dtheta, rho, T):
    p_c = (1 + margin) / (c1 * K)
    s_c = -2 * K * p_c
    p_0 = 1 / (2 * G)
    p_eps = (1 + dtheta) * p_c * G
    c = p_eps ** 2 / ((1 - c1) ** 2 * -s_c)
    b = max(p_0 * (2 + kappa) / c1, p_c * (2 + kappa) / (2 * margin), T)
    kbt = c * rho * (1 + math.sqrt(1 + p_0 / p_c))
    kb = kbt * max(1.0, 1.0 / c)
    return dict(p_c=p_c, p_0=p_0, c=c, b=b, admissible=1 / (p_c * G), kbt=kbt, kb=kb)


@pytest.mark.parametrize("K,G,c1,kappa,dtheta,rho,T", [
    (3.0, 2.0, 0.9, 1e-3, 0.05, 0.5, 0.5),
    (1.0, 5.0, 0.5, 0.3, 0.0, 0.0, 10.0),
    (0.7, 0.8, 0.2, 2.0, 0.1, 1.5, 1.0),
])
def test_output_feedback_scalar_blocks(K, G, c1, kappa, dtheta, rho, T):
    sys_m = build_system_matrices(1, SINGLE, [K], [G], [rho])
    res = synthesize_output_feedback(sys_m, kappa, c1, T, dtheta, lyapunov_margin=0.01)
    want = _scalar_output_oracle(K, G, c1, 0.01, kappa, dtheta, rho, T)
    assert res.P_c[0, 0] == pytest.approx(want["p_c"], rel=1e-12)
    assert res.P_0[0, 0] == pytest.approx(want["p_0"], rel=1e-12)
    assert res.admissible_dtheta == pytest.approx(want["admissible"], rel=1e-12)
    assert res.c == pytest.approx(want["c"], rel=1e-9)
    assert res.b == pytest.approx(want["b"], rel=1e-9)
    assert res.kappa2_or_btilde == pytest.approx(want["kbt"], rel=1e-9, abs=1e-15)
    assert res.kappa1_or_b == pytest.approx(want["kb"], rel=1e-9, abs=1e-15)
    assert res.all_certificates_pass


def test_output_feedback_preset_setup(preset_sys, of_synthesis):
    res = of_synthesis
    assert res.all_certificates_pass
    assert res.b >= 2.0
    # the admissible bound by a second route: scipy Lyapunov solver, spectral norm
    p_c = scipy.linalg.solve_continuous_lyapunov(preset_sys.A_c.T, -(2 * 1.01 / 0.9) * np.eye(8))
    assert res.admissible_dtheta == pytest.approx(1 / np.linalg.norm(p_c @ preset_sys.A_g, 2), rel=1e-9)
    # frozen regression values
    assert res.admissible_dtheta == pytest.approx(0.09046945999, rel=1e-9)
    assert res.c == pytest.approx(6467.555136758961, rel=1e-8)
    assert res.b == pytest.approx(718.8529528496938, rel=1e-8)
    # same order of magnitude as the published 0.1015
    assert 0.05 < res.admissible_dtheta < 0.2


def test_output_feedback_delta_bounds(of_synthesis, preset_sys):
    for name, P, A, delta in (("c", of_synthesis.P_c, preset_sys.A_c, of_synthesis.delta_Ac),
                              ("0", of_synthesis.P_0, preset_sys.A_0, of_synthesis.delta_A0)):
        s = P @ A + A.T @ P
        s = (s + s.T) / 2
        assert lambda_max(s - delta * np.diag(np.diag(s))) <= 1e-7 * (1 + np.linalg.norm(s, 2))


def test_output_feedback_zero_growth(preset):
    sys_m = build_system_matrices(2, preset.topology, preset.K, preset.G, [0.0, 0.0])
    res = synthesize_output_feedback(sys_m, 1e-3, 0.9, 2.0, 0.09)
    assert res.kappa1_or_b == 0.0 and res.kappa2_or_btilde == 0.0


def test_output_feedback_inadmissible(preset_sys):
    with pytest.raises(SensitivityInadmissible) as info:
        synthesize_output_feedback(preset_sys, 1e-3, 0.9, 2.0, 0.2)
    assert info.value.admissible == pytest.approx(0.09046945999, rel=1e-9)


def test_output_feedback_argument_checks(preset_sys):
    with pytest.raises(ValueError):
        synthesize_output_feedback(preset_sys, 1e-3, 1.2, 2.0, 0.05)
    with pytest.raises(ValueError):
        synthesize_output_feedback(preset_sys, -1.0, 0.9, 2.0, 0.05)
    with pytest.raises(ValueError):
        synthesize_output_feedback(preset_sys, 1e-3, 0.9, 2.0, 1.5)


def test_sensitivity_check(of_synthesis):
    adm = of_synthesis.admissible_dtheta
    ok = check_sensitivity_admissible(of_synthesis, [1e-12] * 4)
    assert ok.admissible and ok.margin == pytest.approx(adm)
    assert not check_sensitivity_admissible(of_synthesis, [adm + 1e-6]).admissible
    assert check_sensitivity_admissible(of_synthesis, [adm]).admissible


# -- practical ------------------------------------------------------------

def test_practical_zero_growth(preset):
    sys_m = build_system_matrices(2, preset.topology, preset.K, preset.G, [0.0, 0.0])
    res = synthesize_practical(sys_m, 1.98, 0.02, 1e-3, 0.9, 0.09, kappa_a=0.5)
    assert res.kappa1_or_b == 0.0
    assert res.gamma == pytest.approx(0.5)
    assert res.all_certificates_pass


def test_practical_preset_parameters(preset_sys, preset):
    res = synthesize_practical(preset_sys, 1.98, 0.02, 1e-3, 0.9, preset.fleet.dtheta[1:], kappa_a=1e-3)
    assert res.horizon == pytest.approx(2.0)
    assert res.b >= 2.0
    assert res.gamma > 0 and res.gamma_star > 0
    assert res.certificate("gain_b_constant_phase").passed
    assert res.all_certificates_pass
    assert res.mode is SynthesisMode.PRACTICAL


def test_practical_needs_growth_rates(preset):
    sys_m = build_system_matrices(2, preset.topology, preset.K, preset.G)
    with pytest.raises(MatrixError):
        synthesize_practical(sys_m, 1.98, 0.02)


def test_omega_radius_formula(preset_sys, preset):
    res = synthesize_practical(preset_sys, 1.98, 0.02, 1e-3, 0.9, 0.09)
    floor = min(np.linalg.eigvalsh(res.P_c)[0], res.c * np.linalg.eigvalsh(res.P_0)[0])
    want = 2 * 0.02 * math.sqrt(3.0) * (0.02 / 2.0) ** (res.gamma / 2) / (res.b * math.sqrt(floor))
    assert omega_radius(res, 3.0) == pytest.approx(want, rel=1e-12)


def test_tampered_certificate_is_detected(of_synthesis):
    cert = of_synthesis.certificates[0]
    bad = cert._replace(matrix=cert.matrix + 10 * np.eye(cert.matrix.shape[0]))
    assert not recheck_certificates([bad])[0].passed


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_synthesis_certificates_hold(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 4))
    topo = random_topology(int(r.integers(1, 5)), r)
    K = np.poly(-r.uniform(1.0, 3.0, n))[1:][::-1] * r.uniform(1.0, 3.0)
    G = np.poly(-r.uniform(1.0, 3.0, n))[1:][::-1]
    try:
        sys_m = build_system_matrices(n, topo, K, G, r.uniform(0, 1, n))
    except NotHurwitz:
        return
    assert synthesize_state_feedback(sys_m, r.uniform(1e-3, 1), 1.0).all_certificates_pass
    try:
        res = synthesize_output_feedback(sys_m, r.uniform(1e-3, 1), 0.9, 1.0, 0.0)
    except SensitivityInadmissible:
        return
    assert res.all_certificates_pass
