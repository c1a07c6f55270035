"""Block-matrix assembly and matrix-pencil gain synthesis.

Three synthesis routes share the same building blocks:

* state feedback: ``P_c``, the proportional coefficient ``b`` and the
  nonlinearity constants ``kappa_1``, ``kappa_2``;
* output feedback with a multiplicative sensor error: ``P_c``, ``P_0``, the
  observer weight ``c``, ``b`` and ``kappa_b``, ``kappa_b_tilde``;
* the practical (bounded gain) variant, which additionally enforces
  ``kappa_a > kappa_b * (t_f + delta)`` and recomputes ``b``.

Every inequality that the returned scalars are meant to satisfy is stored as
a :class:`Certificate` holding the assembled symmetric matrix and its largest
eigenvalue.  All stacked vectors are agent-major: entry ``(k, i)`` of an
``nN`` vector sits at index ``k * n + i``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import MatrixError, NotHurwitz, SensitivityInadmissible
from .graph import GraphTopology
from .pencil import (
    HURWITZ_TOL,
    Pencil,
    elementwise_abs,
    lambda_max,
    lambda_min,
    pencil_threshold_max,
    pencil_threshold_max_semidefinite,
    pencil_threshold_min,
    solve_lyapunov_pair,
    spectral_abscissa,
    symmetrize,
)

CERT_RTOL = 1e-7
DEFAULT_KAPPA = 1e-3
DEFAULT_C1 = 0.9
# P_c solves c1 (P A_c + A_c^T P) = -2 (1 + margin) I in output-feedback modes
DEFAULT_LYAPUNOV_MARGIN = 0.01


def shift_matrix(n: int) -> np.ndarray:
    return np.eye(n, k=1)


def growth_matrix(rho_k) -> np.ndarray:
    """Lower-triangular ``A_rho_k`` whose row ``i`` is ``(rho_1, ..., rho_i, 0, ...)``."""
    rho_k = np.asarray(rho_k, dtype=float)
    return np.tril(np.tile(rho_k, (rho_k.size, 1)))


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """Stacked matrices of the follower network for a given ``(K, G, rho)``."""

    n: int
    N: int
    A: np.ndarray
    B_col: np.ndarray
    C_row: np.ndarray
    K: np.ndarray
    G: np.ndarray
    A_c: np.ndarray
    A_0: np.ndarray
    D_blk: np.ndarray
    A_g: np.ndarray
    A_rho: np.ndarray | None
    laplacian_bar: np.ndarray

    @property
    def size(self) -> int:
        return self.n * self.N


def build_system_matrices(n: int, topology: GraphTopology, K, G, rho=None) -> SystemMatrices:
    """Assemble ``A_c``, ``A_0``, ``D``, ``A_g`` and ``A_rho``.

    Parameters
    ----------
    n : int
        Agent state dimension.
    topology : GraphTopology
    K, G : array_like, length n
        Feedback and observer gains (row vectors).
    rho : array_like, optional
        Growth rates, either one length-n vector shared by all followers or an
        ``N x n`` array.  ``None`` means unknown; the nonlinearity constants
        are then not computed.

    Raises
    ------
    NotHurwitz
        ``A_c`` or ``A_0`` is not Hurwitz.
    """
    K = np.asarray(K, dtype=float).reshape(-1)
    G = np.asarray(G, dtype=float).reshape(-1)
    if K.size != n or G.size != n:
        raise MatrixError(f"K and G must have length n = {n}")
    N = topology.n_agents
    A = shift_matrix(n)
    B_col = np.zeros((n, 1))
    B_col[-1, 0] = 1.0
    C_row = np.zeros((1, n))
    C_row[0, 0] = 1.0
    lbar = np.array(topology.laplacian_bar)

    eye_n = np.eye(N)
    A_c = np.kron(eye_n, A) - np.kron(lbar, B_col @ K[None, :])
    A_0 = np.kron(eye_n, A - G[:, None] @ C_row)
    D_blk = np.kron(eye_n, np.diag(np.arange(n, 0, -1, dtype=float)))
    ag_k = np.zeros((n, n))
    ag_k[:, 0] = G
    A_g = np.kron(eye_n, ag_k)

    A_rho = None
    if rho is not None:
        rho = np.asarray(rho, dtype=float)
        if rho.ndim == 1:
            rho = np.tile(rho, (N, 1))
        if rho.shape != (N, n):
            raise MatrixError(f"rho must have shape ({n},) or ({N}, {n}), got {rho.shape}")
        if np.any(rho < 0):
            raise MatrixError("growth rates must be nonnegative")
        A_rho = scipy.linalg.block_diag(*[growth_matrix(r) for r in rho])

    for name, mat in (("A_c", A_c), ("A_0", A_0)):
        abscissa = spectral_abscissa(mat)
        if abscissa >= -HURWITZ_TOL:
            raise NotHurwitz(name, abscissa)

    return SystemMatrices(
        n=n, N=N, A=A, B_col=B_col, C_row=C_row, K=K, G=G,
        A_c=A_c, A_0=A_0, D_blk=D_blk, A_g=A_g, A_rho=A_rho, laplacian_bar=lbar,
    )


class SynthesisMode(enum.Enum):
    STATE_FEEDBACK = "state_feedback"
    OUTPUT_FEEDBACK = "output_feedback"
    PRACTICAL = "practical"


class Certificate(NamedTuple):
    """An assembled inequality ``matrix <= 0`` and its largest eigenvalue."""

    name: str
    matrix: np.ndarray
    lambda_max: float

    @property
    def tolerance(self) -> float:
        return CERT_RTOL * (1.0 + float(np.linalg.norm(self.matrix, 2)))

    @property
    def passed(self) -> bool:
        return bool(self.lambda_max <= self.tolerance)


def make_certificate(name: str, matrix) -> Certificate:
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    return Certificate(name, matrix, lambda_max(matrix))


@dataclass(eq=False)
class SynthesisResult:
    """Everything the synthesis produced.

    ``kappa0_or_a``, ``kappa1_or_b`` and ``kappa2_or_btilde`` hold
    ``(kappa_0, kappa_1, kappa_2)`` for state feedback and
    ``(kappa_a, kappa_b, kappa_b_tilde)`` for the output-feedback modes.  The
    nonlinearity constants are ``None`` when no growth rates were supplied.
    """

    mode: SynthesisMode
    horizon: float
    P_c: np.ndarray
    b: float
    kappa0_or_a: float
    kappa1_or_b: float | None = None
    kappa2_or_btilde: float | None = None
    P_0: np.ndarray | None = None
    c: float | None = None
    c1: float | None = None
    delta_Ac: float | None = None
    delta_A0: float | None = None
    admissible_dtheta: float | None = None
    dtheta_max: float | None = None
    gamma: float | None = None
    gamma_star: float | None = None
    t_f: float | None = None
    delta: float | None = None
    b_threshold: float | None = None
    certificates: list[Certificate] = field(default_factory=list)

    @property
    def all_certificates_pass(self) -> bool:
        return all(cert.passed for cert in self.certificates)

    def certificate(self, name: str) -> Certificate:
        for cert in self.certificates:
            if cert.name == name:
                return cert
        raise KeyError(name)


def _lyapunov_form(p, a):
    return symmetrize(p @ a + a.T @ p)


def _diag_part(q):
    return np.diag(np.diag(q))


# -- state feedback -------------------------------------------------------

def state_feedback_blocks(P_c, sys: SystemMatrices, kappa0: float):
    """``(Q1, Q2)`` such that ``b Q2 + Q1 <= 0`` gives ``dV/dtau <= -kappa0 V``."""
    D = sys.D_blk
    q1 = symmetrize(P_c @ D + D @ P_c) + kappa0 * P_c
    q2 = _lyapunov_form(P_c, sys.A_c)
    return q1, q2


def growth_blocks(P_c, A_rho):
    """``(A_rho^T |P|_e + |P|_e A_rho, diag(P))`` for the state-feedback bound."""
    abs_p = elementwise_abs(P_c)
    return symmetrize(A_rho.T @ abs_p + abs_p @ A_rho), _diag_part(P_c)


def synthesize_state_feedback(sys: SystemMatrices, kappa0: float = DEFAULT_KAPPA, T: float = 1.0) -> SynthesisResult:
    """Pick ``P_c``, ``b`` and ``kappa_1``, ``kappa_2`` for the state-feedback protocol.

    ``P_c`` satisfies ``P_c A_c + A_c^T P_c <= -I`` and ``P_c D + D P_c >= I``;
    ``b = max{sigma(Q1, -Q2), T}`` with ``Q1 = P_c D + D P_c + kappa0 P_c`` and
    ``Q2 = P_c A_c + A_c^T P_c``.
    """
    if kappa0 <= 0 or T <= 0:
        raise ValueError("kappa0 and T must be positive")
    P_c = solve_lyapunov_pair(sys.A_c, sys.D_blk, 1.0)
    q1, q2 = state_feedback_blocks(P_c, sys, kappa0)
    b_thr = pencil_threshold_max(Pencil(q1, -q2))
    b = max(b_thr, T)

    kappa1 = kappa2 = None
    if sys.A_rho is not None:
        if not np.any(sys.A_rho):
            kappa1 = kappa2 = 0.0
        else:
            grow, p_bar = growth_blocks(P_c, sys.A_rho)
            kappa2 = pencil_threshold_max(Pencil(grow, p_bar))
            kappa1 = pencil_threshold_max(Pencil(kappa2 * p_bar, P_c))

    res = SynthesisResult(
        mode=SynthesisMode.STATE_FEEDBACK,
        horizon=float(T),
        P_c=P_c,
        b=float(b),
        b_threshold=float(b_thr),
        kappa0_or_a=float(kappa0),
        kappa1_or_b=kappa1,
        kappa2_or_btilde=kappa2,
    )
    res.certificates = assemble_certificates(sys, res)
    return res


# -- output feedback ------------------------------------------------------

def admissible_sensitivity(P_c, A_g, norm: str = "spectral") -> float:
    """Largest tolerated sensor deviation ``1 / |P_c A_g|``."""
    ord_ = {"spectral": 2, "frobenius": "fro"}[norm]
    return 1.0 / float(np.linalg.norm(P_c @ A_g, ord_))


def observer_weight_blocks(P_c, P_0, sys: SystemMatrices, c1, delta_Ac, delta_A0, dtheta_max):
    """``(Q_c1, Q_c2)`` over ``[|eps|, |eta_hat|]``; ``c Q_c1 + Q_c2 <= 0`` is the target."""
    m = sys.size
    abar_c = _diag_part(_lyapunov_form(P_c, sys.A_c))
    abar_0 = _diag_part(_lyapunov_form(P_0, sys.A_0))
    p_eps = elementwise_abs((1.0 + dtheta_max) * (P_c @ sys.A_g))
    zero = np.zeros((m, m))
    q_c1 = np.block([[(1 - c1) * delta_A0 * abar_0, zero], [zero, zero]])
    q_c2 = np.block([[zero, p_eps.T], [p_eps, (1 - c1) * delta_Ac * abar_c]])
    return q_c1, q_c2


def gain_blocks(P_c, P_0, sys: SystemMatrices, c1, c, kappa_a):
    """``(Q_b1, Q_b2)`` over ``[eps, eta_hat]``; ``b Q_b1 + Q_b2 <= 0`` is the target."""
    m = sys.size
    D = sys.D_blk
    q_b1 = scipy.linalg.block_diag(
        c1 * c * _lyapunov_form(P_0, sys.A_0),
        c1 * _lyapunov_form(P_c, sys.A_c) + 2.0 * np.eye(m),
    )
    q_b2 = scipy.linalg.block_diag(
        c * symmetrize(P_0 @ D + D @ P_0) + c * kappa_a * P_0,
        symmetrize(P_c @ D + D @ P_c) + kappa_a * P_c,
    )
    return q_b1, q_b2


def nonlinearity_blocks(P_c, P_0, A_rho, c):
    """``(Q_ka, Q_kb, Q_kc, Q_kd_unit)`` bounding the uncertain-nonlinearity term.

    ``Q_kd = kappa_b_tilde * Q_kd_unit``.
    """
    m = P_c.shape[0]
    abs_p0 = elementwise_abs(P_0)
    p0_bar, pc_bar = _diag_part(P_0), _diag_part(P_c)
    q_ka = -scipy.linalg.block_diag(p0_bar, pc_bar)
    q_kb = c * np.block([
        [abs_p0 @ A_rho + A_rho.T @ abs_p0, abs_p0 @ A_rho],
        [A_rho.T @ abs_p0, np.zeros((m, m))],
    ])
    q_kc = -scipy.linalg.block_diag(c * P_0, P_c)
    return q_ka, symmetrize(q_kb), q_kc, -q_ka


def _dtheta_max(dtheta) -> float:
    arr = np.atleast_1d(np.asarray(dtheta, dtype=float))
    if arr.size == 0 or np.any(arr < 0) or np.any(arr >= 1):
        raise ValueError("sensor deviations must lie in [0, 1)")
    return float(arr.max())


def synthesize_output_feedback(
    sys: SystemMatrices,
    kappa_a: float = DEFAULT_KAPPA,
    c1: float = DEFAULT_C1,
    T: float = 1.0,
    dtheta=0.0,
    lyapunov_margin: float = DEFAULT_LYAPUNOV_MARGIN,
    norm: str = "spectral",
) -> SynthesisResult:
    """Observer weight ``c``, coefficient ``b`` and nonlinearity constants.

    Parameters
    ----------
    sys : SystemMatrices
    kappa_a : float
        Requested decay rate on the stretched time axis.
    c1 : float
        Split between the observer-coupling and the gain inequalities, in (0, 1).
    T : float
        Settling horizon; ``b`` is never below it.
    dtheta : float or sequence of float
        Worst-case sensor deviations ``Delta_theta_k``; only the maximum is used.
    lyapunov_margin : float
        ``P_c`` solves ``c1 (P A_c + A_c^T P) = -2 (1 + margin) I``.  A positive
        margin makes the ``eta_hat`` block of ``Q_b1`` strictly negative.
    norm : {"spectral", "frobenius"}
        Matrix norm in the admissibility bound ``1 / |P_c A_g|``.

    Raises
    ------
    SensitivityInadmissible
        ``max(dtheta)`` exceeds ``1 / |P_c A_g|``.
    """
    if kappa_a <= 0 or T <= 0:
        raise ValueError("kappa_a and T must be positive")
    if not 0 < c1 < 1:
        raise ValueError("c1 must lie in (0, 1)")
    if lyapunov_margin <= 0:
        raise ValueError("lyapunov_margin must be positive")
    dmax = _dtheta_max(dtheta)

    P_c = solve_lyapunov_pair(sys.A_c, None, 2.0 * (1.0 + lyapunov_margin) / c1)
    P_0 = solve_lyapunov_pair(sys.A_0, None, 1.0)
    s_c = _lyapunov_form(P_c, sys.A_c)
    s_0 = _lyapunov_form(P_0, sys.A_0)
    delta_Ac = pencil_threshold_min(Pencil(s_c, _diag_part(s_c)))
    delta_A0 = pencil_threshold_min(Pencil(s_0, _diag_part(s_0)))

    admissible = admissible_sensitivity(P_c, sys.A_g, norm)
    if dmax > admissible:
        raise SensitivityInadmissible(dmax, admissible)

    q_c1, q_c2 = observer_weight_blocks(P_c, P_0, sys, c1, delta_Ac, delta_A0, dmax)
    c = pencil_threshold_max_semidefinite(Pencil(q_c2, -q_c1))

    q_b1, q_b2 = gain_blocks(P_c, P_0, sys, c1, c, kappa_a)
    b_thr = pencil_threshold_max(Pencil(q_b2, -q_b1))
    b = max(b_thr, T)

    kappa_b = kappa_bt = None
    if sys.A_rho is not None:
        if not np.any(sys.A_rho):
            kappa_b = kappa_bt = 0.0
        else:
            q_ka, q_kb, q_kc, q_kd_unit = nonlinearity_blocks(P_c, P_0, sys.A_rho, c)
            kappa_bt = pencil_threshold_max(Pencil(q_kb, -q_ka))
            kappa_b = pencil_threshold_max(Pencil(kappa_bt * q_kd_unit, -q_kc))

    res = SynthesisResult(
        mode=SynthesisMode.OUTPUT_FEEDBACK,
        horizon=float(T),
        P_c=P_c,
        P_0=P_0,
        c=float(c),
        c1=float(c1),
        b=float(b),
        b_threshold=float(b_thr),
        kappa0_or_a=float(kappa_a),
        kappa1_or_b=kappa_b,
        kappa2_or_btilde=kappa_bt,
        delta_Ac=float(delta_Ac),
        delta_A0=float(delta_A0),
        admissible_dtheta=admissible,
        dtheta_max=dmax,
    )
    res.certificates = assemble_certificates(sys, res)
    return res


def synthesize_practical(
    sys: SystemMatrices,
    t_f: float,
    delta: float,
    kappa_a_min_margin: float = DEFAULT_KAPPA,
    c1: float = DEFAULT_C1,
    dtheta=0.0,
    kappa_a: float | None = None,
    lyapunov_margin: float = DEFAULT_LYAPUNOV_MARGIN,
    norm: str = "spectral",
) -> SynthesisResult:
    """Synthesis for the saturated gain ``alpha_0``.

    Runs the output-feedback synthesis with ``T = t_f + delta``, then raises
    ``kappa_a`` to at least ``kappa_b T + margin`` and recomputes ``b`` so that
    both the growing-gain phase and the constant-gain phase decay.  ``b`` is
    the larger of the two thresholds (with and without the ``D`` terms); the
    one with ``D`` always dominates since those terms are positive definite.

    Growth rates are required: without them ``kappa_b`` is unknown.
    """
    if t_f < 0 or delta <= 0:
        raise ValueError("need t_f >= 0 and delta > 0")
    if kappa_a_min_margin <= 0:
        raise ValueError("kappa_a_min_margin must be positive")
    if sys.A_rho is None:
        raise MatrixError("practical synthesis needs growth rates")
    T = float(t_f) + float(delta)
    base = synthesize_output_feedback(
        sys, kappa_a=kappa_a or DEFAULT_KAPPA, c1=c1, T=T, dtheta=dtheta,
        lyapunov_margin=lyapunov_margin, norm=norm,
    )
    kappa_b = base.kappa1_or_b
    ka_min = kappa_b * T + kappa_a_min_margin
    ka = max(kappa_a or 0.0, ka_min)

    P_c, P_0, c = base.P_c, base.P_0, base.c
    q_b1, q_b2 = gain_blocks(P_c, P_0, sys, c1, c, ka)
    q_b2_star = ka * scipy.linalg.block_diag(c * P_0, P_c)
    b_growing = pencil_threshold_max(Pencil(q_b2, -q_b1))
    b_const = pencil_threshold_max(Pencil(q_b2_star, -q_b1))
    b = max(b_growing, b_const, T)

    gamma = ka - kappa_b * T
    gamma_star = ka / delta - kappa_b
    res = SynthesisResult(
        mode=SynthesisMode.PRACTICAL,
        horizon=T,
        P_c=P_c,
        P_0=P_0,
        c=c,
        c1=float(c1),
        b=float(b),
        b_threshold=float(max(b_growing, b_const)),
        kappa0_or_a=float(ka),
        kappa1_or_b=kappa_b,
        kappa2_or_btilde=base.kappa2_or_btilde,
        delta_Ac=base.delta_Ac,
        delta_A0=base.delta_A0,
        admissible_dtheta=base.admissible_dtheta,
        dtheta_max=base.dtheta_max,
        gamma=float(gamma),
        gamma_star=float(gamma_star),
        t_f=float(t_f),
        delta=float(delta),
    )
    res.certificates = assemble_certificates(sys, res)
    return res


def assemble_certificates(sys: SystemMatrices, res: SynthesisResult) -> list[Certificate]:
    """Rebuild every inequality the scalars in ``res`` are supposed to satisfy.

    Only ``res.P_c``, ``res.P_0`` and the scalar fields are read, so a stored
    result can be re-certified against freshly assembled system matrices.
    """
    m = sys.size
    eye = np.eye(m)
    P_c = res.P_c
    s_c = _lyapunov_form(P_c, sys.A_c)
    certs = []
    if res.mode is SynthesisMode.STATE_FEEDBACK:
        q1, q2 = state_feedback_blocks(P_c, sys, res.kappa0_or_a)
        certs += [
            make_certificate("lyapunov_Ac", s_c + eye),
            make_certificate("D_scaling", eye - symmetrize(P_c @ sys.D_blk + sys.D_blk @ P_c)),
            make_certificate("decay_b", res.b * q2 + q1),
        ]
        if sys.A_rho is not None and res.kappa1_or_b is not None:
            grow, p_bar = growth_blocks(P_c, sys.A_rho)
            k1, k2 = res.kappa1_or_b, res.kappa2_or_btilde
            certs += [
                make_certificate("growth_kappa2", grow - k2 * p_bar),
                make_certificate("growth_kappa1", k2 * p_bar - k1 * P_c),
            ]
        return certs

    P_0, c, c1 = res.P_0, res.c, res.c1
    s_0 = _lyapunov_form(P_0, sys.A_0)
    q_c1, q_c2 = observer_weight_blocks(P_c, P_0, sys, c1, res.delta_Ac, res.delta_A0, res.dtheta_max)
    q_b1, q_b2 = gain_blocks(P_c, P_0, sys, c1, c, res.kappa0_or_a)
    certs += [
        make_certificate("lyapunov_Ac", c1 * s_c + 2.0 * eye),
        make_certificate("lyapunov_A0", s_0 + eye),
        make_certificate("delta_Ac", s_c - res.delta_Ac * _diag_part(s_c)),
        make_certificate("delta_A0", s_0 - res.delta_A0 * _diag_part(s_0)),
        make_certificate("sensitivity_admissible", np.array([[res.dtheta_max - res.admissible_dtheta]])),
        make_certificate("observer_weight_c", c * q_c1 + q_c2),
        make_certificate("gain_b", res.b * q_b1 + q_b2),
    ]
    if sys.A_rho is not None and res.kappa1_or_b is not None:
        q_ka, q_kb, q_kc, q_kd_unit = nonlinearity_blocks(P_c, P_0, sys.A_rho, c)
        kb, kbt = res.kappa1_or_b, res.kappa2_or_btilde
        certs += [
            make_certificate("nonlinearity_kappa_b_tilde", kbt * q_ka + q_kb),
            make_certificate("nonlinearity_kappa_b", kb * q_kc + kbt * q_kd_unit),
        ]
    if res.mode is SynthesisMode.PRACTICAL:
        q_b2_star = res.kappa0_or_a * scipy.linalg.block_diag(c * P_0, P_c)
        certs += [
            make_certificate("gain_b_constant_phase", res.b * q_b1 + q_b2_star),
            make_certificate("gamma_positive", np.array([[-res.gamma]])),
            make_certificate("gamma_star_positive", np.array([[-res.gamma_star]])),
        ]
    return certs


class AdmissibilityCheck(NamedTuple):
    admissible: bool
    margin: float


def check_sensitivity_admissible(result: SynthesisResult, dtheta) -> AdmissibilityCheck:
    """Compare the worst sensor deviation with ``result.admissible_dtheta``."""
    if result.admissible_dtheta is None:
        raise ValueError("result carries no sensitivity bound (state-feedback synthesis)")
    dmax = float(np.max(np.atleast_1d(np.asarray(dtheta, dtype=float))))
    margin = result.admissible_dtheta - dmax
    return AdmissibilityCheck(bool(margin >= 0), float(margin))


def omega_radius(result: SynthesisResult, V0: float) -> float:
    """Radius of the set the practical protocol reaches by ``t_f``."""
    if result.mode is not SynthesisMode.PRACTICAL:
        raise ValueError("omega radius is defined for practical synthesis only")
    T = result.t_f + result.delta
    floor = min(lambda_min(result.P_c), result.c * lambda_min(result.P_0))
    decay = (result.delta / T) ** (result.gamma / 2.0)
    return 2.0 * result.delta * np.sqrt(V0) * decay / (result.b * np.sqrt(floor))


def recheck_certificates(certificates) -> list[Certificate]:
    """Recompute ``lambda_max`` of stored certificate matrices."""
    return [make_certificate(cert.name, cert.matrix) for cert in certificates]
