"""Agent models, the three protocols and the closed-loop vector field.

Each agent obeys the chain of integrators with matched nonlinearity

    x_k' = A x_k + B u_k + F_k(t, x_k),    y_k = theta_k(t) x_{k,1},

where agent 0 is the leader (``u_0 = 0``) and agents ``1..N`` are followers.
Fleet-level arrays have one row per agent, leader first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .graph import GraphTopology, manipulator_topology
from .synthesis import SystemMatrices
from .timewarp import GainSchedule, Mode, alpha, alpha_dot, injection_vector, r_gain, scaling_diagonal

GRAVITY = 9.8


@dataclass(frozen=True)
class AgentModel:
    """One agent: its nonlinearity, sensor sensitivity and growth rates.

    ``F(t, x)`` returns the matched nonlinearity as an n-vector and
    ``theta(t)`` the multiplicative sensor gain.  ``dtheta`` bounds
    ``|theta(t) - 1|``.
    """

    index: int
    n: int
    F: Callable[[float, np.ndarray], np.ndarray]
    theta: Callable[[float], float]
    dtheta: float = 0.0
    rho: np.ndarray | None = None


class FleetState(NamedTuple):
    t: float
    x: np.ndarray
    x_hat: np.ndarray | None = None


def _zero_nonlinearity(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _unit_sensor(t):
    return 1.0


@dataclass(eq=False)
class AgentFleet:
    """Leader plus followers with stacked evaluation of ``F`` and ``theta``.

    ``F_fleet(t, X)`` maps an ``(N+1, n)`` state array to the ``(N+1, n)``
    nonlinearity array and ``theta_fleet(t)`` returns the ``N+1`` sensor
    gains.  When they are not given they are assembled from the agents.
    """

    agents: list[AgentModel]
    topology: GraphTopology
    x0: np.ndarray
    x_hat0: np.ndarray | None = None
    F_fleet: Callable[[float, np.ndarray], np.ndarray] | None = None
    theta_fleet: Callable[[float], np.ndarray] | None = None
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x0 = np.array(self.x0, dtype=float)
        n_total = self.topology.n_agents + 1
        if len(self.agents) != n_total:
            raise ValueError(f"expected {n_total} agents (leader first), got {len(self.agents)}")
        if self.x0.shape != (n_total, self.n):
            raise ValueError(f"x0 must have shape ({n_total}, {self.n})")
        # observers start at zero unless given
        self.x_hat0 = np.zeros_like(self.x0) if self.x_hat0 is None else np.array(self.x_hat0, dtype=float)
        if self.F_fleet is None:
            self.F_fleet = self._stacked_F
        if self.theta_fleet is None:
            self.theta_fleet = self._stacked_theta
        if not self.labels:
            self.labels = ["leader"] + [f"follower{k}" for k in range(1, n_total)]

    @property
    def n(self) -> int:
        return self.agents[0].n

    @property
    def N(self) -> int:
        return self.topology.n_agents

    @property
    def dtheta(self) -> np.ndarray:
        return np.array([a.dtheta for a in self.agents])

    @property
    def rho(self) -> np.ndarray | None:
        rates = [a.rho for a in self.agents[1:]]
        if any(r is None for r in rates):
            return None
        return np.array(rates, dtype=float)

    def _stacked_F(self, t, X):
        return np.array([a.F(t, X[k]) for k, a in enumerate(self.agents)], dtype=float)

    def _stacked_theta(self, t):
        return np.array([a.theta(t) for a in self.agents], dtype=float)


# -- manipulator preset ---------------------------------------------------

MANIPULATOR_PARAMS = {
    "J": (8.5, 10.0, 10.0, 10.0, 8.5),
    "B": (1.4, 1.6, 1.6, 1.4, 1.6),
    "h": (1.0, 1.0, 0.8, 1.2, 1.2),
    "m": (1.3, 1.0, 1.3, 1.0, 1.0),
}
MANIPULATOR_SENSOR_AMPLITUDES = (0.0, 0.08, 0.09, -0.08, -0.09)
MANIPULATOR_RHO = (1.8, 0.19)
MANIPULATOR_K = (8.0, 9.0)
MANIPULATOR_G = (2.0, 2.0)


def manipulator_nonlinearity(J, B, m, h):
    """``F(t, x) = (0, -B x2 / J - m g h sin(x1 / J))`` for ``x = (J q, J q')``."""
    def F(t, x):
        return np.array([0.0, -B * x[1] / J - m * GRAVITY * h * math.sin(x[0] / J)])
    return F


def oscillating_sensor(amplitude: float, freq: float = 10.0):
    def theta(t):
        return 1.0 + amplitude * abs(math.sin(freq * t))
    return theta


class Preset(NamedTuple):
    fleet: AgentFleet
    topology: GraphTopology
    K: np.ndarray
    G: np.ndarray


def manipulator_fleet(params=None, amplitudes=None, x0=None, rho=MANIPULATOR_RHO,
                      topology: GraphTopology | None = None, x_hat0=None) -> AgentFleet:
    """Single-link manipulators with oscillating sensor gains.

    ``params`` maps ``J``, ``B``, ``h``, ``m`` to per-agent sequences (leader
    first); ``amplitudes`` are the ``varkappa_k`` in
    ``theta_k(t) = 1 + varkappa_k |sin(10 t)|``.
    """
    topology = topology or manipulator_topology()
    count = topology.n_agents + 1
    p = {key: np.asarray(val, dtype=float) for key, val in (params or MANIPULATOR_PARAMS).items()}
    amps = np.asarray(MANIPULATOR_SENSOR_AMPLITUDES if amplitudes is None else amplitudes, dtype=float)
    if x0 is None:
        x0 = np.array([[k, k] for k in range(count)], dtype=float)
    for key in ("J", "B", "h", "m"):
        if p[key].shape != (count,):
            raise ValueError(f"manipulator parameter {key} needs {count} entries")
    if amps.shape != (count,):
        raise ValueError(f"need {count} sensor amplitudes")
    rho_arr = None if rho is None else np.asarray(rho, dtype=float)

    agents = [
        AgentModel(
            index=k, n=2,
            F=manipulator_nonlinearity(p["J"][k], p["B"][k], p["m"][k], p["h"][k]),
            theta=oscillating_sensor(amps[k]),
            dtheta=abs(float(amps[k])),
            rho=None if (k == 0 or rho_arr is None) else rho_arr,
        )
        for k in range(count)
    ]
    J, Bv, mgh = p["J"], p["B"], p["m"] * GRAVITY * p["h"]

    def F_fleet(t, X):
        out = np.zeros_like(X)
        out[:, 1] = -Bv * X[:, 1] / J - mgh * np.sin(X[:, 0] / J)
        return out

    def theta_fleet(t):
        return 1.0 + amps * abs(math.sin(10.0 * t))

    return AgentFleet(agents, topology, x0, x_hat0=x_hat0, F_fleet=F_fleet, theta_fleet=theta_fleet)


def manipulator_preset(amplitudes=None) -> Preset:
    """Leader plus four followers on a path, first follower pinned."""
    fleet = manipulator_fleet(amplitudes=amplitudes)
    return Preset(fleet, fleet.topology, np.array(MANIPULATOR_K), np.array(MANIPULATOR_G))


def random_sensor_amplitudes(count: int, bound: float, rng: np.random.Generator) -> np.ndarray:
    """Leader amplitude 0, followers uniform in ``(-bound, bound)``."""
    amps = rng.uniform(-bound, bound, size=count)
    amps[0] = 0.0
    return amps


def integrator_fleet(topology: GraphTopology, n: int, x0, amplitudes=None, x_hat0=None) -> AgentFleet:
    """Pure chains of integrators (``F = 0``), optionally with sensor errors."""
    count = topology.n_agents + 1
    amps = np.zeros(count) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    agents = [
        AgentModel(k, n, _zero_nonlinearity, oscillating_sensor(amps[k]) if amps[k] else _unit_sensor,
                   abs(float(amps[k])), None if k == 0 else np.zeros(n))
        for k in range(count)
    ]

    def F_fleet(t, X):
        return np.zeros_like(X)

    def theta_fleet(t):
        return 1.0 + amps * abs(math.sin(10.0 * t))

    return AgentFleet(agents, topology, x0, x_hat0=x_hat0, F_fleet=F_fleet, theta_fleet=theta_fleet)


# -- protocols, per agent -------------------------------------------------

def _r(sched: GainSchedule, t: float) -> float:
    return r_gain(sched, t)


def _consensus_control(k, X, topology, K, sched, t):
    lam = scaling_diagonal(_r(sched, t), sched.n)
    acc = np.zeros(X.shape[1])
    for j in topology.neighbors(k):
        acc += X[k] - X[j]
    if topology.pinning[k - 1]:
        acc += X[k] - X[0]
    return -float(np.dot(K, lam * acc))


def state_feedback_control(k: int, fleet: FleetState, topology: GraphTopology, K, sched: GainSchedule) -> float:
    """``u_k = -K Lambda_r (sum_j a_kj (x_k - x_j) + b_k (x_k - x_0))``."""
    if k < 1:
        raise ValueError("the leader has no control input")
    return _consensus_control(k, fleet.x, topology, np.asarray(K, dtype=float), sched, fleet.t)


def output_feedback_control(k: int, fleet: FleetState, topology: GraphTopology, K, sched: GainSchedule) -> float:
    """Same protocol evaluated on the observer states."""
    if k < 1:
        raise ValueError("the leader has no control input")
    return _consensus_control(k, fleet.x_hat, topology, np.asarray(K, dtype=float), sched, fleet.t)


def observer_step_rhs(k: int, fleet: FleetState, u_k: float, y_k: float, G, sched: GainSchedule, t: float) -> np.ndarray:
    """``A x_hat_k + B u_k + r^{n+1} Lambda_r^{-1} G^T (y_k - x_hat_{k,1})``."""
    xh = fleet.x_hat[k]
    n = xh.size
    out = np.empty(n)
    out[:-1] = xh[1:]
    out[-1] = u_k
    out += injection_vector(_r(sched, t), n) * np.asarray(G, dtype=float) * (y_k - xh[0])
    return out


# -- closed loop ----------------------------------------------------------

class ScaledErrors(NamedTuple):
    eta: np.ndarray
    eta_hat: np.ndarray | None
    eps: np.ndarray | None


@dataclass(eq=False)
class ClosedLoop:
    """Fleet, gains and schedule bundled into a vector field.

    The flat state is ``x.ravel()`` for state feedback and
    ``concat(x.ravel(), x_hat.ravel())`` for output feedback.
    """

    fleet: AgentFleet
    K: np.ndarray
    G: np.ndarray
    sched: GainSchedule
    output_feedback: bool = True

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        self._lbar = np.array(self.fleet.topology.laplacian_bar)
        self._shape = (self.fleet.N + 1, self.fleet.n)

    @property
    def dim(self) -> int:
        size = self._shape[0] * self._shape[1]
        return 2 * size if self.output_feedback else size

    def pack(self, X, X_hat=None) -> np.ndarray:
        if self.output_feedback:
            return np.concatenate([np.ravel(X), np.ravel(X_hat)])
        return np.array(np.ravel(X), dtype=float)

    def unpack(self, z):
        size = self._shape[0] * self._shape[1]
        X = z[:size].reshape(self._shape)
        X_hat = z[size:].reshape(self._shape) if self.output_feedback else None
        return X, X_hat

    def initial_state(self) -> np.ndarray:
        return self.pack(self.fleet.x0, self.fleet.x_hat0)

    def controls(self, t, X, X_hat=None) -> np.ndarray:
        """Inputs for all agents, ``u_0 = 0``; equals ``-(L_bar kron K)`` times the scaled errors."""
        src = X_hat if self.output_feedback else X
        lam = scaling_diagonal(_r(self.sched, t), self.fleet.n)
        rel = (src[1:] - src[0]) * lam
        u = np.zeros(self._shape[0])
        u[1:] = -(self._lbar @ rel) @ self.K
        return u

    def rhs(self, t, z) -> np.ndarray:
        X, X_hat = self.unpack(z)
        u = self.controls(t, X, X_hat)
        dX = np.empty_like(X)
        dX[:, :-1] = X[:, 1:]
        dX[:, -1] = u
        dX += self.fleet.F_fleet(t, X)
        if not self.output_feedback:
            return dX.ravel()
        y = self.fleet.theta_fleet(t) * X[:, 0]
        inj = injection_vector(_r(self.sched, t), self.fleet.n) * self.G
        dXh = np.empty_like(X_hat)
        dXh[:, :-1] = X_hat[:, 1:]
        dXh[:, -1] = u
        dXh += np.outer(y - X_hat[:, 0], inj)
        return np.concatenate([dX.ravel(), dXh.ravel()])

    def scaled_errors(self, t, z) -> ScaledErrors:
        """``eta = Lambda_r (x_k - x_0)``, ``eta_hat`` likewise on ``x_hat``, ``eps = eta - eta_hat``."""
        X, X_hat = self.unpack(z)
        lam = scaling_diagonal(_r(self.sched, t), self.fleet.n)
        eta = ((X[1:] - X[0]) * lam).ravel()
        if X_hat is None:
            return ScaledErrors(eta, None, None)
        eta_hat = ((X_hat[1:] - X_hat[0]) * lam).ravel()
        return ScaledErrors(eta, eta_hat, eta - eta_hat)

    def lyapunov(self, t, z, P_c, P_0=None, c=None) -> float:
        """``eta^T P_c eta`` (state feedback) or ``eta_hat^T P_c eta_hat + c eps^T P_0 eps``."""
        s = self.scaled_errors(t, z)
        if not self.output_feedback:
            return float(s.eta @ P_c @ s.eta)
        return float(s.eta_hat @ P_c @ s.eta_hat + c * (s.eps @ P_0 @ s.eps))

    # -- stretched-time forms -------------------------------------------

    def _phi(self, t, X):
        """``Phi_k = Lambda_r (F_k(x_k) - F_0(x_0)) / r`` stacked."""
        r = _r(self.sched, t)
        lam = scaling_diagonal(r, self.fleet.n)
        F = self.fleet.F_fleet(t, X)
        return ((F[1:] - F[0]) * lam / r).ravel()

    def _dterm(self, t):
        # b r' / r^2 = alpha' / alpha^2: 1 on the growing branch, 0 on the plateau
        a = alpha(self.sched, t)
        return alpha_dot(self.sched, t) / (a * a)

    def chain_rule_tau_derivatives(self, t, z) -> ScaledErrors:
        """``d/dtau`` of the scaled errors from their definitions and :meth:`rhs`.

        ``d/dtau = (1 / alpha) d/dt`` and ``d Lambda_r / dt = (r'/r) D_c Lambda_r``.
        """
        n = self.fleet.n
        a = alpha(self.sched, t)
        r = _r(self.sched, t)
        r_dot = self.sched.b * alpha_dot(self.sched, t)
        lam = scaling_diagonal(r, n)
        lam_dot = (r_dot / r) * np.arange(n, 0, -1) * lam
        X, X_hat = self.unpack(z)
        dX, dXh = self.unpack(self.rhs(t, z))

        def rate(S, dS):
            e, de = S[1:] - S[0], dS[1:] - dS[0]
            return ((lam_dot * e + lam * de) / a).ravel()

        d_eta = rate(X, dX)
        if not self.output_feedback:
            return ScaledErrors(d_eta, None, None)
        d_eta_hat = rate(X_hat, dXh)
        return ScaledErrors(d_eta, d_eta_hat, d_eta - d_eta_hat)

    def compact_tau_derivatives(self, sys: SystemMatrices, t, z, complete: bool = True) -> ScaledErrors:
        """Stacked closed-form derivatives in stretched time.

        State feedback: ``b (A_c eta + Phi) + D eta``.  Output feedback:
        ``b (A_c eta_hat + G^T kron (I_theta Psi_eps + (I_theta - I) Psi_eta_hat)) + D eta_hat``
        and ``b (A_0 eps + Phi) + D eps``.  With ``complete=True`` the terms
        these textbook forms drop are restored: ``-b (theta_k - 1) G^T
        (eps_k1 + eta_hat_k1)`` in the ``eps`` equation and the leader
        mismatch ``b r^n (theta_k - theta_0) x_{0,1} G^T`` in both.  They
        vanish when all ``theta_k = 1``.
        """
        X, _ = self.unpack(z)
        s = self.scaled_errors(t, z)
        b = self.sched.b
        n, N = self.fleet.n, self.fleet.N
        dfac = self._dterm(t)
        D = sys.D_blk
        phi = self._phi(t, X)
        if not self.output_feedback:
            return ScaledErrors(b * (sys.A_c @ s.eta + phi) + dfac * (D @ s.eta), None, None)

        theta = self.fleet.theta_fleet(t)
        th = theta[1:]
        psi_eps = s.eps[::n]
        psi_hat = s.eta_hat[::n]
        inner = th * psi_eps + (th - 1.0) * psi_hat
        d_hat = b * (sys.A_c @ s.eta_hat + np.kron(inner, self.G)) + dfac * (D @ s.eta_hat)
        d_eps = b * (sys.A_0 @ s.eps + phi) + dfac * (D @ s.eps)
        if complete:
            d_eps -= b * np.kron((th - 1.0) * (psi_eps + psi_hat), self.G)
            r = _r(self.sched, t)
            leader = b * r ** n * (th - theta[0]) * X[0, 0]
            d_hat += np.kron(leader, self.G)
            d_eps -= np.kron(leader, self.G)
        return ScaledErrors(d_hat + d_eps, d_hat, d_eps)


def fleet_rhs(loop: ClosedLoop, t: float, z: np.ndarray) -> np.ndarray:
    return loop.rhs(t, z)


def stacked_sensor_check(fleet: AgentFleet, times: Sequence[float]) -> bool:
    """Every sampled ``theta_k(t)`` lies in ``[1 - dtheta_k, 1 + dtheta_k]``."""
    bound = fleet.dtheta + 1e-15
    return all(np.all(np.abs(fleet.theta_fleet(t) - 1.0) <= bound) for t in times)
