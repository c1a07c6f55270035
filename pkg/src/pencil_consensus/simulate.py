"""Fixed-order integration of the closed loop and the runtime bound monitors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NonFiniteState, StepBudgetExceeded, StepUnderflow
from .pencil import lambda_min
from .plant import ClosedLoop
from .synthesis import SynthesisResult, SystemMatrices, omega_radius
from .timewarp import GainSchedule, Mode, alpha, r_gain, tau_of_t


@dataclass(frozen=True)
class SimOptions:
    """Integrator settings.

    ``h_max`` and ``eps_stop`` default to ``1e-4 T`` and ``1e-3 T``.  The step
    is ``min(h_max, h_frac (T - t), cfl / lam(t))`` where ``lam(t)`` bounds the
    fastest linear mode of the closed loop at time ``t``; without the last
    term classical RK4 leaves its stability region once ``b`` is large.
    """

    h_max: float | None = None
    h_frac: float = 1e-2
    eps_stop: float | None = None
    t_end: float = 10.0
    stride: int = 20
    cfl: float = 2.0
    max_steps: int = 5_000_000
    tol_rel: float = 0.05

    def resolved(self, T: float) -> "SimOptions":
        return SimOptions(
            h_max=self.h_max if self.h_max is not None else 1e-4 * T,
            h_frac=self.h_frac,
            eps_stop=self.eps_stop if self.eps_stop is not None else 1e-3 * T,
            t_end=self.t_end,
            stride=self.stride,
            cfl=self.cfl,
            max_steps=self.max_steps,
            tol_rel=self.tol_rel,
        )


@dataclass(eq=False)
class SimTrace:
    """Sampled closed-loop trajectory.  Agent axis has the leader first."""

    times: np.ndarray
    states: np.ndarray
    observer_states: np.ndarray | None
    inputs: np.ndarray
    eta: np.ndarray
    eta_hat: np.ndarray | None
    eps: np.ndarray | None
    V: np.ndarray
    r: np.ndarray
    steps: int = 0
    t_stop: float = 0.0

    def __len__(self):
        return self.times.size

    @property
    def errors(self) -> np.ndarray:
        """``|x_k - x_0|`` per sample and follower."""
        return np.linalg.norm(self.states[:, 1:] - self.states[:, :1], axis=2)

    @property
    def observer_errors(self) -> np.ndarray | None:
        """``|x_k - x_hat_k|`` per sample and agent (leader included)."""
        if self.observer_states is None:
            return None
        return np.linalg.norm(self.states - self.observer_states, axis=2)

    def index_at(self, t: float) -> int:
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t = {t} outside the trace range [{self.times[0]}, {self.times[-1]}]")
        return int(np.argmin(np.abs(self.times - t)))


def fastest_rate(sys: SystemMatrices, output_feedback: bool) -> float:
    """Spectral radius bounding the stretched-time linear dynamics."""
    rad = float(np.max(np.abs(np.linalg.eigvals(sys.A_c))))
    if output_feedback:
        rad = max(rad, float(np.max(np.abs(np.linalg.eigvals(sys.A_0)))))
    return rad


class _StepRule:
    def __init__(self, sched: GainSchedule, opts: SimOptions, rate: float):
        self.sched = sched
        self.opts = opts
        self.rate = rate

    def stiffness(self, t):
        a = alpha(self.sched, t)
        return self.sched.b * a * self.rate + self.sched.n * a

    def __call__(self, t):
        o = self.opts
        h = min(o.h_max, o.cfl / self.stiffness(t))
        if self.sched.mode is Mode.EXACT or t < self.sched.t_f:
            h = min(h, o.h_frac * (self.sched.T - t))
        return h

    def estimate_steps(self, t_stop: float) -> float:
        """``integral dt / h(t)`` over the run, by quadrature in ``log(T - t)``."""
        sched, o = self.sched, self.opts
        T = sched.T
        lo = T - t_stop if sched.mode is Mode.EXACT else sched.delta
        s = np.geomspace(T, lo, 4000)
        t = T - s
        inv_h = np.array([1.0 / self(ti) for ti in t])
        # dt = -ds = -s d(log s)
        total = float(np.trapezoid(inv_h * s, -np.log(s)))
        if sched.mode is Mode.PRACTICAL and t_stop > sched.t_f:
            total += (t_stop - sched.t_f) / self(sched.t_f)
        return total


def _rk4_step(f, t, z, h):
    k1 = f(t, z)
    k2 = f(t + 0.5 * h, z + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, z + 0.5 * h * k2)
    k4 = f(t + h, z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(loop: ClosedLoop, synthesis: SynthesisResult, sys: SystemMatrices,
              opts: SimOptions | None = None) -> SimTrace:
    """Integrate the closed loop with classical RK4 and the shrinking-step rule.

    Exact schedules stop at ``T - eps_stop``; practical ones at ``t_end`` and
    always land a sample on ``t_f``.

    Raises
    ------
    StepBudgetExceeded
        The step rule would need more than ``opts.max_steps`` steps.
    NonFiniteState
        A state component overflowed.
    StepUnderflow
        The step fell below floating-point resolution of ``t``.
    """
    sched = loop.sched
    opts = (opts or SimOptions()).resolved(sched.T)
    if sched.mode is Mode.EXACT:
        if opts.eps_stop <= sched.guard:
            raise ValueError("eps_stop must exceed the evaluation guard of the schedule")
        t_stop = sched.T - opts.eps_stop
    else:
        t_stop = opts.t_end
    rule = _StepRule(sched, opts, fastest_rate(sys, loop.output_feedback))
    estimate = rule.estimate_steps(t_stop)
    if estimate > opts.max_steps:
        raise StepBudgetExceeded(estimate, opts.max_steps)

    out_fb = loop.output_feedback
    P_c, P_0, c = synthesis.P_c, synthesis.P_0, synthesis.c
    rec: dict[str, list] = {key: [] for key in ("t", "x", "xh", "u", "eta", "eta_hat", "eps", "V", "r")}

    def record(t, z):
        X, X_hat = loop.unpack(z)
        s = loop.scaled_errors(t, z)
        rec["t"].append(t)
        rec["x"].append(X.copy())
        rec["xh"].append(None if X_hat is None else X_hat.copy())
        rec["u"].append(loop.controls(t, X, X_hat))
        rec["eta"].append(s.eta)
        rec["eta_hat"].append(s.eta_hat)
        rec["eps"].append(s.eps)
        rec["V"].append(loop.lyapunov(t, z, P_c, P_0, c))
        rec["r"].append(r_gain(sched, t))

    t = 0.0
    z = loop.initial_state()
    record(t, z)
    steps = 0
    breakpoint_t = sched.t_f if sched.mode is Mode.PRACTICAL and sched.t_f < t_stop else None
    while t < t_stop:
        h = rule(t)
        target = t_stop
        if breakpoint_t is not None and t < breakpoint_t:
            target = breakpoint_t
        last = t + h >= target
        if last:
            h = target - t
        if h <= 4 * np.finfo(float).eps * max(1.0, abs(t)):
            raise StepUnderflow(f"step {h:.3e} underflows at t = {t:.17g}")
        z = _rk4_step(loop.rhs, t, z, h)
        t = target if last else t + h
        steps += 1
        if not np.all(np.isfinite(z)):
            X, X_hat = loop.unpack(z)
            bad = ~np.isfinite(X).all(axis=1)
            if X_hat is not None:
                bad |= ~np.isfinite(X_hat).all(axis=1)
            raise NonFiniteState(t, int(np.flatnonzero(bad)[0]))
        if last or steps % opts.stride == 0:
            record(t, z)

    def stack(key):
        vals = rec[key]
        return None if vals[0] is None else np.array(vals)

    return SimTrace(
        times=np.array(rec["t"]),
        states=stack("x"),
        observer_states=stack("xh") if out_fb else None,
        inputs=stack("u"),
        eta=stack("eta"),
        eta_hat=stack("eta_hat"),
        eps=stack("eps"),
        V=np.array(rec["V"]),
        r=np.array(rec["r"]),
        steps=steps,
        t_stop=t_stop,
    )


# -- monitors -------------------------------------------------------------

class Violation(NamedTuple):
    t: float
    monitor: str
    margin: float


@dataclass(eq=False)
class MonitorReport:
    """Outcome of the Lyapunov decay monitor.

    ``log_M`` is stored instead of ``M``, which overflows for large
    nonlinearity constants.  ``envelope`` is the bound at every sample.
    """

    kappa: float | None
    log_M: float
    tau1: float
    envelope: np.ndarray
    log_envelope: np.ndarray
    passed: dict[str, bool | None] = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)
    tau1_on_grid: bool = True

    @property
    def M(self) -> float:
        return math.exp(self.log_M) if self.log_M < 709 else math.inf

    @property
    def ok(self) -> bool:
        return all(v is not False for v in self.passed.values())


def switching_time(kappa_lo: float, kappa_hi: float, T: float, taus: np.ndarray) -> tuple[float, bool]:
    """First grid ``tau`` with ``kappa_lo - kappa_hi T e^{-tau} > 0``.

    When no grid point qualifies the analytic point
    ``ln(2 kappa_hi T / kappa_lo)`` is returned (effective rate ``kappa_lo / 2``)
    and the flag is ``False``.
    """
    if kappa_hi == 0:
        return 0.0, True
    ok = kappa_lo - kappa_hi * T * np.exp(-taus) > 0
    if ok.any():
        return float(taus[np.argmax(ok)]), True
    return math.log(2.0 * kappa_hi * T / kappa_lo), False


def _log(v):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(v, dtype=float))


def monitor_lyapunov_decay(trace: SimTrace, synthesis: SynthesisResult, sched: GainSchedule,
                           tol_rel: float = 0.05) -> MonitorReport:
    """Check ``V`` against its closed-form decay envelope.

    Exact schedules: ``V(t) <= ((T - t)/T)^kappa M V(0)`` with
    ``kappa = kappa_lo - kappa_hi / alpha(tau_1)`` and ``M = e^{T kappa_hi tau_1}``.
    Practical schedules: ``V(t) <= ((T - t)/T)^gamma V(0)`` before ``t_f`` and
    ``V(t) <= e^{-gamma* (t - t_f)} V(t_f)`` afterwards.
    """
    T = sched.T
    t = trace.times
    logV = _log(trace.V)
    slack = math.log1p(tol_rel)
    violations: list[Violation] = []
    passed: dict[str, bool | None] = {}

    if sched.mode is Mode.PRACTICAL:
        pre = t < sched.t_f
        i_f = trace.index_at(sched.t_f)
        log_env = np.empty_like(t)
        with np.errstate(divide="ignore"):
            log_env[pre] = synthesis.gamma * np.log((T - t[pre]) / T) + logV[0]
        log_env[~pre] = -synthesis.gamma_star * (t[~pre] - t[i_f]) + logV[i_f]
        for name, mask in (("growing_gain", pre), ("constant_gain", ~pre)):
            bad = mask & (logV > log_env + slack)
            passed[name] = not bad.any()
            violations += [Violation(float(t[i]), name, float(logV[i] - log_env[i])) for i in np.flatnonzero(bad)]
        return MonitorReport(synthesis.gamma, 0.0, 0.0, np.exp(log_env), log_env, passed, violations)

    k_lo, k_hi = synthesis.kappa0_or_a, synthesis.kappa1_or_b
    taus = np.array([tau_of_t(sched, ti) for ti in t])
    if k_hi is None:
        # growth rates unknown: no certified envelope
        nan = np.full_like(t, np.nan)
        return MonitorReport(None, 0.0, 0.0, nan, nan, {"decay": None}, [])
    tau1, on_grid = switching_time(k_lo, k_hi, T, taus)
    kappa = k_lo - k_hi * T * math.exp(-tau1)
    log_M = T * k_hi * tau1
    log_env = kappa * np.log((T - t) / T) + log_M + logV[0]
    bad = logV > log_env + slack
    passed["decay"] = not bad.any()
    violations = [Violation(float(t[i]), "decay", float(logV[i] - log_env[i])) for i in np.flatnonzero(bad)]
    with np.errstate(over="ignore"):
        env = np.exp(log_env)
    return MonitorReport(kappa, log_M, tau1, env, log_env, passed, violations, on_grid)


@dataclass(eq=False)
class TrackingReport:
    per_agent: list[bool]
    pointwise_ok: bool
    envelope_ok: bool | None
    radius: float | None = None
    max_error_at_tf: float | None = None

    @property
    def ok(self) -> bool:
        return all(self.per_agent) and self.pointwise_ok and self.envelope_ok is not False


def monitor_tracking_bound(trace: SimTrace, synthesis: SynthesisResult, sched: GainSchedule,
                           decay: MonitorReport | None = None, tol_rel: float = 0.05) -> TrackingReport:
    """Tracking-error bounds implied by the Lyapunov estimates.

    Pointwise, ``|x_k - x_0| <= (1/r)(|eta_hat| + |eps|)`` (``(1/r)|eta|``
    for state feedback) must hold at every sample.  Exact schedules are also
    checked against the explicit envelope built from ``decay``; practical ones
    against the radius of the set reached at ``t_f``.
    """
    err = trace.errors
    if trace.eps is not None:
        scaled = np.linalg.norm(trace.eta_hat, axis=1) + np.linalg.norm(trace.eps, axis=1)
    else:
        scaled = np.linalg.norm(trace.eta, axis=1)
    rhs = scaled / trace.r
    pointwise = err <= rhs[:, None] * (1 + 1e-9) + 1e-300
    per_agent = [bool(pointwise[:, k].all()) for k in range(err.shape[1])]
    pointwise_ok = all(per_agent)

    if sched.mode is Mode.PRACTICAL:
        i_f = trace.index_at(sched.t_f)
        radius = omega_radius(synthesis, float(trace.V[0]))
        e_tf = err[i_f]
        per_agent = [ok and bool(e <= radius * (1 + tol_rel)) for ok, e in zip(per_agent, e_tf)]
        return TrackingReport(per_agent, pointwise_ok, bool(np.all(e_tf <= radius * (1 + tol_rel))),
                              radius, float(e_tf.max()))

    if decay is None:
        decay = monitor_lyapunov_decay(trace, synthesis, sched, tol_rel)
    if decay.kappa is None:
        return TrackingReport(per_agent, pointwise_ok, None)
    T = sched.T
    if trace.eps is not None:
        floor = min(lambda_min(synthesis.P_c), synthesis.c * lambda_min(synthesis.P_0))
        factor = 2.0
    else:
        floor = lambda_min(synthesis.P_c)
        factor = 1.0
    s = T - trace.times
    log_bound = (math.log(factor) + 0.5 * ((decay.kappa + 2) * np.log(s) - decay.kappa * math.log(T))
                 + 0.5 * (decay.log_M + math.log(max(trace.V[0], 1e-300)))
                 - math.log(synthesis.b) - 0.5 * math.log(floor))
    with np.errstate(divide="ignore"):
        log_err = np.log(err)
    envelope_ok = bool(np.all(log_err <= log_bound[:, None] + math.log1p(tol_rel)))
    return TrackingReport(per_agent, pointwise_ok, envelope_ok)


def check_consensus(trace: SimTrace, t_query: float, tol: float, observer: bool = False) -> bool:
    """``max_k |x_k - x_0| <= tol`` at the sample nearest ``t_query``.

    With ``observer=True`` the observer states are compared instead.
    """
    i = trace.index_at(t_query)
    src = trace.observer_states if observer else trace.states
    if src is None:
        raise ValueError("trace has no observer states")
    if src.shape[1] == 1:
        return True
    return bool(np.max(np.linalg.norm(src[i, 1:] - src[i, :1], axis=1)) <= tol)
