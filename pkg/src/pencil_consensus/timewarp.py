"""Time-axis transformation and the time-varying gains built on it.

On ``[0, T)`` the map ``tau = ln(T / (T - t))`` stretches the finite horizon to
``[0, inf)``.  The blow-up gain is ``alpha = 1 / (T - t) = e^tau / T`` and the
scaling gain is ``r = b * alpha``.  The practical schedule freezes ``alpha`` at
``1 / delta`` from ``t_f`` onwards so gains stay bounded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomain

# exact mode refuses t >= T - GUARD_REL * T
GUARD_REL = 1e-12


class Mode(enum.Enum):
    EXACT = "exact"
    PRACTICAL = "practical"


@dataclass(frozen=True)
class GainSchedule:
    """Gain schedule for either the exact or the practical protocol.

    Parameters
    ----------
    mode : Mode
    T : float
        Settling horizon.  In practical mode this is ``t_f + delta``.
    b : float
        Proportional coefficient, at least ``T`` so that ``r >= 1``.
    n : int
        Agent state dimension.
    t_f, delta : float, optional
        Saturation time and plateau width of the practical schedule.
    """

    mode: Mode
    T: float
    b: float
    n: int
    t_f: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.n < 1:
            raise ValueError("state dimension n must be at least 1")
        if self.mode is Mode.PRACTICAL:
            if self.t_f is None or self.delta is None or self.delta <= 0 or self.t_f < 0:
                raise ValueError("practical schedule needs t_f >= 0 and delta > 0")
            if not math.isclose(self.T, self.t_f + self.delta, rel_tol=1e-12):
                raise ValueError("practical schedule needs T == t_f + delta")
        # b slightly below T by roundoff is tolerated
        if self.b < self.T * (1 - 1e-12):
            raise ValueError(f"b = {self.b} must be at least the horizon {self.T}")

    @classmethod
    def exact(cls, T: float, b: float, n: int) -> "GainSchedule":
        return cls(Mode.EXACT, float(T), float(b), int(n))

    @classmethod
    def practical(cls, t_f: float, delta: float, b: float, n: int) -> "GainSchedule":
        return cls(Mode.PRACTICAL, float(t_f) + float(delta), float(b), int(n), float(t_f), float(delta))

    @property
    def guard(self) -> float:
        return GUARD_REL * self.T


def _check_exact_domain(sched: GainSchedule, t: float):
    if t < 0 or t >= sched.T - sched.guard:
        raise OutOfDomain(f"t = {t!r} outside [0, T) with T = {sched.T}")


def tau_of_t(sched: GainSchedule, t: float) -> float:
    _check_exact_domain(sched, t)
    # log1p keeps small t accurate
    return -math.log1p(-t / sched.T)


def t_of_tau(sched: GainSchedule, tau: float) -> float:
    if tau < 0:
        raise OutOfDomain(f"tau = {tau!r} must be nonnegative")
    return -sched.T * math.expm1(-tau)


def alpha(sched: GainSchedule, t: float) -> float:
    """Blow-up gain ``1/(T-t)``, or its saturated version in practical mode."""
    if sched.mode is Mode.PRACTICAL:
        if t < 0:
            raise OutOfDomain(f"t = {t!r} must be nonnegative")
        if t >= sched.t_f:
            return 1.0 / sched.delta
        return 1.0 / (sched.T - t)
    _check_exact_domain(sched, t)
    return 1.0 / (sched.T - t)


def alpha_dot(sched: GainSchedule, t: float) -> float:
    """Time derivative of :func:`alpha` (right derivative at ``t_f``)."""
    a = alpha(sched, t)
    if sched.mode is Mode.PRACTICAL and t >= sched.t_f:
        return 0.0
    return a * a


def r_gain(sched: GainSchedule, t: float) -> float:
    """``b * alpha(t)``, evaluated as one division so that ``b >= T`` gives ``r >= 1`` exactly."""
    alpha(sched, t)  # domain checks
    if sched.mode is Mode.PRACTICAL and t >= sched.t_f:
        return sched.b / sched.delta
    return sched.b / (sched.T - t)


def power_ladder(r: float, n: int) -> np.ndarray:
    """``(r, r^2, ..., r^n)`` by repeated multiplication."""
    out = np.empty(n)
    acc = 1.0
    for i in range(n):
        acc *= r
        out[i] = acc
    return out


def scaling_diagonal(r: float, n: int) -> np.ndarray:
    """Diagonal of ``Lambda_r = diag(r^n, ..., r)``."""
    return power_ladder(r, n)[::-1].copy()


def scaling_matrix(sched: GainSchedule, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Lambda_r, Lambda_r^{-1})`` at time ``t``."""
    d = scaling_diagonal(r_gain(sched, t), sched.n)
    return np.diag(d), np.diag(1.0 / d)


def injection_vector(r: float, n: int) -> np.ndarray:
    """Diagonal of ``r^{n+1} Lambda_r^{-1}``, which is ``(r, r^2, ..., r^n)``."""
    return power_ladder(r, n)
