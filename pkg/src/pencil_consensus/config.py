"""Run configuration: TOML text with ``graph``, ``agents``, ``gains``, ``sim`` and ``io`` tables.

Example::

    mode = "practical"

    [agents]
    preset = "manipulators"

    [gains]
    t_f = 1.98
    delta = 0.02
"""

from __future__ import annotations

import math
import os
import re
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigParseError, TopologyError, ValidationError
from .graph import GraphTopology, build_topology, manipulator_topology
from .plant import (
    MANIPULATOR_G,
    MANIPULATOR_K,
    MANIPULATOR_PARAMS,
    MANIPULATOR_RHO,
    MANIPULATOR_SENSOR_AMPLITUDES,
    AgentFleet,
    integrator_fleet,
    manipulator_fleet,
    random_sensor_amplitudes,
)
from .simulate import SimOptions
from .synthesis import DEFAULT_C1, DEFAULT_KAPPA, DEFAULT_LYAPUNOV_MARGIN

MODES = ("state_feedback", "output_feedback", "practical")
SEED_ENV = "PENCIL_CONSENSUS_SEED"

_SIM_FLOATS = ("h_max", "h_frac", "eps_stop", "t_end", "cfl", "tol_rel")
_SIM_INTS = ("stride", "max_steps")


@dataclass
class RunConfig:
    mode: str
    topology: GraphTopology
    fleet: AgentFleet
    K: np.ndarray
    G: np.ndarray
    rho: np.ndarray | None
    kappa: float = DEFAULT_KAPPA
    c1: float = DEFAULT_C1
    T: float | None = None
    t_f: float | None = None
    delta: float | None = None
    kappa_margin: float = DEFAULT_KAPPA
    lyapunov_margin: float = DEFAULT_LYAPUNOV_MARGIN
    norm: str = "spectral"
    sim: SimOptions = field(default_factory=SimOptions)
    out_dir: Path = Path("out")
    plots: bool = True
    source: Path | None = None

    @property
    def horizon(self) -> float:
        return self.t_f + self.delta if self.mode == "practical" else self.T

    @property
    def dtheta(self) -> np.ndarray:
        """Follower sensor deviations; the leader's does not enter the bound."""
        return self.fleet.dtheta[1:]


def shipped_config(name: str = "manipulators.cfg") -> Path:
    return Path(str(resources.files("pencil_consensus") / "configs" / name))


def _load_toml(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise ConfigParseError(str(exc), line=int(match.group(1)) if match else None) from exc


class _Reader:
    """Typed access to a nested table that collects every problem found."""

    def __init__(self, data: dict):
        self.data = data
        self.problems: list[str] = []

    def table(self, name):
        val = self.data.get(name, {})
        if not isinstance(val, dict):
            self.problems.append(f"{name}: must be a table")
            return {}
        return val

    def number(self, tbl, section, key, default=None, positive=True, integer=False):
        if key not in tbl:
            return default
        val = tbl[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.problems.append(f"{section}.{key}: expected a number, got {val!r}")
            return default
        if integer and not isinstance(val, int):
            self.problems.append(f"{section}.{key}: expected an integer")
            return default
        if not math.isfinite(val) or (positive and val <= 0):
            self.problems.append(f"{section}.{key}: must be a positive finite number")
            return default
        return val

    def array(self, tbl, section, key, shape=None, default=None):
        if key not in tbl:
            return default
        try:
            arr = np.array(tbl[key], dtype=float)
        except (TypeError, ValueError):
            self.problems.append(f"{section}.{key}: expected a numeric array")
            return default
        if shape is not None and arr.shape != shape:
            self.problems.append(f"{section}.{key}: expected shape {shape}, got {arr.shape}")
            return default
        return arr


def _seeded_rng():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return np.random.default_rng(0)
    try:
        return np.random.default_rng(int(raw))
    except ValueError as exc:
        raise ConfigParseError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def parse_config_data(data: dict, source: Path | None = None) -> RunConfig:
    """Validate an already-decoded configuration mapping.

    Raises
    ------
    ValidationError
        Lists every violated constraint.
    """
    rd = _Reader(data)
    mode = data.get("mode")
    if mode is None:
        rd.problems.append("mode: missing (one of state_feedback, output_feedback, practical)")
    elif mode not in MODES:
        rd.problems.append(f"mode: unknown value {mode!r}")

    graph = rd.table("graph")
    agents = rd.table("agents")
    gains = rd.table("gains")
    sim_tbl = rd.table("sim")
    io_tbl = rd.table("io")
    preset = agents.get("preset")
    if preset not in (None, "manipulators"):
        rd.problems.append(f"agents.preset: unknown preset {preset!r}")

    topology = None
    if "adjacency" in graph or "pinning" in graph:
        try:
            topology = build_topology(graph.get("adjacency"), graph.get("pinning"))
        except (TopologyError, TypeError, ValueError) as exc:
            rd.problems.append(f"graph: {exc}")
    elif preset == "manipulators":
        topology = manipulator_topology()
    else:
        rd.problems.append("graph: adjacency and pinning are required without a preset")

    n = 2 if preset == "manipulators" else rd.number(agents, "agents", "n", None, integer=True)
    if n is None and preset is None:
        rd.problems.append("agents.n: required without a preset")
    count = topology.n_agents + 1 if topology is not None else None

    K = rd.array(gains, "gains", "K", (n,) if n else None,
                 np.array(MANIPULATOR_K) if preset == "manipulators" else None)
    G = rd.array(gains, "gains", "G", (n,) if n else None,
                 np.array(MANIPULATOR_G) if preset == "manipulators" else None)
    for key, val in (("K", K), ("G", G)):
        if val is None and f"gains.{key}" not in " ".join(rd.problems):
            rd.problems.append(f"gains.{key}: required")

    rho_default = np.array(MANIPULATOR_RHO) if preset == "manipulators" else None
    rho = rd.array(agents, "agents", "rho", None, rho_default)
    rho_shapes = [(n,)] + ([(count - 1, n)] if count else [])
    if rho is not None and (np.any(rho < 0) or (n and rho.shape not in rho_shapes)):
        rd.problems.append("agents.rho: nonnegative, shape (n,) or (N, n)")
        rho = None

    kappa = rd.number(gains, "gains", "kappa", DEFAULT_KAPPA)
    c1 = rd.number(gains, "gains", "c1", DEFAULT_C1)
    if c1 is not None and not 0 < c1 < 1:
        rd.problems.append("gains.c1: must lie in (0, 1)")
    T = rd.number(gains, "gains", "T")
    t_f = rd.number(gains, "gains", "t_f")
    delta = rd.number(gains, "gains", "delta")
    kappa_margin = rd.number(gains, "gains", "kappa_margin", DEFAULT_KAPPA)
    lyap_margin = rd.number(gains, "gains", "lyapunov_margin", DEFAULT_LYAPUNOV_MARGIN)
    norm = gains.get("norm", "spectral")
    if norm not in ("spectral", "frobenius"):
        rd.problems.append(f"gains.norm: unknown value {norm!r}")
    if mode == "practical":
        if t_f is None or delta is None:
            rd.problems.append("gains.t_f and gains.delta: required in practical mode")
        if rho is None:
            rd.problems.append("agents.rho: required in practical mode")
    elif mode in MODES and T is None and t_f is not None and delta is not None:
        T = t_f + delta
    elif mode in MODES and T is None:
        rd.problems.append(f"gains.T: required in {mode} mode")

    sim_kwargs: dict[str, Any] = {}
    for key in _SIM_FLOATS:
        val = rd.number(sim_tbl, "sim", key)
        if val is not None:
            sim_kwargs[key] = float(val)
    for key in _SIM_INTS:
        val = rd.number(sim_tbl, "sim", key, integer=True)
        if val is not None:
            sim_kwargs[key] = int(val)
    unknown = set(sim_tbl) - set(_SIM_FLOATS) - set(_SIM_INTS)
    if unknown:
        rd.problems.append(f"sim: unknown keys {sorted(unknown)}")

    out_dir = Path(io_tbl.get("out_dir", "out"))
    plots = io_tbl.get("plots", True)
    if not isinstance(plots, bool):
        rd.problems.append("io.plots: expected true or false")

    fleet = None
    if topology is not None and n and not rd.problems:
        fleet = _build_fleet(rd, agents, preset, topology, n, rho)
    if rd.problems:
        raise ValidationError(rd.problems)

    return RunConfig(
        mode=mode, topology=topology, fleet=fleet, K=K, G=G, rho=rho,
        kappa=float(kappa), c1=float(c1),
        T=None if T is None else float(T),
        t_f=None if t_f is None else float(t_f),
        delta=None if delta is None else float(delta),
        kappa_margin=float(kappa_margin), lyapunov_margin=float(lyap_margin), norm=norm,
        sim=SimOptions(**sim_kwargs), out_dir=out_dir, plots=plots, source=source,
    )


def _build_fleet(rd: _Reader, agents: dict, preset, topology, n, rho) -> AgentFleet | None:
    count = topology.n_agents + 1
    x0 = rd.array(agents, "agents", "x0", (count, n))
    x_hat0 = rd.array(agents, "agents", "x_hat0", (count, n))
    amps = rd.array(agents, "agents", "sensitivity", (count,))
    if agents.get("randomize_sensitivity", False):
        bound = rd.number(agents, "agents", "sensitivity_bound", 0.09)
        amps = random_sensor_amplitudes(count, bound, _seeded_rng())
    if amps is not None and np.any(np.abs(amps) >= 1):
        rd.problems.append("agents.sensitivity: amplitudes must lie in (-1, 1)")
    if rd.problems:
        return None

    model = agents.get("model", "manipulator" if preset == "manipulators" else None)
    if model == "manipulator":
        params = {}
        for key in ("J", "B", "h", "m"):
            default = MANIPULATOR_PARAMS[key] if preset == "manipulators" else None
            val = rd.array(agents, "agents", key, (count,), default)
            if val is None:
                rd.problems.append(f"agents.{key}: required for manipulator agents")
            elif np.any(np.asarray(val) <= 0):
                rd.problems.append(f"agents.{key}: must be positive")
            params[key] = val
        if n != 2:
            rd.problems.append("agents.n: manipulator agents have n = 2")
        if rd.problems:
            return None
        if amps is None and preset == "manipulators":
            amps = np.array(MANIPULATOR_SENSOR_AMPLITUDES)
        return manipulator_fleet(params, amps, x0, rho, topology, x_hat0)
    if model == "integrator":
        if x0 is None:
            rd.problems.append("agents.x0: required for integrator agents")
            return None
        return integrator_fleet(topology, n, x0, amps, x_hat0)
    rd.problems.append(f"agents.model: expected 'manipulator' or 'integrator', got {model!r}")
    return None


def parse_config(path, mode_override: str | None = None) -> RunConfig:
    """Read and validate a configuration file.

    Raises
    ------
    ConfigParseError
        Unreadable file or malformed TOML (with the offending line).
    ValidationError
        Every violated constraint, one per line.
    """
    path = Path(path)
    data = _load_toml(path)
    if mode_override is not None:
        data = dict(data, mode=mode_override)
    return parse_config_data(data, source=path)


def with_overrides(cfg: RunConfig, **kwargs) -> RunConfig:
    return replace(cfg, **kwargs)
