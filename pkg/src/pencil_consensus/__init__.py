"""Prescribed-time leader-following consensus with time-varying high gains."""

from .errors import *  # noqa: F401,F403
from .graph import GraphTopology, build_topology, manipulator_topology, path_topology, random_topology
from .pencil import (
    Pencil,
    generalized_eigenvalues,
    pencil_threshold_max,
    pencil_threshold_max_semidefinite,
    pencil_threshold_min,
    solve_lyapunov,
    solve_lyapunov_pair,
)
from .timewarp import GainSchedule, Mode
from .synthesis import (
    SynthesisMode,
    SynthesisResult,
    build_system_matrices,
    check_sensitivity_admissible,
    synthesize_output_feedback,
    synthesize_practical,
    synthesize_state_feedback,
)
from .plant import AgentFleet, ClosedLoop, manipulator_preset
from .simulate import SimOptions, SimTrace, integrate, monitor_lyapunov_decay, monitor_tracking_bound

__version__ = "0.1.0"
