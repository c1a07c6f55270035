import numpy as np
import pytest

from pencil_consensus.plant import ClosedLoop, manipulator_preset
from pencil_consensus.simulate import SimOptions, integrate
from pencil_consensus.synthesis import build_system_matrices, synthesize_output_feedback
from pencil_consensus.timewarp import GainSchedule

# acceptance criteria register their verdicts here; printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

PRESET_RHO = (1.8, 0.19)
EXACT_T = 2.0
EXACT_EPS_STOP = 2e-3
EXACT_H_MAX = 2e-4


@pytest.fixture(scope="session")
def preset():
    return manipulator_preset()


@pytest.fixture(scope="session")
def preset_sys(preset):
    return build_system_matrices(2, preset.topology, preset.K, preset.G, PRESET_RHO)


@pytest.fixture(scope="session")
def of_synthesis(preset_sys, preset):
    return synthesize_output_feedback(preset_sys, 1e-3, 0.9, EXACT_T, preset.fleet.dtheta[1:])


@pytest.fixture(scope="session")
def exact_run(preset, preset_sys, of_synthesis):
    """Exact output feedback on the manipulator preset, T = 2."""
    import time

    sched = GainSchedule.exact(EXACT_T, of_synthesis.b, 2)
    loop = ClosedLoop(preset.fleet, preset.K, preset.G, sched, output_feedback=True)
    start = time.perf_counter()
    trace = integrate(loop, of_synthesis, preset_sys, SimOptions(h_max=EXACT_H_MAX, eps_stop=EXACT_EPS_STOP))
    return loop, trace, time.perf_counter() - start


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def demo_runs(tmp_path_factory):
    """Two independent ``demo-manipulators`` runs: ``[(exit_code, out_dir, stdout, seconds)]``."""
    import contextlib
    import io
    import time

    from pencil_consensus.cli import run_subcommand

    runs = []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"demo{i}")
        buf = io.StringIO()
        start = time.perf_counter()
        with contextlib.redirect_stdout(buf):
            code = run_subcommand(["demo-manipulators", "--out", str(out)])
        runs.append((code, out, buf.getvalue(), time.perf_counter() - start))
    return runs
