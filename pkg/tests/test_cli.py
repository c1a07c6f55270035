import json

import pytest

from pencil_consensus.cli import run_subcommand
from pencil_consensus.config import shipped_config

SMALL = """
mode = "state_feedback"
[graph]
adjacency = [[0, 1], [1, 0]]
pinning = [1, 0]
[agents]
model = "integrator"
n = 2
x0 = [[0.0, 0.0], [1.0, -1.0], [0.5, 2.0]]
[gains]
K = [8.0, 9.0]
G = [2.0, 2.0]
T = 1.0
eps_stop = 5e-2
"""


def _cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


@pytest.fixture
def report(tmp_path, capsys):
    code = run_subcommand(["synth", "--config", str(shipped_config()), "--mode", "output_feedback",
                           "--out", str(tmp_path)])
    capsys.readouterr()
    assert code == 0
    return tmp_path / "synthesis.json"


def test_synth_and_verify(report, capsys):
    assert report.exists()
    assert run_subcommand(["verify", str(report)]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_synth_matrices(tmp_path, capsys):
    code = run_subcommand(["synth", "--config", str(shipped_config()), "--mode", "state_feedback",
                           "--out", str(tmp_path), "--matrices"])
    assert code == 0
    assert (tmp_path / "P_c.csv").exists()


@pytest.mark.parametrize("field", ["lambda", "scalar"])
def test_verify_rejects_tampered_report(report, field, capsys):
    doc = json.loads(report.read_text())
    if field == "lambda":
        doc["certificates"][0]["lambda_max"] = 1.0
    else:
        doc["scalars"]["b"] *= 1.5
    report.write_text(json.dumps(doc))
    assert run_subcommand(["verify", str(report)]) == 2


def test_verify_missing_file(tmp_path, capsys):
    assert run_subcommand(["verify", str(tmp_path / "absent.json")]) == 1


def test_usage_errors(capsys):
    assert run_subcommand(["bogus"]) == 1
    assert run_subcommand(["simulate"]) == 1
    assert run_subcommand([]) == 1


def test_simulate_state_feedback(tmp_path, capsys):
    code = run_subcommand(["simulate", "--config", str(_cfg(tmp_path, SMALL)),
                           "--out", str(tmp_path / "o"), "--no-plots"])
    assert code == 0
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert {"states.csv", "inputs.csv", "lyapunov.csv", "synthesis.json"} <= names
    assert not any(n.endswith(".svg") for n in names)


def test_simulate_inadmissible_sensitivity(tmp_path, capsys):
    text = shipped_config().read_text()
    text = text.replace('mode = "practical"', 'mode = "output_feedback"')
    text = text.replace("0.08, 0.09, -0.08, -0.09", "0.2, 0.2, -0.2, -0.2")
    code = run_subcommand(["simulate", "--config", str(_cfg(tmp_path, text)), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "SensitivityInadmissible" in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    code = run_subcommand(["synth", "--config", str(_cfg(tmp_path, SMALL.replace("T = 1.0", "T = -1.0")))])
    assert code == 1
    assert "gains.T" in capsys.readouterr().err


def test_demo_writes_all_artifacts(demo_runs):
    code, out, stdout, _ = demo_runs[0]
    assert code == 0
    names = {p.name for p in out.iterdir()}
    expected = {"states.csv", "inputs.csv", "observer_errors.csv", "lyapunov.csv",
                "states.svg", "inputs.svg", "observer_errors.svg", "lyapunov.svg",
                "synthesis.json", "practical_synthesis.json"}
    assert expected <= names
    assert "practical" in stdout
