"""Trace CSV files, static SVG plots and the synthesis report."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .simulate import MonitorReport, SimTrace
from .synthesis import Certificate, SynthesisMode, SynthesisResult, make_certificate

SCALAR_FIELDS = (
    "horizon", "b", "b_threshold", "c", "c1", "kappa0_or_a", "kappa1_or_b", "kappa2_or_btilde",
    "delta_Ac", "delta_A0", "admissible_dtheta", "dtheta_max", "gamma", "gamma_star", "t_f", "delta",
)


def _fmt(v) -> str:
    # repr of a Python float is the shortest string that parses back exactly
    return repr(float(v))


# -- CSV ------------------------------------------------------------------

def emit_trace_csv(trace: SimTrace, out_dir, decay: MonitorReport | None = None) -> list[Path]:
    """Write ``states.csv``, ``inputs.csv``, ``observer_errors.csv`` and ``lyapunov.csv``.

    ``states.csv`` has one row per sample and agent with columns
    ``t, agent, x1..xn, xhat1..xhatn, u``; observer columns are ``nan`` for
    state feedback.  ``lyapunov.csv`` has ``t, V, envelope, margin`` where
    ``margin = envelope - V`` (``nan`` without a decay report).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    S, count, n = trace.states.shape
    xh = trace.observer_states if trace.observer_states is not None else np.full_like(trace.states, np.nan)
    paths = []

    path = out / "states.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "agent"] + [f"x{i + 1}" for i in range(n)] + [f"xhat{i + 1}" for i in range(n)] + ["u"])
        for s in range(S):
            t = _fmt(trace.times[s])
            for k in range(count):
                w.writerow([t, k] + [_fmt(v) for v in trace.states[s, k]]
                           + [_fmt(v) for v in xh[s, k]] + [_fmt(trace.inputs[s, k])])
    paths.append(path)

    path = out / "inputs.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"u{k}" for k in range(count)])
        for s in range(S):
            w.writerow([_fmt(trace.times[s])] + [_fmt(v) for v in trace.inputs[s]])
    paths.append(path)

    path = out / "observer_errors.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "agent"] + [f"e{i + 1}" for i in range(n)])
        diff = trace.states - xh
        for s in range(S):
            t = _fmt(trace.times[s])
            for k in range(count):
                w.writerow([t, k] + [_fmt(v) for v in diff[s, k]])
    paths.append(path)

    path = out / "lyapunov.csv"
    env = decay.envelope if decay is not None else np.full(S, np.nan)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "V", "envelope", "margin"])
        for s in range(S):
            with np.errstate(invalid="ignore"):
                margin = env[s] - trace.V[s]
            w.writerow([_fmt(trace.times[s]), _fmt(trace.V[s]), _fmt(env[s]), _fmt(margin)])
    paths.append(path)
    return paths


def read_trace_csv(out_dir) -> dict[str, np.ndarray]:
    """Parse the files written by :func:`emit_trace_csv` back into arrays.

    Returns ``times``, ``states``, ``observer_states``, ``inputs``, ``V`` and
    ``envelope`` shaped like the :class:`SimTrace` fields.
    """
    out = Path(out_dir)
    with (out / "states.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = (len(header) - 3) // 2
    data = np.array([[float(v) for v in row] for row in body]).reshape(-1, 2 * n + 3)
    agents = int(data[:, 1].max()) + 1 if data.size else 0
    S = data.shape[0] // agents if agents else 0
    data = data.reshape(S, agents, 2 * n + 3)
    with (out / "lyapunov.csv").open(newline="") as fh:
        lrows = list(csv.reader(fh))[1:]
    lyap = np.array([[float(v) for v in row] for row in lrows]).reshape(-1, 4)
    return {
        "times": data[:, 0, 0] if S else np.empty(0),
        "states": data[:, :, 2:2 + n],
        "observer_states": data[:, :, 2 + n:2 + 2 * n],
        "inputs": data[:, :, -1],
        "V": lyap[:, 1],
        "envelope": lyap[:, 2],
    }


# -- SVG ------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
_W, _H, _PAD = 640, 360, 56


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * step:
        ticks.append(v)
        v += step
    return ticks


def _thin(x, limit=1500):
    if x.size <= limit:
        return np.arange(x.size)
    return np.unique(np.linspace(0, x.size - 1, limit).astype(int))


def svg_line_plot(series, title: str, xlabel: str, ylabel: str) -> str:
    """Render ``[(label, x, y), ...]`` as a standalone SVG document.

    Non-finite points are dropped.  A single point renders as a degenerate
    polyline, which is still valid SVG.
    """
    xs = [np.asarray(x, dtype=float) for _, x, _ in series]
    ys = [np.asarray(y, dtype=float) for _, _, y in series]
    fin = [np.isfinite(x) & np.isfinite(y) for x, y in zip(xs, ys)]
    allx = np.concatenate([x[f] for x, f in zip(xs, fin)] or [np.zeros(1)])
    ally = np.concatenate([y[f] for y, f in zip(ys, fin)] or [np.zeros(1)])
    if allx.size == 0:
        allx, ally = np.zeros(1), np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - 2 * _PAD, _H - 2 * _PAD

    def px(v):
        return _PAD + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for tx in _nice_ticks(x0, x1):
        parts.append(f'<line x1="{px(tx):.2f}" y1="{_H - _PAD}" x2="{px(tx):.2f}" y2="{_H - _PAD + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(tx):.2f}" y="{_H - _PAD + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{tx:.4g}</text>')
    for ty in _nice_ticks(y0, y1):
        parts.append(f'<line x1="{_PAD - 5}" y1="{py(ty):.2f}" x2="{_PAD}" y2="{py(ty):.2f}" stroke="black"/>')
        parts.append(f'<text x="{_PAD - 8}" y="{py(ty) + 3:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{ty:.4g}</text>')
    parts.append(f'<text x="{_W / 2}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{xlabel}</text>')
    parts.append(f'<text x="14" y="{_H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 14 {_H / 2})">{ylabel}</text>')
    for i, ((label, _, _), x, y, f) in enumerate(zip(series, xs, ys, fin)):
        color = _COLORS[i % len(_COLORS)]
        x, y = x[f], y[f]
        idx = _thin(x)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[idx], y[idx]))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = _PAD + 14 + 14 * i
        parts.append(f'<line x1="{_W - _PAD - 110}" y1="{ly - 4}" x2="{_W - _PAD - 90}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _PAD - 85}" y="{ly}" font-family="sans-serif" font-size="10">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def lyapunov_plot_series(trace: SimTrace, decay: MonitorReport | None):
    """``log10 V`` and ``log10`` envelope, the data behind ``lyapunov.svg``."""
    with np.errstate(divide="ignore"):
        logv = np.log10(trace.V)
    series = [("log10 V", trace.times, logv)]
    if decay is not None:
        series.append(("log10 envelope", trace.times, decay.log_envelope / math.log(10)))
    return series


def emit_plots_svg(trace: SimTrace, out_dir, decay: MonitorReport | None = None) -> list[Path]:
    """Write ``states.svg``, ``inputs.svg``, ``observer_errors.svg`` and ``lyapunov.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = trace.times
    count, n = trace.states.shape[1:]
    states = [(f"x{k},{i + 1}", t, trace.states[:, k, i]) for k in range(count) for i in range(n)]
    inputs = [(f"u{k}", t, trace.inputs[:, k]) for k in range(1, count)]
    if trace.observer_states is not None:
        diff = trace.states - trace.observer_states
        obs = [(f"x{k},1 - xhat{k},1", t, diff[:, k, 0]) for k in range(count)]
    else:
        obs = [("no observer", t, np.zeros_like(t))]
    plots = {
        "states.svg": svg_line_plot(states, "States", "t", "x"),
        "inputs.svg": svg_line_plot(inputs, "Control inputs", "t", "u"),
        "observer_errors.svg": svg_line_plot(obs, "Observer errors", "t", "x - xhat"),
        "lyapunov.svg": svg_line_plot(lyapunov_plot_series(trace, decay), "Lyapunov function", "t", "log10"),
    }
    paths = []
    for name, text in plots.items():
        path = out / name
        path.write_text(text)
        paths.append(path)
    return paths


# -- synthesis report -----------------------------------------------------

def synthesis_report(result: SynthesisResult, system: dict | None = None) -> dict:
    """JSON-serialisable dictionary with scalars, matrices and certificates."""
    doc = {
        "mode": result.mode.value,
        "scalars": {k: getattr(result, k) for k in SCALAR_FIELDS},
        "P_c": result.P_c.tolist(),
        "P_0": None if result.P_0 is None else result.P_0.tolist(),
        "certificates": [
            {
                "name": c.name,
                "lambda_max": c.lambda_max,
                "tolerance": c.tolerance,
                "passed": c.passed,
                "matrix": c.matrix.tolist(),
            }
            for c in result.certificates
        ],
    }
    if system is not None:
        doc["system"] = system
    return doc


def write_synthesis_report(result: SynthesisResult, path, system: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(synthesis_report(result, system), indent=1, allow_nan=True) + "\n")
    return path


def load_synthesis_report(path) -> tuple[SynthesisResult, dict, list[Certificate]]:
    """Rebuild a :class:`SynthesisResult` and the stored certificate list."""
    doc = json.loads(Path(path).read_text())
    sc = doc["scalars"]
    res = SynthesisResult(
        mode=SynthesisMode(doc["mode"]),
        horizon=sc["horizon"],
        P_c=np.array(doc["P_c"], dtype=float),
        P_0=None if doc["P_0"] is None else np.array(doc["P_0"], dtype=float),
        **{k: sc[k] for k in SCALAR_FIELDS if k != "horizon"},
    )
    stored = [Certificate(c["name"], np.array(c["matrix"], dtype=float), float(c["lambda_max"]))
              for c in doc["certificates"]]
    return res, doc, stored


def format_synthesis(result: SynthesisResult) -> str:
    """Human-readable summary with one line per certificate."""
    lines = [f"mode: {result.mode.value}"]
    for key in SCALAR_FIELDS:
        val = getattr(result, key)
        if val is not None:
            lines.append(f"  {key:18s} {val:.10g}")
    lines.append("certificates (lambda_max <= tol):")
    for c in result.certificates:
        mark = "ok  " if c.passed else "FAIL"
        lines.append(f"  {mark} {c.name:28s} {c.lambda_max: .3e} <= {c.tolerance:.3e}")
    return "\n".join(lines)


def recheck(stored: list[Certificate]) -> list[tuple[Certificate, Certificate]]:
    """Pair each stored certificate with one recomputed from its matrix."""
    return [(c, make_certificate(c.name, c.matrix)) for c in stored]
