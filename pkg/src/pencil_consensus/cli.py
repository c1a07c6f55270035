"""Command line entry point: ``synth``, ``simulate``, ``verify`` and ``demo-manipulators``.

Exit codes: 0 when every certificate and monitor passes, 2 when one of
them reports a violation, 1 on any error (bad input, inadmissible sensor,
failed integration).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import MODES, RunConfig, parse_config, shipped_config, with_overrides
from .errors import ConfigParseError, PencilConsensusError, ValidationError
from .graph import build_topology
from .io import (
    emit_plots_svg,
    emit_trace_csv,
    format_synthesis,
    load_synthesis_report,
    recheck,
    write_synthesis_report,
)
from .plant import ClosedLoop
from .simulate import check_consensus, integrate, monitor_lyapunov_decay, monitor_tracking_bound
from .synthesis import (
    CERT_RTOL,
    SynthesisResult,
    assemble_certificates,
    build_system_matrices,
    synthesize_output_feedback,
    synthesize_practical,
    synthesize_state_feedback,
)
from .timewarp import GainSchedule

log = logging.getLogger("pencil_consensus")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2
DEMO_T = 2.0
DEMO_EPS_STOP = 2e-3
DEMO_TOL = 1e-2


def system_info(cfg: RunConfig) -> dict:
    """Everything needed to rebuild the stacked system matrices."""
    return {
        "n": cfg.fleet.n,
        "K": cfg.K.tolist(),
        "G": cfg.G.tolist(),
        "rho": None if cfg.rho is None else cfg.rho.tolist(),
        "adjacency": cfg.topology.adjacency.tolist(),
        "pinning": cfg.topology.pinning.tolist(),
    }


def build_system(cfg: RunConfig):
    return build_system_matrices(cfg.fleet.n, cfg.topology, cfg.K, cfg.G, cfg.rho)


def synthesize(cfg: RunConfig, sys_m) -> SynthesisResult:
    if cfg.mode == "state_feedback":
        return synthesize_state_feedback(sys_m, cfg.kappa, cfg.T)
    if cfg.mode == "output_feedback":
        return synthesize_output_feedback(sys_m, cfg.kappa, cfg.c1, cfg.T, cfg.dtheta,
                                          cfg.lyapunov_margin, cfg.norm)
    return synthesize_practical(sys_m, cfg.t_f, cfg.delta, cfg.kappa_margin, cfg.c1, cfg.dtheta,
                                kappa_a=cfg.kappa, lyapunov_margin=cfg.lyapunov_margin, norm=cfg.norm)


def schedule_for(cfg: RunConfig, res: SynthesisResult) -> GainSchedule:
    if cfg.mode == "practical":
        return GainSchedule.practical(cfg.t_f, cfg.delta, res.b, cfg.fleet.n)
    return GainSchedule.exact(cfg.T, res.b, cfg.fleet.n)


def _print_certificates(res: SynthesisResult, out) -> bool:
    print(format_synthesis(res), file=out)
    return res.all_certificates_pass


def run_simulation(cfg: RunConfig, out=sys.stdout, consensus_tol: float | None = None):
    """Synthesize, integrate, monitor and write the trace files.

    Returns ``(passed, trace, synthesis)``.
    """
    sys_m = build_system(cfg)
    res = synthesize(cfg, sys_m)
    certs_ok = _print_certificates(res, out)
    sched = schedule_for(cfg, res)
    loop = ClosedLoop(cfg.fleet, cfg.K, cfg.G, sched, output_feedback=cfg.mode != "state_feedback")
    trace = integrate(loop, res, sys_m, cfg.sim)
    opts = cfg.sim.resolved(sched.T)
    decay = monitor_lyapunov_decay(trace, res, sched, opts.tol_rel)
    tracking = monitor_tracking_bound(trace, res, sched, decay, opts.tol_rel)
    finite = bool(np.all(np.isfinite(trace.inputs)))

    out_dir = Path(cfg.out_dir)
    emit_trace_csv(trace, out_dir, decay)
    if cfg.plots:
        emit_plots_svg(trace, out_dir, decay)
    write_synthesis_report(res, out_dir / "synthesis.json", system_info(cfg))

    checks = {f"lyapunov_{k}": v for k, v in decay.passed.items()}
    checks["tracking_pointwise"] = tracking.pointwise_ok
    checks["tracking_envelope"] = tracking.envelope_ok
    checks["inputs_finite"] = finite
    if consensus_tol is not None:
        t_q = trace.times[-1]
        checks["consensus"] = check_consensus(trace, t_q, consensus_tol)
        if trace.observer_states is not None:
            checks["observer_consensus"] = check_consensus(trace, t_q, consensus_tol, observer=True)

    print(f"integrated {trace.steps} steps to t = {trace.t_stop:.6g}, {len(trace)} samples", file=out)
    print(f"final max |x_k - x_0| = {trace.errors[-1].max():.3e}", file=out)
    for name, ok in checks.items():
        label = "n/a " if ok is None else ("ok  " if ok else "FAIL")
        print(f"  {label} {name}", file=out)
    for v in decay.violations[:10]:
        print(f"  violation at t = {v.t:.6g} ({v.monitor}): log excess {v.margin:.3e}", file=out)
    print(f"wrote {out_dir}", file=out)
    passed = certs_ok and all(ok is not False for ok in checks.values())
    return passed, trace, res


# -- subcommands ----------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    res = synthesize(cfg, build_system(cfg))
    ok = _print_certificates(res, sys.stdout)
    if args.out is not None:
        path = write_synthesis_report(res, Path(args.out) / "synthesis.json", system_info(cfg))
        if args.matrices:
            np.savetxt(Path(args.out) / "P_c.csv", res.P_c, delimiter=",", fmt="%r")
            if res.P_0 is not None:
                np.savetxt(Path(args.out) / "P_0.csv", res.P_0, delimiter=",", fmt="%r")
        print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_simulate(args, cfg: RunConfig) -> int:
    passed, _, _ = run_simulation(cfg)
    return EXIT_OK if passed else EXIT_VIOLATION


def cmd_verify(args, cfg=None) -> int:
    """Re-check a stored synthesis report.

    Three independent checks per certificate: the stored ``lambda_max`` is
    within tolerance, it agrees with ``lambda_max`` recomputed from the stored
    matrix, and the stored matrix agrees with one re-assembled from the stored
    scalars and system description.
    """
    res, doc, stored = load_synthesis_report(args.report)
    problems = []
    for old, new in recheck(stored):
        if not old.passed:
            problems.append(f"{old.name}: stored lambda_max {old.lambda_max:.3e} exceeds {old.tolerance:.3e}")
        if not new.passed:
            problems.append(f"{old.name}: recomputed lambda_max {new.lambda_max:.3e} exceeds {new.tolerance:.3e}")
        if abs(old.lambda_max - new.lambda_max) > CERT_RTOL * (1 + np.linalg.norm(new.matrix, 2)):
            problems.append(f"{old.name}: stored lambda_max {old.lambda_max:.3e} does not match "
                            f"its matrix ({new.lambda_max:.3e})")
    info = doc.get("system")
    if info is not None:
        topo = build_topology(info["adjacency"], info["pinning"])
        sys_m = build_system_matrices(info["n"], topo, info["K"], info["G"], info["rho"])
        fresh = {c.name: c for c in assemble_certificates(sys_m, res)}
        for old in stored:
            new = fresh.get(old.name)
            if new is None:
                problems.append(f"{old.name}: not produced by this synthesis mode")
            elif new.matrix.shape != old.matrix.shape or not np.allclose(
                    new.matrix, old.matrix, rtol=1e-9, atol=1e-9 * (1 + np.abs(new.matrix).max())):
                problems.append(f"{old.name}: matrix differs from the one implied by the stored scalars")
            elif not new.passed:
                problems.append(f"{old.name}: re-assembled lambda_max {new.lambda_max:.3e} exceeds tolerance")
        for name in sorted(set(fresh) - {c.name for c in stored}):
            problems.append(f"{name}: missing from the report")
    for c in stored:
        print(f"  {'ok  ' if c.passed else 'FAIL'} {c.name:28s} {c.lambda_max: .3e}")
    for p in problems:
        print(f"violation: {p}")
    print("verified" if not problems else f"{len(problems)} violation(s)")
    return EXIT_OK if not problems else EXIT_VIOLATION


def cmd_demo(args, cfg: RunConfig) -> int:
    """Exact output feedback on the manipulator fleet with ``T = 2``.

    The practical-mode synthesis of the same configuration is reported as
    well; its constant-phase gain is too large to integrate explicitly, so
    only its certificates are written.
    """
    base = cfg
    try:
        prac = synthesize(with_overrides(base, mode="practical"), build_system(base))
        print("practical-mode synthesis:")
        _print_certificates(prac, sys.stdout)
        write_synthesis_report(prac, Path(base.out_dir) / "practical_synthesis.json", system_info(base))
    except PencilConsensusError as exc:
        print(f"practical-mode synthesis failed: {exc}")
    demo = with_overrides(base, mode="output_feedback", T=DEMO_T,
                          sim=replace(base.sim, eps_stop=DEMO_EPS_STOP))
    print(f"exact output feedback, T = {DEMO_T}:")
    passed, _, _ = run_simulation(demo, consensus_tol=DEMO_TOL)
    return EXIT_OK if passed else EXIT_VIOLATION


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pencil-consensus", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", type=Path, required=config_required,
                       help="TOML run configuration (default: shipped manipulators.cfg)")
        p.add_argument("--out", type=Path, help="output directory (overrides io.out_dir)")
        p.add_argument("--mode", choices=MODES, help="override the configured mode")
        p.add_argument("--no-plots", action="store_true", help="skip the SVG plots")

    p = sub.add_parser("synth", help="synthesize gains and print the certificate table")
    common(p)
    p.add_argument("--matrices", action="store_true", help="also write P_c.csv and P_0.csv")
    p.set_defaults(func=cmd_synth)
    p = sub.add_parser("simulate", help="synthesize, integrate, monitor and write CSV traces")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("verify", help="re-check the certificates of a stored synthesis.json")
    p.add_argument("report", type=Path)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("demo-manipulators", help="run the single-link manipulator example end to end")
    common(p)
    p.set_defaults(func=cmd_demo)
    return parser


def _load(args) -> RunConfig:
    cfg = parse_config(args.config or shipped_config(), getattr(args, "mode", None))
    if args.out is not None:
        cfg = with_overrides(cfg, out_dir=args.out)
    if args.no_plots:
        cfg = with_overrides(cfg, plots=False)
    return cfg


def run_subcommand(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for violations here
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None if args.command == "verify" else _load(args)
        return args.func(args, cfg)
    except ValidationError as exc:
        print("invalid configuration:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (PencilConsensusError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
