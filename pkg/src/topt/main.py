"""Command line entry point: run, sweep, verify-order and w2."""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import topt.coresys.logger as logger
from topt import artifacts
from topt.artifacts import ArtifactError
from topt.coresys.manager_config import ConfigError, ConfigManager
from topt.coresys.manager_tasks import JobEvent, JobManager
from topt.flow import FlowError, FlowSolver, verify_eta_order
from topt.linsys import SolverError
from topt.material import MaterialError
from topt.mesh import MeshError
from topt.runconfig import RunConfig
from topt.transport import (DEFAULT_REG, MAX_EXACT_SUPPORT, METHODS, TransportError, coarsen_measure,
                            nodal_measure, w2_entropic, w2_exact, w2_linearized)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2

RESOLVED_CONFIG = "resolved-config.json"
WARNINGS_FILE = "warnings.json"
SUMMARY_COLUMNS = ("delta", "eta", "tau", "status", "initial_objective", "final_objective",
                   "max_mass_drift", "negativity_events", "dissipation_violations", "error")

NUMERICAL_ERRORS = (SolverError, FlowError, MaterialError, MeshError, TransportError, ArtifactError, ValueError)


def main_progress_callback(stage, progress_percent, message, error):
    logger.debug(f"Main: [{stage.upper()}] {progress_percent}% - {message}")
    if error:
        logger.error(f"Main: Error in {stage}: {error}", log_to_file=True)


def _load_config(path: str):
    cfg, cm = RunConfig.from_file(path)
    return cfg, cm


def _resolved_manager(cfg: RunConfig) -> ConfigManager:
    return ConfigManager(data=cfg.to_dict())


def run_single(cfg: RunConfig, out_dir: Path, label: str = "") -> dict:
    """One flow with all its artifacts written to out_dir; returns a summary row."""
    out_dir.mkdir(parents=True, exist_ok=True)
    _resolved_manager(cfg).save_config(str(out_dir / RESOLVED_CONFIG))
    mesh = cfg.build_mesh()
    prob = cfg.build_problem(mesh)
    rho0 = cfg.initial_density(mesh)
    params = cfg.flow_params()
    solver = FlowSolver(prob, params, progress_callback=main_progress_callback)
    logger.info(f"Main: {label or cfg.kind} run, {mesh.nx}x{mesh.ny} mesh, delta={params.delta:g} "
                f"eta={params.eta:g} tau={params.tau:g}, {params.steps} steps")
    try:
        rho, history = solver.run(rho0)
    except FlowError as e:
        if len(e.history):
            artifacts.write_history_csv(out_dir / "history.csv", e.history)
        raise
    artifacts.write_history_csv(out_dir / "history.csv", history)
    state = solver.last_state
    artifacts.write_vtk(out_dir / "density.vtk", mesh, rho, None if state is None else state.u)
    artifacts.plot_history(out_dir, history, title=label)
    logger.info(f"Main: J {history[0].objective:.6e} -> {history[-1].objective:.6e}, "
                f"mass drift {history.max_mass_drift():.2e}, written to {out_dir}")
    return {
        "initial_objective": history[0].objective,
        "final_objective": history[-1].objective,
        "max_mass_drift": history.max_mass_drift(),
        "negativity_events": history.negativity_events,
        "dissipation_violations": history.dissipation_violations,
    }


def cmd_run(args) -> int:
    cfg, _ = _load_config(args.config)
    out_dir = Path(args.out or cfg.output)
    logger.set_log_dir(str(out_dir))
    run_single(cfg, out_dir)
    return EXIT_OK


def pair_dirname(delta: float, eta: float) -> str:
    return f"delta_{delta:.0e}_eta_{eta:.0e}"


def max_jobs(requested: int) -> int:
    """Requested worker count capped by TOPT_THREADS."""
    cap = os.environ.get("TOPT_THREADS")
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            logger.warning(f"Main: ignoring non-integer TOPT_THREADS={cap!r}", log_to_file=False)
    return max(1, requested)


def cmd_sweep(args) -> int:
    cfg, _ = _load_config(args.config)
    out_dir = Path(args.out or cfg.output)
    logger.set_log_dir(str(out_dir))
    logger.clear_error_history()
    _resolved_manager(cfg).save_config(str(out_dir / RESOLVED_CONFIG))

    jobs = max_jobs(args.jobs or cfg.sweep.jobs)
    manager = JobManager(max_jobs=jobs)
    pairs = {}
    for delta in cfg.sweep.deltas:
        for eta in cfg.sweep.etas:
            pair_cfg = cfg.with_pair(delta, eta)
            name = pair_dirname(delta, eta)
            pairs[name] = pair_cfg
            manager.add_job(lambda c=pair_cfg, n=name: run_single(c, out_dir / n, label=n),
                            job_id=name, description=f"delta={delta:g} eta={eta:g}")

    def on_event(event):
        if event.event_type == JobEvent.JOB_COMPLETED:
            logger.info(f"Sweep: {event.job_id} done")
        elif event.event_type == JobEvent.JOB_FAILED:
            logger.warning(f"Sweep: {event.job_id} failed: {event.error}")

    manager.add_listener(on_event)
    logger.info(f"Sweep: {len(pairs)} pairs on {jobs} worker(s)")
    results = manager.run_all()

    rows = []
    failures = 0
    for name, pair_cfg in pairs.items():
        result = results[name]
        base = [pair_cfg.flow.delta, pair_cfg.flow.eta, pair_cfg.flow.tau]
        if isinstance(result, BaseException):
            failures += 1
            rows.append(base + ["failed", "", "", "", "", "", str(result).replace("\n", " ")])
        else:
            rows.append(base + ["ok", result["initial_objective"], result["final_objective"],
                                result["max_mass_drift"], result["negativity_events"],
                                result["dissipation_violations"], ""])
    artifacts.write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, rows)
    history = logger.get_error_warning_history()
    if history:
        with open(out_dir / WARNINGS_FILE, "w") as f:
            json.dump(history, f, indent=2)
        logger.info(f"Sweep: {len(history)} warning(s) and error(s) recorded in {out_dir / WARNINGS_FILE}")
    logger.info(f"Sweep: {len(rows) - failures}/{len(rows)} pairs completed, summary in {out_dir / 'summary.csv'}")
    return EXIT_OK if failures == 0 else EXIT_NUMERICAL


def cmd_verify_order(args) -> int:
    cfg, _ = _load_config(args.config)
    if len(cfg.order.etas) < 3:
        raise ConfigError(f"Need at least 3 etas, got {len(cfg.order.etas)}", field="ORDER.ETAS")
    out_dir = Path(args.out or cfg.output)
    logger.set_log_dir(str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    _resolved_manager(cfg).save_config(str(out_dir / RESOLVED_CONFIG))

    mesh = cfg.build_mesh()
    prob = cfg.build_problem(mesh)
    etas = sorted(cfg.order.etas, reverse=True)
    report = verify_eta_order(prob, cfg.flow_params(), etas, cfg.order.eta_ref,
                              coarsen=cfg.order.coarsen, metric=cfg.order.metric,
                              rho0=cfg.initial_density(mesh), progress_callback=main_progress_callback)
    artifacts.write_csv(out_dir / "order.csv", report.CSV_COLUMNS, report.rows())
    artifacts.plot_order(out_dir / "order.svg", report)
    print(f"slope {report.slope:.6f}")
    return EXIT_OK


def cmd_w2(args) -> int:
    mesh_a, rho_a = artifacts.read_density(args.file_a)
    mesh_b, rho_b = artifacts.read_density(args.file_b)
    if not mesh_a.same_geometry(mesh_b):
        raise MeshError(f"Meshes differ: {mesh_a.nx}x{mesh_a.ny} vs {mesh_b.nx}x{mesh_b.ny}")
    if args.method == "linearized":
        distance = w2_linearized(mesh_a, rho_a, rho_b)
        logger.debug(f"Main: w2 via linearized on {mesh_a.num_nodes} nodes")
        print(f"{distance:.12g}")
        return EXIT_OK
    mu, nu = nodal_measure(mesh_a, rho_a).compact(), nodal_measure(mesh_b, rho_b).compact()
    if args.coarsen:
        mu = coarsen_measure(mu, args.coarsen, mesh_a.lx, mesh_a.ly)
        nu = coarsen_measure(nu, args.coarsen, mesh_a.lx, mesh_a.ly)
    method = args.method
    if method is None:
        method = "exact" if max(len(mu.weights), len(nu.weights)) <= MAX_EXACT_SUPPORT else "entropic"
    distance = w2_exact(mu, nu)[0] if method == "exact" else w2_entropic(mu, nu, reg=args.reg)
    logger.debug(f"Main: w2 via {method} on supports {len(mu.weights)} and {len(nu.weights)}")
    print(f"{distance:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topt", description="Filtered Wasserstein gradient flow optimizer")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="raise log verbosity")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one flow")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default RUN.OUTPUT)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every (delta, eta) pair")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, help="concurrent pairs (default SWEEP.JOBS)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-order", help="measure the W2 error order in eta")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_order)

    p = sub.add_parser("w2", help="W2 distance between two density files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--coarsen", type=int, help="bin both densities to a K x K grid first")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--reg", type=float, default=DEFAULT_REG, help="entropic regularization, relative to diam^2")
    p.set_defaults(func=cmd_w2)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.initialize(2 + args.verbose)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.fatal("ConfigError", str(e))
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        logger.fatal(type(e).__name__, str(e))
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
