"""Command-line interface: ``scopf powerflow|optimize|validate``.

Every option can also be set through an environment variable named
``SCOPF_<OPTION>`` (for example ``SCOPF_CASE``, ``SCOPF_SEED``,
``SCOPF_THREADS``); command-line flags take precedence.

Exit codes: 0 success, 1 infeasible or unconverged result, 2 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .case_io import (CaseDocument, CaseFormatError, export_results, load_case, summarize_runs,
                      to_network, write_voltage_csv)
from .network import NetworkError
from .powerflow import PowerFlowError, PowerFlowSpec, solve_power_flow
from .problem import ControlVector, ScopfProblem, base_controls, check_constraints, objective
from .pso import PsoHyperparameters, hyper_dict, run_parallel
from .sqcqp import verify_solution

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2
ENV_PREFIX = "SCOPF_"
RESIDUAL_TOL = 1e-8

log = logging.getLogger("scopf")


class InputError(Exception):
    pass


def _env(name: str, default=None, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise InputError(f"environment variable {ENV_PREFIX}{name.upper()}={raw!r} is invalid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scopf", description="Power flow, swarm-based SCOPF and residual validation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--case", default=_env("case"),
                       help="case file (JSON or MATPOWER) or builtin name: ieee118, ieee118-table2")
        p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=_env("scenario", None, int),
                       help="1: no taps, 2: in-phase taps, 3: in-phase and quadrature taps")
        p.add_argument("--out", default=_env("out", "runs"), help="parent directory for outputs")
        p.add_argument("--run-id", default=_env("run_id"),
                       help="name of the output subdirectory (default: command and UTC timestamp)")

    p = sub.add_parser("powerflow", help="solve the base-case power flow")
    common(p)

    p = sub.add_parser("optimize", help="run the particle swarm SCOPF")
    common(p)
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--lambda", dest="n_runs", type=int, default=_env("lambda", None, int),
                   help="number of independent runs")
    p.add_argument("--particles", type=int, default=_env("particles", None, int))
    p.add_argument("--iterations", type=int, default=_env("iterations", None, int))
    p.add_argument("--threads", type=int, default=_env("threads", None, int),
                   help="worker processes (default: available CPUs)")
    p.add_argument("--config", default=_env("config"),
                   help="JSON file of hyperparameter overrides")

    p = sub.add_parser("validate", help="check a solution file against the constraints and residual")
    common(p)
    p.add_argument("--solution", default=_env("solution"), required=_env("solution") is None)
    return parser


def _load(args) -> tuple[CaseDocument, int]:
    if not args.case:
        raise InputError("no case given (use --case or SCOPF_CASE)")
    try:
        doc = load_case(args.case)
    except FileNotFoundError:
        raise InputError(f"cannot read case file {args.case}")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read case file {args.case}: {exc}")
    scenario = args.scenario
    if scenario is None:
        sc = doc.scenario
        scenario = 1 + bool(sc.get("in_phase_taps")) + bool(sc.get("quadrature_taps"))
        scenario = min(scenario, 3)
    else:
        doc = doc.with_scenario(scenario)
    return doc, scenario


def _run_dir(args, command: str) -> Path:
    name = args.run_id or f"{command}-{datetime.now(timezone.utc):%Y%m%dT%H%M%S%fZ}"
    path = Path(args.out) / name
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {path}: {exc}")
    return path


def cmd_powerflow(args) -> int:
    doc, scenario = _load(args)
    net, _cfg = to_network(doc)
    state = solve_power_flow(net)
    out = _run_dir(args, "powerflow")
    write_voltage_csv(out / "voltages.csv", net, {"base": state})
    print(f"case: {doc.name or args.case}  buses: {net.n_bus}  branches: {net.n_port}")
    print(f"converged: {state.converged}  iterations: {state.iterations}  "
          f"max mismatch: {state.max_mismatch:.3e} p.u.")
    if not state.converged:
        print("power flow did not converge", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"P_loss: {state.p_loss_mw:.4f} MW")
    print(f"output: {out}")
    return EXIT_OK


def _hyper(args) -> PsoHyperparameters:
    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}")
        if not isinstance(overrides, dict):
            raise InputError(f"config {args.config} must hold a JSON object")
    for key, val in (("n_runs", args.n_runs), ("n_particles", args.particles),
                     ("t_max", args.iterations)):
        if val is not None:
            overrides[key] = val
    overrides["seed"] = args.seed
    try:
        return replace(PsoHyperparameters(), **overrides)
    except TypeError as exc:
        raise InputError(f"unknown hyperparameter: {exc}")
    except ValueError as exc:
        raise InputError(str(exc))


def solution_document(problem: ScopfProblem, controls: ControlVector, case: str,
                      scenario: int) -> dict:
    net, cfg = problem.net, problem.cfg
    return {
        "case": case,
        "scenario": scenario,
        "controls": {
            "dp_mw": {str(r.id): float(controls.dp[k]) for k, r in enumerate(cfg.resources)},
            "dq_mvar": {str(r.id): float(controls.dq[k]) for k, r in enumerate(cfg.resources)},
            "v_set_pu": {str(b.id): float(controls.v_set[k]) for k, b in enumerate(net.buses)},
            "n": {str(net.ports[k].id): float(controls.n[k]) for k in net.tap_ports},
            "m": {str(net.ports[k].id): float(controls.m[k]) for k in net.tap_ports},
        },
    }


def controls_from_solution(sol: dict, net, cfg) -> ControlVector:
    """Inverse of :func:`solution_document`; unknown element ids are input errors."""
    c = base_controls(net, cfg)
    try:
        body = sol["controls"]
    except (KeyError, TypeError):
        raise InputError("solution file lacks a 'controls' object")
    res_pos = {str(r.id): k for k, r in enumerate(cfg.resources)}
    bus_pos = {str(b.id): k for k, b in enumerate(net.buses)}
    port_pos = {str(p.id): k for k, p in enumerate(net.ports)}
    for key, slot, pos in (("dp_mw", "dp", res_pos), ("dq_mvar", "dq", res_pos),
                           ("v_set_pu", "v_set", bus_pos), ("n", "n", port_pos),
                           ("m", "m", port_pos)):
        for eid, val in (body.get(key) or {}).items():
            if str(eid) not in pos:
                raise InputError(f"solution: unknown element {eid!r} in {key}")
            try:
                getattr(c, slot)[pos[str(eid)]] = float(val)
            except (TypeError, ValueError):
                raise InputError(f"solution: non-numeric value for {key}[{eid}]")
    return c


def cmd_optimize(args) -> int:
    doc, scenario = _load(args)
    hyper = _hyper(args)
    net, cfg = to_network(doc)
    problem = ScopfProblem(net, cfg)
    if not problem.base_state.converged:
        print("base-case power flow did not converge", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = _run_dir(args, "optimize")
    campaign = run_parallel(problem, hyper, workers=args.threads)

    runs, evals = [], []
    for r in campaign.runs:
        ev = problem.inspect(r.best_evaluated)
        evals.append(ev)
        conv = ev.state is not None and ev.state.converged
        runs.append({
            "seed": r.seed,
            "best_fitness": r.best_fitness,
            "objective": ev.objective if conv else None,
            "p_loss_mw": ev.state.p_loss_mw if conv else None,
            "feasible": bool(ev.report.feasible),
            "converged": bool(conv),
        })
        if not conv:
            print(f"run seed={r.seed}: no converged solution", file=sys.stderr)
    k_best = int(np.argmin(campaign.fitness))
    best_run, best_eval = campaign.runs[k_best], evals[k_best]
    stats = summarize_runs(list(campaign.fitness))
    case_name = doc.name or str(args.case)
    summary = {
        "case": case_name, "scenario": scenario, "seed": hyper.seed,
        "hyperparameters": hyper_dict(hyper),
        "initial_p_loss_mw": problem.base_state.p_loss_mw,
        "runs": runs, **stats,
    }
    voltages = {"base": problem.base_state}
    if best_eval.state is not None and best_eval.state.converged:
        voltages["best"] = best_eval.state
    export_results(out, summary=summary, traces=[r.trace for r in campaign.runs],
                   utilization=problem.utilization(best_run.best_evaluated), net=net,
                   voltage_states=voltages,
                   solution=solution_document(problem, best_eval.controls, case_name, scenario))

    print(f"scenario {scenario}: {len(runs)} runs, initial P_loss "
          f"{problem.base_state.p_loss_mw:.4f} MW")
    print(f"best {stats['best']:.4f}  average {stats['average']:.4f}  worst {stats['worst']:.4f}")
    print(f"output: {out}")
    if not any(r["converged"] for r in runs):
        print("no run produced a converged solution", file=sys.stderr)
        return EXIT_INFEASIBLE
    if not best_eval.report.feasible:
        print("best solution violates constraints:", file=sys.stderr)
        for v in best_eval.report.violations()[:20]:
            print(f"  {v['class']} {v['element']}: {v['excess']:.4g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_validate(args) -> int:
    doc, scenario = _load(args)
    net, cfg = to_network(doc)
    try:
        sol = json.loads(Path(args.solution).read_text())
    except OSError:
        raise InputError(f"cannot read solution file {args.solution}")
    except json.JSONDecodeError as exc:
        raise InputError(f"solution file {args.solution}: invalid JSON ({exc.msg})")
    controls = controls_from_solution(sol, net, cfg)
    problem = ScopfProblem(net, cfg)
    state = problem.solve(controls)
    out = _run_dir(args, "validate")
    report: dict = {"case": doc.name or str(args.case), "scenario": scenario}
    converged = state is not None and state.converged
    if not converged:
        report.update(converged=False, feasible=False)
        (out / "validation.json").write_text(json.dumps(report, indent=1))
        print("power flow at the solution did not converge", file=sys.stderr)
        return EXIT_INFEASIBLE
    cons = check_constraints(state, controls, cfg, net)
    residual = verify_solution(state, net, tolerance=RESIDUAL_TOL)
    report.update(
        converged=True, feasible=cons.feasible, objective=objective(state, controls, cfg),
        p_loss_mw=state.p_loss_mw, worst=cons.worst, violations=cons.violations(),
        residual=residual.to_dict(),
    )
    (out / "validation.json").write_text(json.dumps(report, indent=1, default=str))
    write_voltage_csv(out / "voltages.csv", net, {"solution": state})
    print(f"P_loss: {state.p_loss_mw:.4f} MW  objective: {report['objective']:.4f}")
    print(f"residual max: {residual.max_residual:.3e}  feasible: {cons.feasible}")
    for v in cons.violations():
        print(f"  violation {v['class']} {v['element']}: {v['excess']:.4g}")
    print(f"output: {out}")
    return EXIT_OK if cons.feasible and residual.ok else EXIT_INFEASIBLE


COMMANDS = {"powerflow": cmd_powerflow, "optimize": cmd_optimize, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CaseFormatError, NetworkError) as exc:
        print(f"error: invalid case {args.case}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PowerFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
