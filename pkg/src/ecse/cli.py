"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 input error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import metrics
from .circuit import assemble, dump_circuit
from .estimator import SolverError, SolverOptions, build_problem, solve
from .measurement import (
    MeasurementPlan,
    MeasurementSet,
    Sigmas,
    default_plan,
    generate_measurements,
    table_plan,
)
from .netmodel import load_case
from .powerflow import PowerFlowError, solve_power_flow

log = logging.getLogger("ecse")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2, 3


class NonConvergence(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def merged(args: argparse.Namespace) -> dict:
    """Config file values overridden by any flag given on the command line."""
    cfg = load_config(args.config)
    for key in ("case", "seed", "trials", "out", "tol", "max_iter", "g_pmu", "meas"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if "case" not in cfg:
        raise ValueError("no case given (use --case or a config file)")
    return cfg


def plan_from_config(case, cfg: dict) -> MeasurementPlan:
    """Explicit bus lists, device-mix percentages, or the built-in default."""
    p = dict(cfg.get("plan", {}))
    sigmas = Sigmas(**cfg["sigmas"]) if "sigmas" in cfg else Sigmas()
    seed = int(cfg.get("seed", 0))
    pf_noise = cfg.get("pf_noise", p.pop("pf_noise", "angle"))
    if "pmu_buses" in p:
        p.setdefault("sigmas", sigmas.__dict__)
        p.setdefault("seed", seed)
        p["pf_noise"] = pf_noise
        plan = MeasurementPlan.from_dict(p)
    elif "n_pmu" in p:
        plan = table_plan(
            case, int(p["n_pmu"]), float(p.get("injection_pct", 0.0)),
            float(p.get("flow_pct", 0.0)), sigmas, seed, p.get("pmu_mode", "flows"),
        )
    else:
        plan = default_plan(case, sigmas, seed)
        if "pmu_mode" in p:
            plan = MeasurementPlan.from_dict(
                {**plan.to_dict(), "pmu_modes": {str(b): p["pmu_mode"] for b in plan.pmu_buses}}
            )
    if plan.pf_noise != pf_noise:
        plan = MeasurementPlan.from_dict({**plan.to_dict(), "pf_noise": pf_noise})
    problems = plan.violations(case, coverage=True)
    if problems:
        raise ValueError("invalid plan: " + "; ".join(problems))
    return plan


def solver_options(cfg: dict) -> SolverOptions:
    s = dict(cfg.get("solver", {}))
    if "tol" in cfg:
        s["kkt_tol"] = float(cfg["tol"])
    if "max_iter" in cfg:
        s["max_iter"] = int(cfg["max_iter"])
    return SolverOptions(**s)


def _measurements(case, cfg: dict) -> MeasurementSet:
    if cfg.get("meas"):
        path = cfg["meas"]
        if not os.path.exists(path):
            raise FileNotFoundError(f"measurement file not found: {path}")
        with open(path) as f:
            return MeasurementSet.from_json(f.read(), case)
    truth = solve_power_flow(case)
    return generate_measurements(truth, plan_from_config(case, cfg))


def _emit(text: str, out: str | None) -> None:
    if out:
        metrics.write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _c(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_powerflow(cfg: dict) -> int:
    case = load_case(cfg["case"])
    tol = float(cfg.get("tol", 1e-8))
    max_iter = int(cfg.get("max_iter", 30))
    try:
        pf = solve_power_flow(case, tol=tol, max_iter=max_iter)
    except PowerFlowError as exc:
        raise NonConvergence(str(exc)) from None
    report = {
        "case": case.name,
        "converged": True,
        "iterations": pf.iterations,
        "max_mismatch": pf.max_mismatch,
        "buses": [
            {"bus": b, "vm": float(abs(v)), "va_deg": float(np.degrees(np.angle(v))),
             "v": _c(v), "s_load": _c(s)}
            for b, v, s in zip(case.bus_ids, pf.v, pf.s_load)
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "i_from": _c(a), "i_to": _c(b)}
            for br, a, b in zip(case.branches, pf.i_from, pf.i_to)
        ],
    }
    _emit(json.dumps(report, indent=1) + "\n", cfg.get("out"))
    return EXIT_OK


def cmd_gen_meas(cfg: dict) -> int:
    case = load_case(cfg["case"])
    ms = _measurements(case, {k: v for k, v in cfg.items() if k != "meas"})
    _emit(ms.to_json() + "\n", cfg.get("out"))
    return EXIT_OK


def cmd_estimate(cfg: dict) -> int:
    case = load_case(cfg["case"])
    ms = _measurements(case, cfg)
    sc = assemble(case, ms, float(cfg.get("g_pmu", 10.0)), cfg.get("rtu_target", "reading"))
    try:
        res = solve(build_problem(sc), solver_options(cfg))
    except SolverError as exc:
        raise NonConvergence(str(exc)) from None
    mag, ang = res.v_polar
    report = {
        "case": case.name,
        "status": res.status,
        "iterations": res.iterations,
        "objective": res.objective_value,
        "kkt_residual": res.kkt_residual,
        "reference_bus": res.reference_bus,
        "buses": [
            {"bus": b, "vm": float(m), "va_deg": float(np.degrees(a)), "v": [float(r), float(i)]}
            for b, m, a, (r, i) in zip(res.bus_ids, mag, ang, res.v_rect)
        ],
        "rtu_gb": {str(b): list(gb) for b, gb in sorted(res.rtu_gb.items())},
    }
    if ms.truth is not None:
        s = metrics.score_trial(case, ms, res)
        report["indices"] = {"sigma_sq_sum": s.sigma_sq_sum, "xi": s.xi, "sigma_max_pct": s.sigma_max}
    _emit(json.dumps(report, indent=1) + "\n", cfg.get("out"))
    if not res.converged:
        raise NonConvergence(f"estimator stopped with status {res.status}")
    return EXIT_OK


def cmd_montecarlo(cfg: dict) -> int:
    case = load_case(cfg["case"])
    trials = int(cfg.get("trials", 50))
    if trials < 1:
        raise ValueError("trials must be at least 1")
    plan = plan_from_config(case, cfg)
    summary, scores = metrics.run_monte_carlo(
        case, plan, trials, int(cfg.get("seed", 0)), float(cfg.get("g_pmu", 10.0)),
        solver_options(cfg), rtu_target=cfg.get("rtu_target", "reading"),
    )
    text = metrics.summary_json(summary)
    out = cfg.get("out")
    if out:
        metrics.write_atomic(os.path.join(out, "trials.csv"), metrics.trials_csv(scores))
        metrics.write_atomic(os.path.join(out, "summary.json"), text)
    sys.stdout.write(text)
    if summary["converged"] == 0:
        raise NonConvergence("no trial converged")
    return EXIT_OK


def cmd_dump_circuit(cfg: dict) -> int:
    case = load_case(cfg["case"])
    ms = _measurements(case, cfg)
    sc = assemble(case, ms, float(cfg.get("g_pmu", 10.0)), cfg.get("rtu_target", "reading"))
    _emit(dump_circuit(sc), cfg.get("out"))
    return EXIT_OK


COMMANDS = {
    "powerflow": cmd_powerflow,
    "gen-meas": cmd_gen_meas,
    "estimate": cmd_estimate,
    "montecarlo": cmd_montecarlo,
    "dump-circuit": cmd_dump_circuit,
}


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ecse", description="Circuit-based hybrid PMU/RTU state estimation."
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--case", help="bundled case name (case14, ieee57, ...) or MATPOWER .m file")
        p.add_argument("--config", help="JSON scenario file; flags override its fields")
        p.add_argument("--out", help="output file (directory for montecarlo)")
        p.add_argument("--verbose", "-v", action="store_true")
        p.add_argument("--tol", type=float, help="convergence tolerance")
        p.add_argument("--max-iter", type=int, dest="max_iter")
        if name != "powerflow":
            p.add_argument("--seed", type=int, help="measurement seed (base seed for montecarlo)")
            p.add_argument("--g-pmu", type=float, dest="g_pmu", help="PMU slack conductance, p.u.")
        if name in ("estimate", "dump-circuit"):
            p.add_argument("--meas", help="measurement JSON from gen-meas")
        if name == "montecarlo":
            p.add_argument("--trials", type=_positive_int)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](merged(args))
    except FileNotFoundError as exc:
        msg = str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except NonConvergence as exc:
        print(f"error: not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
