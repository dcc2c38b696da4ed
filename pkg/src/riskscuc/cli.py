"""Command-line driver: ``riskscuc <subcommand> --config run.json [overrides]``.

Exit codes: 0 success, 1 solver failure or nonconvergence, 2 input error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import platform
import sys as _sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import check_cut_families
from .adversary import solve_adversary, write_grid_log
from .decomposition import solve_risk_aware, write_trace
from .errors import CaseFormatError, SolverError, ValidationError
from .evaluation import SampleSpec, evaluate_schedules, sample_scenarios, solve_stochastic_scuc
from .power_system import PowerSystem, load_case, load_history
from .reporting import (exposure_breakdown, read_schedule_csv, write_da_dispatch, write_da_family_csvs,
                        write_json, write_lmp, write_modes, write_rt_solution, write_schedule)
from .scuc_da import da_pricing_run, solve_deterministic
from .uncertainty import build_uncertainty_set

logger = logging.getLogger("riskscuc")

EXIT_OK, EXIT_SOLVER, EXIT_INPUT = 0, 1, 2

DEFAULTS = {
    "case": None,
    "history": {"load": None, "wind": None},
    "uncertainty": {"K": 3, "R_d": 0.1, "R_w": 0.2, "sigma_rule": "3R"},
    "risk": {"rho": 1.0, "cuts": ["lbbd"], "mode": "iterative", "root_cuts": 0, "flex_window": None},
    "solver": {"backend": "highs", "gap": 1e-3, "time_limit": None},
    "adversary": {"workers": 1, "independent_periods": False},
    "evaluation": {"method": "uniform", "n_samples": 100, "cone_angle": math.pi / 3, "joint": False,
                   "rt_n_tp": None, "center_from": -1, "boxplots": False},
    "stochastic": {"rho_sto": 0.0, "beta": 0.9, "n_scenarios": 10},
    "voll_da": None,
    "voll_rt": None,
    "seed": 0,
    "output_dir": "riskscuc_out",
}


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------
def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve(path, base_dir: Path):
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else base_dir / p


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
        if not isinstance(user, dict):
            raise InputError(f"{path}: top level must be an object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise InputError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = _merge(cfg, user)
        base_dir = path.parent
        for key in ("case",):
            cfg[key] = str(_resolve(cfg[key], base_dir)) if cfg[key] else None
        for kind in ("load", "wind"):
            h = cfg["history"].get(kind)
            cfg["history"][kind] = str(_resolve(h, base_dir)) if h else None
    # flag overrides
    if args.case:
        cfg["case"] = args.case
    if args.out:
        cfg["output_dir"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.backend:
        cfg["solver"]["backend"] = args.backend
    if args.gap is not None:
        cfg["solver"]["gap"] = args.gap
    if args.time_limit is not None:
        cfg["solver"]["time_limit"] = args.time_limit
    if args.workers is not None:
        cfg["adversary"]["workers"] = args.workers
    if getattr(args, "load_history", None):
        cfg["history"]["load"] = args.load_history
    if getattr(args, "wind_history", None):
        cfg["history"]["wind"] = args.wind_history
    for flag, key in (("rho", "rho"), ("mode", "mode"), ("root_cuts", "root_cuts")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg["risk"][key] = val
    if getattr(args, "cuts", None):
        cfg["risk"]["cuts"] = [c.strip() for c in args.cuts.split(",") if c.strip()]
    if getattr(args, "flex_window", None):
        try:
            cfg["risk"]["flex_window"] = [int(h) for h in args.flex_window.split(",")]
        except ValueError:
            raise InputError(f"--flex-window must be comma-separated hours, got {args.flex_window!r}") from None
    for flag in ("method", "n_samples"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg["evaluation"][flag] = val
    _check_config(cfg)
    return cfg


def _check_config(cfg: dict) -> None:
    if not cfg["case"]:
        raise InputError("no case file given (config key 'case' or --case)")
    r = cfg["risk"]
    if not (isinstance(r["rho"], (int, float)) and r["rho"] >= 0):
        raise InputError(f"rho must be >= 0, got {r['rho']!r}")
    if r["mode"] not in ("iterative", "branch_and_cut"):
        raise InputError(f"mode must be iterative or branch_and_cut, got {r['mode']!r}")
    try:
        check_cut_families(r["cuts"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if not (isinstance(r["root_cuts"], int) and r["root_cuts"] >= 0):
        raise InputError("root_cuts must be a nonnegative integer")
    g = cfg["solver"]["gap"]
    if not (isinstance(g, (int, float)) and 0 < g < 1):
        raise InputError(f"gap must lie in (0, 1), got {g!r}")
    u = cfg["uncertainty"]
    if not (isinstance(u["K"], int) and u["K"] >= 1):
        raise InputError("K must be a positive integer")
    for k in ("R_d", "R_w"):
        if not (isinstance(u[k], (int, float)) and u[k] >= 0):
            raise InputError(f"{k} must be >= 0")
    s = cfg["stochastic"]
    if not 0 < s["beta"] < 1:
        raise InputError("beta must lie in (0, 1)")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn

    return {"riskscuc": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _write_manifest(out: Path, command: str, cfg: dict, outputs: list[Path], extra=None) -> None:
    manifest = {"command": command, "config": cfg, "config_hash": config_hash(cfg), "seed": cfg["seed"],
                "versions": _versions(), "outputs": sorted(p.name for p in outputs)}
    if extra:
        manifest.update(extra)
    write_json(manifest, out / "manifest.json")


# ---------------------------------------------------------------------------
# shared loading
# ---------------------------------------------------------------------------
def _system(cfg: dict) -> PowerSystem:
    path = Path(cfg["case"])
    if not path.exists():
        raise InputError(f"case file not found: {path}")
    sys = load_case(path)
    changes = {k: cfg[k] for k in ("voll_da", "voll_rt") if cfg.get(k) is not None}
    if changes:
        sys = replace(sys, **changes)
    if cfg["risk"]["flex_window"]:
        sys = sys.with_time(flex_window=tuple(cfg["risk"]["flex_window"]))
    return sys


def _uset(cfg: dict, sys: PowerSystem):
    h = cfg["history"]
    if not h.get("load"):
        raise InputError("no load history given (config history.load or --load-history)")
    load_hist = load_history(h["load"], "load", sys)
    wind_hist = None
    if sys.n_wind:
        if not h.get("wind"):
            raise InputError("the case has wind farms but no wind history was given")
        wind_hist = load_history(h["wind"], "wind", sys)
    u = cfg["uncertainty"]
    return build_uncertainty_set(load_hist, wind_hist, sys, u["K"], u["R_d"], u["R_w"], u["sigma_rule"])


def _out(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _deterministic(cfg, sys):
    s = cfg["solver"]
    return solve_deterministic(sys, gap=s["gap"], time_limit=s["time_limit"], backend=s["backend"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_solve_da(cfg: dict) -> int:
    sys = _system(cfg)
    out = _out(cfg)
    sched, _ = _deterministic(cfg, sys)
    pricing = da_pricing_run(sys, sched)
    files = [write_schedule(sys, sched, out / "schedule.csv"),
             write_da_dispatch(sys, pricing.dispatch, out / "dispatch.csv"),
             write_lmp(sys, pricing.lmp, out / "da_lmp.csv"),
             *write_da_family_csvs(sys, pricing.dispatch, out),
             write_json({"objective": pricing.objective, "breakdown": pricing.dispatch.breakdown,
                         "da_payment": float(pricing.payment.sum())}, out / "objective.json")]
    _write_manifest(out, "solve-da", cfg, files)
    print(f"deterministic DA cost {pricing.objective:.6g}; outputs in {out}")
    return EXIT_OK


def cmd_risk_aware(cfg: dict) -> int:
    sys = _system(cfg)
    out = _out(cfg)
    uset = _uset(cfg, sys)
    det, _ = _deterministic(cfg, sys)
    r, s, a = cfg["risk"], cfg["solver"], cfg["adversary"]
    sol = solve_risk_aware(sys, uset, float(r["rho"]), r["cuts"], r["mode"], det, s["gap"], s["time_limit"],
                           r["root_cuts"], s["backend"], workers=a["workers"],
                           independent_periods=a["independent_periods"])
    pricing = da_pricing_run(sys, sol.schedule)
    files = [write_schedule(sys, sol.schedule, out / "schedule.csv"),
             write_schedule(sys, det, out / "deterministic_schedule.csv"),
             write_da_dispatch(sys, sol.da_dispatch, out / "dispatch.csv"),
             write_lmp(sys, pricing.lmp, out / "da_lmp.csv")]
    trace = out / "trace.csv"
    write_trace(sol, trace)
    files.append(trace)
    summary = {"rho": sol.rho, "da_cost": sol.da_cost, "v_hat": sol.v_hat,
               "total_objective": sol.total_objective, "iterations": sol.iterations,
               "opt_gap": sol.opt_gap, "converged": sol.converged, "status": sol.status,
               "mode": sol.mode, "n_cuts": len(sol.cuts),
               "cut_families": sorted({c.family for c in sol.cuts})}
    files.append(write_json(summary, out / "solution.json"))
    _write_manifest(out, "solve-risk-aware", cfg, files)
    print(f"risk-aware total {sol.total_objective:.6g} (DA {sol.da_cost:.6g}, exposure {sol.v_hat:.6g}), "
          f"{sol.iterations} iterations, status {sol.status}")
    if not sol.converged:
        print(f"not converged: status {sol.status}, gap {sol.opt_gap:.3g}", file=_sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_adversary(cfg: dict, schedule_path: str | None) -> int:
    sys = _system(cfg)
    out = _out(cfg)
    uset = _uset(cfg, sys)
    sched = read_schedule_csv(sys, schedule_path) if schedule_path else _deterministic(cfg, sys)[0]
    a = cfg["adversary"]
    res = solve_adversary(sys, uset, sched, workers=a["workers"], independent_periods=a["independent_periods"])
    grid = out / "grid_log.csv"
    write_grid_log(res, grid)
    files = [grid, write_rt_solution(sys, res.worst_rt_solution, out / "worst_rt.csv"),
             write_json({"worst_exposure": res.worst_exposure, "per_hour_exposure": res.per_hour_exposure,
                         "per_bus_exposure": exposure_breakdown(sys, res.worst_rt_solution),
                         "worst_grid": res.worst_index, "failed_grids": res.n_failed,
                         "congested": res.congested, "ramp_binding": res.ramp_binding,
                         "alpha_d": res.worst_stressor.alpha_d, "alpha_w": res.worst_stressor.alpha_w},
                        out / "adversary.json")]
    _write_manifest(out, "adversary", cfg, files)
    print(f"worst-case exposure {res.worst_exposure:.6g} at grid {res.worst_index}")
    return EXIT_OK


def cmd_evaluate(cfg: dict, schedule_paths: list[str]) -> int:
    sys = _system(cfg)
    out = _out(cfg)
    if not schedule_paths:
        raise InputError("evaluate needs at least one --schedule file")
    uset = _uset(cfg, sys)
    named = {}
    for p in schedule_paths:
        name = Path(p).stem
        while name in named:
            name += "_"
        named[name] = read_schedule_csv(sys, p)
    e = cfg["evaluation"]
    center = None
    if e["method"] == "cone":
        pick = list(named.values())[e["center_from"]]
        center = solve_adversary(sys, uset, pick, workers=cfg["adversary"]["workers"]).worst_stressor
    spec = SampleSpec(e["method"], int(e["n_samples"]), float(e["cone_angle"]), center, int(cfg["seed"]),
                      bool(e["joint"]))
    report = evaluate_schedules(sys, named, uset, spec, rt_n_tp=e["rt_n_tp"],
                                workers=cfg["adversary"]["workers"])
    files = report.write_csv(out)
    if e.get("boxplots"):
        files.append(report.plot_boxplots(out / "rt_lmp_boxplots.svg"))
    _write_manifest(out, "evaluate", cfg, files, {"failed_samples": report.failed_samples})
    for st in report.schedules:
        print(f"{st.name}: mean cost {st.mean_cost:.6g}, std {st.std_cost:.6g}, "
              f"mean exposure {st.mean_exposure:.6g}")
    return EXIT_OK


def cmd_benchmark_sto(cfg: dict, warm_start: str | None) -> int:
    sys = _system(cfg)
    out = _out(cfg)
    uset = _uset(cfg, sys)
    st, s = cfg["stochastic"], cfg["solver"]
    scenarios = sample_scenarios(SampleSpec("uniform", int(st["n_scenarios"]), seed=int(cfg["seed"])), uset)
    ws = read_schedule_csv(sys, warm_start) if warm_start else None
    sol = solve_stochastic_scuc(sys, scenarios, st["rho_sto"], st["beta"], s["gap"], s["time_limit"], ws,
                                backend=s["backend"])
    files = [write_schedule(sys, sol.schedule, out / "schedule.csv"),
             write_json({"objective": sol.objective, "scenario_costs": sol.scenario_costs, "z": sol.z,
                         "eta": sol.eta, "cvar": sol.cvar, "mip_gap": sol.mip_gap, "status": sol.status,
                         "rho_sto": sol.rho_sto, "beta": sol.beta}, out / "stochastic.json")]
    _write_manifest(out, "benchmark-sto", cfg, files)
    print(f"stochastic objective {sol.objective:.6g}, gap {sol.mip_gap:.3g}")
    return EXIT_OK


def cmd_pca_audit(cfg: dict) -> int:
    sys = _system(cfg)
    out = _out(cfg)
    uset = _uset(cfg, sys)
    modes = write_modes(sys, uset, out / "modes.csv")
    ev = uset.eigvals_load
    share = [float(ev[k, :uset.K_d].sum() / ev[k].sum()) if ev[k].sum() > 0 else 1.0
             for k in range(ev.shape[0])]
    files = [modes, write_json({"K_load": uset.K_d, "K_wind": uset.K_w, "R_d": uset.R_d, "R_w": uset.R_w,
                                "sigma_d": uset.sigma_d, "sigma_w": uset.sigma_w,
                                "load_explained_share": share}, out / "pca.json")]
    _write_manifest(out, "pca-audit", cfg, files)
    print(f"wrote {modes}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--case", help="case file (overrides config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--backend", choices=("highs", "bnb"))
    common.add_argument("--gap", type=float)
    common.add_argument("--time-limit", type=float)
    common.add_argument("--workers", type=int)
    common.add_argument("--load-history")
    common.add_argument("--wind-history")
    common.add_argument("--flex-window", help="comma-separated DA hours")
    common.add_argument("-v", "--verbose", action="store_true")

    risk = argparse.ArgumentParser(add_help=False)
    risk.add_argument("--rho", type=float)
    risk.add_argument("--cuts", help="comma-separated: lbbd, no_good, l_shaped")
    risk.add_argument("--mode", choices=("iterative", "branch_and_cut"))
    risk.add_argument("--root-cuts", type=int)

    p = argparse.ArgumentParser(prog="riskscuc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"riskscuc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-da", parents=[common], help="deterministic DA SCUC and pricing run")
    sub.add_parser("solve-risk-aware", parents=[common, risk], help="risk-aware SCUC by decomposition")
    adv = sub.add_parser("adversary", parents=[common], help="worst-case exposure of a schedule")
    adv.add_argument("--schedule", help="schedule CSV (default: deterministic schedule)")
    ev = sub.add_parser("evaluate", parents=[common], help="paired out-of-sample comparison")
    ev.add_argument("--schedule", action="append", default=[], dest="schedules",
                    help="schedule CSV; repeat, first one is the comparator")
    ev.add_argument("--method", choices=("cone", "uniform"))
    ev.add_argument("--n-samples", type=int)
    sto = sub.add_parser("benchmark-sto", parents=[common], help="stochastic SCUC with CVaR")
    sto.add_argument("--warm-start", help="schedule CSV used as a starting incumbent")
    sub.add_parser("pca-audit", parents=[common], help="export leading modes and eigenvalues")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "solve-da":
            return cmd_solve_da(cfg)
        if args.command == "solve-risk-aware":
            return cmd_risk_aware(cfg)
        if args.command == "adversary":
            return cmd_adversary(cfg, args.schedule)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.schedules)
        if args.command == "benchmark-sto":
            return cmd_benchmark_sto(cfg, args.warm_start)
        return cmd_pca_audit(cfg)
    except (InputError, CaseFormatError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver failure: {exc}", file=_sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
