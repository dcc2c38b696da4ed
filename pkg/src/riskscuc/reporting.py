"""CSV/JSON export and import of schedules, dispatch, prices and modes."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dcopf_rt import RtSolution, exposure_by_bus
from .errors import CaseFormatError, ValidationError
from .power_system import PowerSystem
from .scuc_da import CommitmentSchedule, DaDispatch
from .uncertainty import UncertaintySet


def _num(x) -> str:
    # shortest round-trip repr, with -0.0 and 1e-13 noise folded to 0
    x = float(x)
    return repr(0.0 if abs(x) < 1e-12 else x)


def write_schedule(sys: PowerSystem, sched: CommitmentSchedule, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["generator", "hour", "y", "v", "w"])
        for g, gen in enumerate(sys.thermal_generators):
            for t, h in enumerate(sys.time.da_hours):
                wr.writerow([gen.id, h, sched.y[g, t], sched.v[g, t], sched.w[g, t]])
    return path


def read_schedule_csv(sys: PowerSystem, path) -> CommitmentSchedule:
    """Read a schedule written by :func:`write_schedule`; must cover every generator-hour."""
    path = Path(path)
    if not path.exists():
        raise CaseFormatError(f"schedule file not found: {path}")
    gidx = {g.id: i for i, g in enumerate(sys.thermal_generators)}
    hidx = {h: i for i, h in enumerate(sys.time.da_hours)}
    G, T = sys.n_thermal, sys.time.n_da
    arrs = {k: np.full((G, T), -1, dtype=int) for k in "yvw"}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"generator", "hour", "y"} - set(reader.fieldnames or ())
        if missing:
            raise CaseFormatError(f"schedule header lacks {sorted(missing)}", str(path))
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:line {lineno}"
            try:
                g, t = gidx[row["generator"]], hidx[int(row["hour"])]
            except (KeyError, ValueError):
                raise ValidationError(f"{where}: generator {row['generator']!r} / hour {row['hour']!r} "
                                      "not in the case", "schedule-case") from None
            for k in "yvw":
                if row.get(k) not in (None, ""):
                    try:
                        arrs[k][g, t] = int(row[k])
                    except ValueError:
                        raise CaseFormatError(f"non-integer {k} value {row[k]!r}", where) from None
    if np.any(arrs["y"] < 0):
        raise ValidationError(f"{path}: schedule does not cover every generator-hour", "schedule-case")
    if np.any(arrs["v"] < 0) or np.any(arrs["w"] < 0):
        return CommitmentSchedule.from_y(arrs["y"])
    return CommitmentSchedule(arrs["y"], arrs["v"], arrs["w"])


def write_da_dispatch(sys: PowerSystem, disp: DaDispatch, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["generator", "hour", "p_mw", "cost"])
        for g, gen in enumerate(sys.thermal_generators):
            for t, h in enumerate(sys.time.da_hours):
                wr.writerow([gen.id, h, _num(disp.p[g, t]), _num(disp.h[g, t])])
        for k, wg in enumerate(sys.wind_generators):
            for t, h in enumerate(sys.time.da_hours):
                wr.writerow([wg.id, h, _num(disp.p_wind[k, t]), "0.0"])
    return path


def write_da_family_csvs(sys: PowerSystem, disp: DaDispatch, out_dir) -> list[Path]:
    """One long-format CSV per variable family (flows, angles, unmet load, curtailment)."""
    out = Path(out_dir)
    hours = sys.time.da_hours
    fams = {
        "flow": ([ln.id or f"{ln.from_bus}-{ln.to_bus}" for ln in sys.lines], disp.f),
        "theta": ([b.id for b in sys.buses], disp.theta),
        "unmet": ([b.id for b in sys.buses], disp.unmet),
        "curtail": ([w.id for w in sys.wind_generators], disp.curtail),
    }
    paths = []
    for name, (ids, arr) in fams.items():
        p = out / f"da_{name}.csv"
        with p.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["id", "hour", name])
            for i, ident in enumerate(ids):
                for t, h in enumerate(hours):
                    wr.writerow([ident, h, _num(arr[i, t])])
        paths.append(p)
    return paths


def write_lmp(sys: PowerSystem, lmp: np.ndarray, path, hours=None) -> Path:
    path = Path(path)
    hours = sys.time.da_hours if hours is None else hours
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bus", "hour", "lmp"])
        for i, b in enumerate(sys.buses):
            for t, h in enumerate(hours):
                wr.writerow([b.id, h, _num(lmp[i, t])])
    return path


def write_rt_solution(sys: PowerSystem, sol: RtSolution, path) -> Path:
    """Per (bus, RT period): LMP, load, excess over forecast and exposure."""
    path = Path(path)
    contrib = sol.lmp * sol.excess / sol.n_tp
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bus", "period", "hour", "lmp", "load", "excess", "exposure"])
        for i, b in enumerate(sys.buses):
            for k, h in enumerate(sys.time.rt_periods):
                wr.writerow([b.id, k, h, _num(sol.lmp[i, k]), _num(sol.d_rt[i, k]),
                             _num(sol.excess[i, k]), _num(contrib[i, k])])
    return path


def exposure_breakdown(sys: PowerSystem, sol: RtSolution) -> dict:
    return {str(b.id): float(v) for b, v in zip(sys.buses, exposure_by_bus(sol))}


def write_modes(sys: PowerSystem, uset: UncertaintySet, path) -> Path:
    """Audit table: one row per (period, kind, mode) with eigenvalue and components."""
    path = Path(path)
    ncol = max(sys.n_buses, sys.n_wind)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["period", "hour", "kind", "mode", "eigenvalue"] + [f"c{j}" for j in range(ncol)])
        for k, h in enumerate(uset.period_hours):
            for kind, modes, vals in (("load", uset.modes_load, uset.eigvals_load),
                                      ("wind", uset.modes_wind, uset.eigvals_wind)):
                for m in range(modes.shape[1]):
                    comps = [_num(c) for c in modes[k, m]]
                    wr.writerow([k, h, kind, m + 1, _num(vals[k, m])] + comps)
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
