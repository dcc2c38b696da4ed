"""Grid-search adversary: worst-case RT consumer exposure for a fixed commitment."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dcopf_rt import RtSolution, Scenario, exposure_by_period, solve_dcopf
from .errors import RiskScucError, SolverError
from .power_system import PowerSystem
from .uncertainty import StressorVector, UncertaintySet, grid_points, realize_grid

logger = logging.getLogger(__name__)

BIND_TOL = 1e-6


@dataclass
class GridEvaluation:
    index: int
    label: tuple
    stressor: StressorVector
    exposure: float = math.nan
    per_hour: np.ndarray | None = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class AdversaryResult:
    """Worst grid for one commitment, with the per-grid audit log."""

    worst_scenario: Scenario
    worst_exposure: float
    per_hour_exposure: np.ndarray     # per RT hour, sums to worst_exposure
    worst_rt_solution: RtSolution
    worst_stressor: StressorVector
    worst_index: int
    grid_log: list[GridEvaluation] = field(default_factory=list)
    congested: bool = False
    ramp_binding: bool = False

    @property
    def n_failed(self) -> int:
        return sum(not g.ok for g in self.grid_log)


def _per_hour(sys: PowerSystem, sol: RtSolution) -> np.ndarray:
    by_period = exposure_by_period(sol)
    return np.array([math.fsum(by_period[list(sys.time.periods_of_hour(h))])
                     for h in sys.time.rt_hours])


def _congested(sys: PowerSystem, sol: RtSolution) -> bool:
    if not sys.lines:
        return False
    cap = np.array([ln.capacity for ln in sys.lines])[:, None]
    return bool(np.any(np.abs(sol.f) >= cap - BIND_TOL))


def _ramp_binding(sys: PowerSystem, sol: RtSolution, y_rt: np.ndarray) -> bool:
    ramp, pmin = sys.thermal_attr("ramp_rt"), sys.thermal_attr("p_min")
    parent = sys.time.rt_parent_index
    for k in range(1, sol.p.shape[1]):
        if parent[k] - parent[k - 1] > 1:
            continue
        both = (y_rt[:, k - 1] == 1) & (y_rt[:, k] == 1)
        limit = np.where(both, ramp, pmin)
        fin = np.isfinite(ramp)
        if np.any(np.abs(sol.p[fin, k] - sol.p[fin, k - 1]) >= limit[fin] - BIND_TOL):
            return True
    return False


def solve_adversary(sys: PowerSystem, uset: UncertaintySet, y_star, *, workers: int = 1,
                    independent_periods: bool = False, grids: list[StressorVector] | None = None,
                    anchor=None) -> AdversaryResult:
    """Evaluate every stressor grid and keep the one with the highest exposure.

    Ties go to the first grid in enumeration order. Grids whose DCOPF fails
    are logged and skipped; if all fail a :class:`SolverError` is raised.
    """
    if grids is None:
        grids = grid_points(uset, independent_periods)
    if not grids:
        raise ValueError("no grids to evaluate")
    log = [GridEvaluation(i, g.label, g) for i, g in enumerate(grids)]

    def _run(entry: GridEvaluation):
        try:
            sol = solve_dcopf(sys, y_star, realize_grid(uset, entry.stressor), anchor=anchor)
        except RiskScucError as exc:
            entry.error = str(exc)
            logger.warning("grid %d %s failed: %s", entry.index, entry.label, exc)
            return None
        entry.per_hour = _per_hour(sys, sol)
        entry.exposure = math.fsum(entry.per_hour)
        return sol

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(_run, log))
    else:
        sols = [_run(e) for e in log]

    best = None
    for e in log:  # deterministic reduction, first maximum wins
        if e.ok and (best is None or e.exposure > log[best].exposure):
            best = e.index
    if best is None:
        msgs = "; ".join(f"grid {e.index}: {e.error}" for e in log[:5])
        raise SolverError(f"all {len(log)} adversary grids failed ({msgs})", "error")
    sol = sols[best]
    y = y_star.y if hasattr(y_star, "y") else np.asarray(y_star)
    y_rt = np.rint(y)[:, sys.time.rt_parent_index]
    return AdversaryResult(
        worst_scenario=Scenario(sol.d_rt, realize_grid(uset, log[best].stressor).p_cap_rt),
        worst_exposure=log[best].exposure, per_hour_exposure=log[best].per_hour,
        worst_rt_solution=sol, worst_stressor=log[best].stressor, worst_index=best, grid_log=log,
        congested=_congested(sys, sol), ramp_binding=_ramp_binding(sys, sol, y_rt),
    )


def write_grid_log(result: AdversaryResult, path) -> None:
    """CSV audit trail: one row per evaluated grid."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["grid", "load_pattern", "wind_pattern", "exposure", "worst", "error"])
        for e in result.grid_log:
            joint = len(e.label) == 2 and all(isinstance(x, int) for x in (*e.label[0], *e.label[1]))
            lp, wp = (e.label if joint else (e.label, ""))
            exp = "" if not e.ok else repr(e.exposure)
            wr.writerow([e.index, _fmt(lp), _fmt(wp), exp, int(e.index == result.worst_index), e.error])


def _fmt(pattern) -> str:
    return " ".join("+" if s > 0 else "-" for s in pattern) if all(
        isinstance(s, int) for s in pattern) else str(pattern)
