"""Real-time DCOPF under a fixed commitment, RT LMPs, consumer exposure and surplus."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._formulation import add_dispatch_block
from .errors import SolverError, ValidationError
from .power_system import PowerSystem
from .scuc_da import CommitmentSchedule
from .solver import OPTIMAL, ModelHandle, solve_lp


@dataclass(frozen=True)
class Scenario:
    """One RT realization: load per (bus, RT period), wind cap per (farm, RT period)."""

    d_rt: np.ndarray
    p_cap_rt: np.ndarray

    def __post_init__(self):
        for name in ("d_rt", "p_cap_rt"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise ValidationError(f"{name} must be 2-D", "scenario")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValidationError(f"{name} entries must be finite and >= 0", "scenario-nonnegative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def baseline(cls, sys: PowerSystem) -> "Scenario":
        return cls(sys.load_rt, sys.wind_rt)


@dataclass
class RtSolution:
    p: np.ndarray            # thermal output (G, R)
    h: np.ndarray            # segment-accurate thermal cost (G, R)
    p_wind: np.ndarray       # (W, R)
    curtail: np.ndarray      # (W, R)
    f: np.ndarray            # (L, R)
    theta: np.ndarray        # (N, R)
    unmet: np.ndarray        # (N, R)
    lmp: np.ndarray          # (N, R) $/MWh
    objective: float
    d_rt: np.ndarray         # (N, R)
    baseline: np.ndarray     # (N, R) D-bar used for exposure
    n_tp: int
    thermal_bus: np.ndarray
    wind_bus: np.ndarray
    duality_gap: float = 0.0

    @property
    def excess(self) -> np.ndarray:
        return np.maximum(self.d_rt - self.baseline, 0.0)

    @property
    def exposure(self) -> float:
        return consumer_exposure(self)

    @property
    def producer_surplus(self) -> float:
        return producer_surplus(self)


def _rt_commitment(sys: PowerSystem, y_star) -> np.ndarray:
    y = y_star.y if isinstance(y_star, CommitmentSchedule) else np.asarray(y_star)
    if y.shape != (sys.n_thermal, sys.time.n_da):
        raise ValidationError(f"commitment shape {y.shape} != {(sys.n_thermal, sys.time.n_da)}",
                              "dimensions")
    return np.asarray(np.rint(y), dtype=float)


def build_dcopf(sys: PowerSystem, y_star, omega: Scenario, anchor=None):
    """Build the RT DCOPF LP; returns ``(model, dispatch_index)``.

    ``anchor`` optionally pins the output before the first RT period, as a
    length-G array of MW from the preceding DA hour. Without it the first RT
    period has no ramp predecessor.
    """
    y = _rt_commitment(sys, y_star)
    R, N, W = sys.time.n_rt, sys.n_buses, sys.n_wind
    if omega.d_rt.shape != (N, R) or omega.p_cap_rt.shape != (W, R):
        raise ValidationError(
            f"scenario shapes {omega.d_rt.shape}/{omega.p_cap_rt.shape} do not match "
            f"({N}, {R})/({W}, {R})", "dimensions")
    parent = sys.time.rt_parent_index
    y_rt = y[:, parent]
    m = ModelHandle("dcopf_rt")
    disp = add_dispatch_block(m, sys, omega.d_rt, omega.p_cap_rt, sys.voll_rt, y_fixed=y_rt)

    ramp, pmin = sys.thermal_attr("ramp_rt"), sys.thermal_attr("p_min")
    p = disp.p
    for g in range(sys.n_thermal):
        if math.isinf(ramp[g]):
            continue
        for k in range(1, R):
            if parent[k] - parent[k - 1] > 1:
                continue  # non-adjacent critical hours
            limit = ramp[g] if (y_rt[g, k - 1] == 1 and y_rt[g, k] == 1) else pmin[g]
            m.add_row([p[g, k], p[g, k - 1]], [1.0, -1.0], "<=", limit, f"rt_rampup[{g},{k}]")
            m.add_row([p[g, k - 1], p[g, k]], [1.0, -1.0], "<=", limit, f"rt_rampdn[{g},{k}]")
        if anchor is not None and parent[0] > 0:
            y_prev = y[g, parent[0] - 1]
            limit = ramp[g] if (y_prev == 1 and y_rt[g, 0] == 1) else pmin[g]
            p0 = float(anchor[g])
            m.add_row([p[g, 0]], [1.0], "<=", p0 + limit, f"rt_rampup[{g},0]")
            m.add_row([p[g, 0]], [1.0], ">=", p0 - limit, f"rt_rampdn[{g},0]")
    return m, disp


def solve_dcopf(sys: PowerSystem, y_star, omega: Scenario, anchor=None) -> RtSolution:
    """Clear the RT market for scenario ``omega`` with the commitment fixed.

    The RT LMPs are the duals of the load-balance rows.
    """
    m, disp = build_dcopf(sys, y_star, omega, anchor)
    res = solve_lp(m)
    if res.status != OPTIMAL:
        raise SolverError(f"RT DCOPF returned {res.status}", res.status)
    y_rt = _rt_commitment(sys, y_star)[:, sys.time.rt_parent_index]
    p = res.value(disp.p)
    h = np.array([sys.thermal_generators[g].cost(p[g], y_rt[g]) for g in range(sys.n_thermal)])
    return RtSolution(
        p=p, h=h.reshape(p.shape), p_wind=res.value(disp.pw), curtail=res.value(disp.curtail),
        f=res.value(disp.f), theta=res.value(disp.theta), unmet=res.value(disp.unmet),
        lmp=res.dual(disp.balance), objective=res.objective, d_rt=omega.d_rt,
        baseline=sys.load_rt, n_tp=sys.time.n_tp, thermal_bus=sys.thermal_bus,
        wind_bus=sys.wind_bus, duality_gap=res.duality_gap,
    )


def exposure_by_bus(sol: RtSolution, da_load=None, n_tp: int | None = None) -> np.ndarray:
    """Per-bus RT consumer exposure, summed over RT periods and scaled by 1/n_tp."""
    base = sol.baseline if da_load is None else np.asarray(da_load, dtype=float)
    n_tp = sol.n_tp if n_tp is None else n_tp
    excess = np.maximum(sol.d_rt - base, 0.0)
    return (sol.lmp * excess).sum(axis=1) / n_tp


def exposure_by_period(sol: RtSolution, da_load=None, n_tp: int | None = None) -> np.ndarray:
    base = sol.baseline if da_load is None else np.asarray(da_load, dtype=float)
    n_tp = sol.n_tp if n_tp is None else n_tp
    return (sol.lmp * np.maximum(sol.d_rt - base, 0.0)).sum(axis=0) / n_tp


def consumer_exposure(sol: RtSolution, da_load=None, n_tp: int | None = None) -> float:
    """RT consumer exposure: sum of RT LMP times positive load excess, over n_tp."""
    return math.fsum(exposure_by_bus(sol, da_load, n_tp))


def producer_surplus(sol: RtSolution) -> float:
    """RT producer surplus: LMP revenue minus segment-accurate cost, over n_tp.

    Thermal and wind units are included; wind has zero production cost.
    """
    thermal = sol.lmp[sol.thermal_bus] * sol.p - sol.h if sol.p.size else np.zeros(0)
    wind = sol.lmp[sol.wind_bus] * sol.p_wind if sol.p_wind.size else np.zeros(0)
    return math.fsum(np.concatenate([np.ravel(thermal), np.ravel(wind)])) / sol.n_tp
