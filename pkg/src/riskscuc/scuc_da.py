"""Deterministic day-ahead SCUC, its risk-aware master variant and the pricing run."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._formulation import DispatchIndex, add_commitment_block, add_da_ramping, add_dispatch_block
from .errors import SolverError, ValidationError
from .power_system import PowerSystem
from .solver import OPTIMAL, TIME_LIMIT, ModelHandle, SolveResult, solve_lp, solve_mip


@dataclass(frozen=True)
class CommitmentSchedule:
    """On/off (y), startup (v) and shutdown (w) per thermal generator and DA hour."""

    y: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name in ("y", "v", "w"):
            arr = np.asarray(np.rint(getattr(self, name)), dtype=int)
            if arr.ndim != 2:
                raise ValidationError(f"{name} must be (generators, hours)", "schedule")
            if not np.isin(arr, (0, 1)).all():
                raise ValidationError(f"{name} entries must be 0 or 1", "schedule")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.y.shape == self.v.shape == self.w.shape):
            raise ValidationError("y, v, w shapes differ", "schedule")
        prev = np.concatenate([np.zeros((self.y.shape[0], 1), dtype=int), self.y[:, :-1]], axis=1)
        if not np.array_equal(self.v - self.w, self.y - prev):
            raise ValidationError("v - w must equal y_t - y_(t-1) with a cold start", "schedule-linking")

    @classmethod
    def from_y(cls, y) -> "CommitmentSchedule":
        """Minimal startups/shutdowns consistent with ``y`` and a cold start."""
        y = np.asarray(np.rint(y), dtype=int)
        prev = np.concatenate([np.zeros((y.shape[0], 1), dtype=int), y[:, :-1]], axis=1)
        return cls(y, np.maximum(y - prev, 0), np.maximum(prev - y, 0))

    def key(self, hour_idx=None) -> tuple:
        y = self.y if hour_idx is None else self.y[:, hour_idx]
        return tuple(y.ravel().tolist())

    def __eq__(self, other):
        if not isinstance(other, CommitmentSchedule):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in "yvw")

    def __hash__(self):
        return hash((self.key(), tuple(self.v.ravel()), tuple(self.w.ravel())))


@dataclass
class DaDispatch:
    p: np.ndarray          # thermal output (G, T)
    h: np.ndarray          # thermal cost (G, T)
    p_wind: np.ndarray     # (W, T)
    curtail: np.ndarray    # (W, T)
    f: np.ndarray          # (L, T)
    theta: np.ndarray      # (N, T)
    unmet: np.ndarray      # (N, T)
    objective: float
    breakdown: dict = field(default_factory=dict)


@dataclass
class DaModel:
    """The DA SCUC model plus the index arrays needed to read it back."""

    model: ModelHandle
    disp: DispatchIndex
    y: np.ndarray
    v: np.ndarray
    w: np.ndarray
    v_hat: int | None = None


def build_da_model(sys: PowerSystem, *, rho: float | None = None, name: str = "scuc_da") -> DaModel:
    """DA SCUC MILP; with ``rho`` it becomes the risk-aware master problem.

    The master adds a nonnegative exposure estimate with objective weight
    ``rho``; cuts bound it from below.
    """
    m = ModelHandle(name)
    y, v, w = add_commitment_block(m, sys)
    disp = add_dispatch_block(m, sys, sys.load_da, sys.wind_da, sys.voll_da, y_var=y)
    add_da_ramping(m, sys, disp.p, y, v, w)
    v_hat = None
    if rho is not None:
        if rho < 0:
            raise ValueError("rho must be >= 0")
        v_hat = m.add_var("v_hat", lb=0.0, obj=rho)
    return DaModel(m, disp, y, v, w, v_hat)


def fix_commitment(dm: DaModel, schedule: CommitmentSchedule, hour_idx=None) -> None:
    """Fix y/v/w by bound tightening, on all hours or on ``hour_idx`` only."""
    cols = slice(None) if hour_idx is None else np.asarray(hour_idx)
    dm.model.fix(dm.y[:, cols], schedule.y[:, cols])
    dm.model.fix(dm.v[:, cols], schedule.v[:, cols])
    dm.model.fix(dm.w[:, cols], schedule.w[:, cols])


def read_schedule(dm: DaModel, res: SolveResult) -> CommitmentSchedule:
    return CommitmentSchedule(np.rint(res.value(dm.y)), np.rint(res.value(dm.v)), np.rint(res.value(dm.w)))


def read_dispatch(sys: PowerSystem, dm: DaModel, res: SolveResult) -> DaDispatch:
    d = dm.disp
    sched = read_schedule(dm, res)
    p = res.value(d.p)
    h = np.array([sys.thermal_generators[g].cost(p[g], sched.y[g]) for g in range(sys.n_thermal)])
    h = h.reshape(p.shape)
    unmet = res.value(d.unmet)
    breakdown = {
        "production": float(h.sum()),
        "startup": float(sys.thermal_attr("startup_cost") @ sched.v.sum(axis=1)),
        "shutdown": float(sys.thermal_attr("shutdown_cost") @ sched.w.sum(axis=1)),
        "unmet_penalty": float(sys.voll_da * unmet.sum()),
    }
    objective = math.fsum(breakdown.values())
    return DaDispatch(p, h, res.value(d.pw), res.value(d.curtail), res.value(d.f),
                      res.value(d.theta), unmet, objective, breakdown)


def _raise_for(res: SolveResult, what: str) -> None:
    if res.status not in (OPTIMAL, TIME_LIMIT) or not res.has_solution:
        raise SolverError(f"{what}: solver returned {res.status} {res.message}".strip(), res.status)


def solve_deterministic(sys: PowerSystem, gap: float = 1e-3, time_limit: float | None = None,
                        backend: str = "highs") -> tuple[CommitmentSchedule, DaDispatch]:
    """Solve the deterministic DA SCUC; returns the commitment and dispatch."""
    dm = build_da_model(sys)
    res = solve_mip(dm.model, gap=gap, time_limit=time_limit, backend=backend)
    _raise_for(res, "deterministic SCUC")
    sched, disp = read_schedule(dm, res), read_dispatch(sys, dm, res)
    return _drop_idle_units(sys, sched, disp)


def _drop_idle_units(sys: PowerSystem, sched: CommitmentSchedule, disp: DaDispatch):
    # committed units with zero output all day are a tie; prefer them off when that costs nothing
    idle = (sched.y.any(axis=1)) & (np.abs(disp.p).max(axis=1, initial=0.0) <= 1e-9)
    if not idle.any():
        return sched, disp
    y = sched.y.copy()
    y[idle] = 0
    alt = CommitmentSchedule.from_y(y)
    try:
        pr = da_pricing_run(sys, alt)
    except SolverError:
        return sched, disp
    if pr.objective <= disp.objective + 1e-9 * (1.0 + abs(disp.objective)):
        return alt, pr.dispatch
    return sched, disp


@dataclass
class DaPricing:
    lmp: np.ndarray         # (N, T) $/MWh
    dispatch: DaDispatch
    payment: np.ndarray     # (N, T) $, DA LMP times DA load
    result: SolveResult

    @property
    def objective(self) -> float:
        return self.dispatch.objective


def da_pricing_run(sys: PowerSystem, fixed: CommitmentSchedule) -> DaPricing:
    """LP with the commitment fixed; DA LMPs are the load-balance duals."""
    dm = build_da_model(sys, name="pricing_run")
    fix_commitment(dm, fixed)
    res = solve_lp(dm.model)
    if res.status != OPTIMAL:
        raise SolverError(f"pricing run: commitment is not feasible ({res.status})", res.status)
    lmp = res.dual(dm.disp.balance)
    return DaPricing(lmp, read_dispatch(sys, dm, res), lmp * sys.load_da, res)


def da_cost(sys: PowerSystem, schedule: CommitmentSchedule) -> float:
    """DA objective (production, startup/shutdown, unmet load) of a fixed commitment."""
    return da_pricing_run(sys, schedule).objective


class DeterministicSCUC(BaseEstimator):
    """Estimator wrapper: ``fit(system)`` solves the DA SCUC.

    Fitted attributes: ``schedule_``, ``dispatch_``, ``objective_``, ``lmp_``.
    ``predict(scenarios)`` clears the RT market for each scenario under the
    fitted commitment.
    """

    def __init__(self, gap: float = 1e-3, time_limit: float | None = None, backend: str = "highs",
                 pricing_run: bool = True):
        self.gap = gap
        self.time_limit = time_limit
        self.backend = backend
        self.pricing_run = pricing_run

    def fit(self, system: PowerSystem, y=None):
        self.system_ = system
        self.schedule_, self.dispatch_ = solve_deterministic(system, self.gap, self.time_limit,
                                                             self.backend)
        self.objective_ = self.dispatch_.objective
        if self.pricing_run:
            self.lmp_ = da_pricing_run(system, self.schedule_).lmp
        return self

    def predict(self, scenarios):
        from .dcopf_rt import solve_dcopf

        check_is_fitted(self, "schedule_")
        return [solve_dcopf(self.system_, self.schedule_, s) for s in scenarios]
