"""Cut-based decomposition for the risk-aware SCUC.

The master problem is the DA SCUC plus a nonnegative exposure estimate
``v_hat`` weighted by ``rho``. Every cut has the form

    v_hat >= const + sum_{g, h} coef[g, h] * y[g, h]

over the commitment of the RT hours. The adversary supplies the exposure of
each candidate commitment and the cuts that enforce it.
"""
from __future__ import annotations

import csv
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_cut_families, check_scalar
from .adversary import AdversaryResult, solve_adversary
from .errors import SolverError
from .power_system import PowerSystem
from .scuc_da import (CommitmentSchedule, DaDispatch, build_da_model, da_pricing_run,
                      read_schedule, solve_deterministic)
from .solver import INFEASIBLE, OPTIMAL, TIME_LIMIT, Row, get_backend, solve_mip
from .uncertainty import UncertaintySet

logger = logging.getLogger(__name__)

FAMILIES = ("no_good", "l_shaped", "lbbd")


@dataclass(frozen=True)
class Cut:
    """``v_hat >= const + sum(coef * y_rt)`` with ``y_rt`` shaped (generators, RT hours)."""

    family: str
    coef: np.ndarray
    const: float
    y_star: tuple = ()
    v_star: float = 0.0
    iteration: int = 0

    def evaluate(self, y_rt) -> float:
        """Right-hand side at the RT-hour commitment ``y_rt``."""
        return self.const + float(np.sum(self.coef * np.asarray(y_rt, dtype=float)))

    def to_row(self, v_hat: int, y_idx: np.ndarray, name: str = "") -> Row:
        mask = self.coef != 0
        idx = np.concatenate([[v_hat], y_idx[mask]]).astype(np.int64)
        coef = np.concatenate([[1.0], -self.coef[mask]])
        return Row(idx, coef, ">=", float(self.const), name or f"cut_{self.family}")


def _split(y_star_rt):
    y = np.asarray(np.rint(y_star_rt), dtype=int)
    return y, (y == 1), (y == 0)


def make_no_good_cut(y_star_rt, v_star: float, iteration: int = 0) -> Cut:
    """Exact at ``y_star_rt``; any single flip drops the bound to zero or below."""
    if v_star < 0:
        raise ValueError("exposure must be >= 0")
    y, on, off = _split(y_star_rt)
    coef = np.where(on, v_star, 0.0) - np.where(off, v_star, 0.0)
    const = v_star * (1.0 - on.sum())
    return Cut("no_good", coef, float(const), tuple(y.ravel()), float(v_star), iteration)


def l_shaped_slope(v_star: float, v1: float, v0: float = 0.0) -> float:
    return max(v_star - v1, (v_star - v0) / 2.0)


def make_l_shaped_cut(y_star_rt, v_star: float, v1: float, v0: float = 0.0,
                      iteration: int = 0) -> Cut:
    """Integer L-shaped cut.

    ``v1`` is the lowest exposure among commitments one flip away and ``v0`` a
    global lower bound on the exposure. The bound is ``v_star`` at the point,
    at most ``v_star - a`` one flip away and at most ``v0`` two or more flips away.
    """
    if v0 > v_star:
        raise ValueError("v0 must not exceed v_star")
    y, on, off = _split(y_star_rt)
    a = l_shaped_slope(v_star, v1, v0)
    coef = np.where(on, a, 0.0) - np.where(off, a, 0.0)
    const = v_star - a * on.sum()
    return Cut("l_shaped", coef, float(const), tuple(y.ravel()), float(v_star), iteration)


def make_lbbd_cut(y_star_rt, per_hour_exposure, iteration: int = 0) -> Cut:
    """Per-hour cut: each hour keeps its exposure unless an off unit is switched on."""
    y, _, off = _split(y_star_rt)
    v_t = np.asarray(per_hour_exposure, dtype=float)
    if v_t.shape != (y.shape[1],):
        raise ValueError(f"expected {y.shape[1]} per-hour exposures, got {v_t.shape}")
    coef = -np.where(off, v_t[None, :], 0.0)
    return Cut("lbbd", coef, float(math.fsum(v_t)), tuple(y.ravel()), float(math.fsum(v_t)), iteration)


# ---------------------------------------------------------------------------
# adversary oracle with caching
# ---------------------------------------------------------------------------
class ExposureOracle:
    """Caches adversary results by the RT-hour commitment.

    Without a first-period anchor the RT DCOPF only sees the RT hours, so the
    worst-case exposure is a function of those columns of ``y`` alone.
    """

    def __init__(self, sys: PowerSystem, uset: UncertaintySet, workers: int = 1,
                 independent_periods: bool = False):
        self.sys, self.uset = sys, uset
        self.workers, self.independent_periods = workers, independent_periods
        self.cols = sys.time.rt_hour_index
        self._cache: dict[tuple, AdversaryResult] = {}
        self._lock = threading.Lock()
        self.calls = 0

    def rt_part(self, y) -> np.ndarray:
        return np.asarray(np.rint(y), dtype=int)[:, self.cols]

    def __call__(self, y) -> AdversaryResult:
        y = np.asarray(np.rint(y), dtype=int)
        key = tuple(self.rt_part(y).ravel())
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        res = solve_adversary(self.sys, self.uset, y, workers=self.workers,
                              independent_periods=self.independent_periods)
        with self._lock:
            self._cache[key] = res
            self.calls += 1
        return res

    def min_neighbor(self, y, flex_cols) -> float:
        """Lowest exposure over commitments with exactly one RT-hour flip."""
        y = np.asarray(np.rint(y), dtype=int)
        best = math.inf
        flex = set(int(c) for c in flex_cols)
        for g in range(y.shape[0]):
            for c in self.cols:
                if int(c) not in flex:
                    continue
                y2 = y.copy()
                y2[g, c] = 1 - y2[g, c]
                best = min(best, self(y2).worst_exposure)
        return best


def cuts_for(families, oracle: ExposureOracle, y, adv: AdversaryResult, iteration: int,
             flex_cols) -> list[Cut]:
    y_rt = oracle.rt_part(y)
    out = []
    for fam in families:
        if fam == "no_good":
            out.append(make_no_good_cut(y_rt, adv.worst_exposure, iteration))
        elif fam == "lbbd":
            if adv.congested or adv.ramp_binding:
                logger.info("lbbd cut at iteration %d generated under congestion or binding ramps",
                            iteration)
            out.append(make_lbbd_cut(y_rt, adv.per_hour_exposure, iteration))
        elif fam == "l_shaped":
            v1 = oracle.min_neighbor(y, flex_cols)
            out.append(make_l_shaped_cut(y_rt, adv.worst_exposure, v1, 0.0, iteration))
    return out


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------
@dataclass
class IterationRecord:
    iteration: int
    master_obj: float
    v_hat_master: float
    adversary_exposure: float
    cuts_added: int
    wall_time: float


@dataclass
class RiskAwareSolution:
    schedule: CommitmentSchedule
    da_dispatch: DaDispatch
    da_cost: float
    v_hat: float              # adversary exposure of the returned schedule
    rho: float
    total_objective: float    # da_cost + rho * v_hat
    cuts: list[Cut]
    iterations: int
    opt_gap: float
    converged: bool
    status: str
    trace: list[IterationRecord] = field(default_factory=list)
    adversary: AdversaryResult | None = None
    lower_bound: float = -math.inf
    mode: str = "iterative"


def exposure_tolerance(v_star: float) -> float:
    return 1e-4 * (1.0 + abs(v_star))


def _master(sys: PowerSystem, rho: float, det_schedule: CommitmentSchedule | None):
    dm = build_da_model(sys, rho=rho, name="risk_master")
    if det_schedule is not None:
        fixed = np.setdiff1d(np.arange(sys.time.n_da), sys.time.flex_index)
        if fixed.size:
            dm.model.fix(dm.y[:, fixed], det_schedule.y[:, fixed])
    return dm


def _root_candidates(sys: PowerSystem, det_y: np.ndarray, n: int) -> list[np.ndarray]:
    """Commitments for pre-seeded cuts: the deterministic one, then units switched
    on in merit order across the RT hours, one more per candidate."""
    cands = [det_y.copy()]
    order = np.argsort([g.max_marginal_cost for g in sys.thermal_generators], kind="stable")
    cols = sys.time.rt_hour_index
    y = det_y.copy()
    while len(cands) < n:
        changed = False
        for c in cols:
            off = [g for g in order if y[g, c] == 0]
            if off:
                y[off[0], c] = 1
                changed = True
        if not changed:
            break
        cands.append(y.copy())
    return cands[:n]


def solve_risk_aware(sys: PowerSystem, uset: UncertaintySet, rho: float,
                     cut_families=("lbbd",), mode: str = "iterative",
                     det_schedule: CommitmentSchedule | None = None, gap: float = 1e-3,
                     time_limit: float | None = None, root_cuts: int = 0, backend: str = "highs",
                     tol=None, max_iterations: int = 1000, workers: int = 1,
                     independent_periods: bool = False) -> RiskAwareSolution:
    """Minimize DA cost plus ``rho`` times worst-case RT consumer exposure.

    Commitment outside the flex window is fixed to ``det_schedule`` (solved
    here if not given). ``mode="branch_and_cut"`` adds cuts from a lazy
    callback and needs a backend that supports one; otherwise the iterative
    loop is used. ``tol`` overrides the convergence tolerance (a float, or a
    callable of the adversary exposure).
    """
    check_scalar(rho, "rho", lo=0)
    check_scalar(gap, "gap", lo=0, hi=1, lo_open=True, hi_open=True)
    families = check_cut_families(cut_families)
    if mode not in ("iterative", "branch_and_cut"):
        raise ValueError("mode must be 'iterative' or 'branch_and_cut'")
    if mode == "branch_and_cut" and not get_backend(backend).supports_lazy:
        logger.warning("backend %r has no lazy callbacks; using the iterative loop", backend)
        mode = "iterative"
    tol_fn = (exposure_tolerance if tol is None else tol if callable(tol)
              else (lambda _v, t=float(tol): t))
    start = time.monotonic()
    if det_schedule is None:
        det_schedule, _ = solve_deterministic(sys, gap=gap, time_limit=time_limit, backend=backend)

    oracle = ExposureOracle(sys, uset, workers, independent_periods)
    dm = _master(sys, rho, det_schedule)
    y_idx = dm.y[:, sys.time.rt_hour_index]
    flex_cols = sys.time.flex_index
    cuts: list[Cut] = []
    trace: list[IterationRecord] = []

    def _add(new: list[Cut]):
        for c in new:
            dm.model.add_row(*_row_args(c.to_row(dm.v_hat, y_idx, f"cut{len(cuts)}_{c.family}")))
            cuts.append(c)

    if rho > 0 and root_cuts > 0:
        for y0 in _root_candidates(sys, det_schedule.y, root_cuts):
            _add(cuts_for(families, oracle, y0, oracle(y0), 0, flex_cols))

    def _remaining():
        if time_limit is None:
            return None
        return max(time_limit - (time.monotonic() - start), 1e-3)

    best = None  # (upper bound, schedule, adversary)
    lower = -math.inf
    status, converged, n_iter = OPTIMAL, False, 0

    def _consider(sched: CommitmentSchedule, adv: AdversaryResult):
        nonlocal best
        ub = da_pricing_run(sys, sched).objective + rho * adv.worst_exposure
        if best is None or ub < best[0] - 1e-12 * (1 + abs(ub)):
            best = (ub, sched, adv)

    if rho == 0:
        # exposure carries no weight: the master is the deterministic SCUC
        adv = oracle(det_schedule.y)
        _consider(det_schedule, adv)
        n_iter, converged = 1, True
        final = (det_schedule, adv)
        trace.append(IterationRecord(1, best[0], 0.0, adv.worst_exposure, 0, time.monotonic() - start))
        lower = best[0]
    elif mode == "iterative":
        while True:
            if n_iter >= max_iterations:
                status = "iteration_limit"
                break
            if time_limit is not None and time.monotonic() - start > time_limit:
                status = TIME_LIMIT
                break
            res = solve_mip(dm.model, gap=gap, time_limit=_remaining(), backend=backend)
            n_iter += 1
            if res.status == INFEASIBLE:
                raise SolverError("risk-aware master is infeasible", res.status)
            if not res.has_solution:
                status = res.status
                break
            sched = read_schedule(dm, res)
            v_master = float(res.x[dm.v_hat])
            lower = max(lower, res.objective - (res.mip_gap or 0.0) * abs(res.objective))
            adv = oracle(sched.y)
            _consider(sched, adv)
            if v_master >= adv.worst_exposure - tol_fn(adv.worst_exposure):
                trace.append(IterationRecord(n_iter, res.objective, v_master, adv.worst_exposure, 0,
                                             time.monotonic() - start))
                converged = res.status == OPTIMAL
                status = res.status
                final = (sched, adv)
                break
            new = cuts_for(families, oracle, sched.y, adv, n_iter, flex_cols)
            _add(new)
            trace.append(IterationRecord(n_iter, res.objective, v_master, adv.worst_exposure, len(new),
                                         time.monotonic() - start))
    else:
        n_before = dm.model.n_rows

        def lazy(x):
            sched = CommitmentSchedule.from_y(np.rint(x[dm.y]))
            adv = oracle(sched.y)
            v_master = float(x[dm.v_hat])
            if rho == 0 or v_master >= adv.worst_exposure - tol_fn(adv.worst_exposure):
                return []
            new = cuts_for(families, oracle, sched.y, adv, len(cuts) + 1, flex_cols)
            rows = [c.to_row(dm.v_hat, y_idx, f"cut{len(cuts) + i}_{c.family}") for i, c in enumerate(new)]
            cuts.extend(new)
            trace.append(IterationRecord(len(trace) + 1, float(dm.model.objective @ x), v_master,
                                         adv.worst_exposure, len(new), time.monotonic() - start))
            return rows

        res = solve_mip(dm.model, gap=gap, time_limit=time_limit, lazy_cb=lazy, backend=backend)
        if res.status == INFEASIBLE:
            raise SolverError("risk-aware master is infeasible", res.status)
        if not res.has_solution:
            raise SolverError(f"branch-and-cut returned no incumbent ({res.status})", res.status)
        sched = read_schedule(dm, res)
        adv = oracle(sched.y)
        _consider(sched, adv)
        lower = res.objective - (res.mip_gap or 0.0) * abs(res.objective)
        n_iter = len(trace) + 1
        trace.append(IterationRecord(n_iter, res.objective, float(res.x[dm.v_hat]), adv.worst_exposure, 0,
                                     time.monotonic() - start))
        status = res.status
        converged = res.status == OPTIMAL
        final = (sched, adv)
        logger.debug("branch-and-cut added %d rows", dm.model.n_rows - n_before)

    if best is None:
        raise SolverError(f"risk-aware loop produced no incumbent ({status})", status)
    if converged:
        sched, adv = final
    else:
        _, sched, adv = best
        logger.warning("risk-aware loop stopped with status %s after %d iterations", status, n_iter)
    pricing = da_pricing_run(sys, sched)
    da = pricing.objective
    total = da + rho * adv.worst_exposure
    opt_gap = 0.0 if not math.isfinite(lower) else max(total - lower, 0.0) / max(abs(total), 1e-10)
    return RiskAwareSolution(
        schedule=sched, da_dispatch=pricing.dispatch, da_cost=da, v_hat=adv.worst_exposure, rho=rho,
        total_objective=total, cuts=cuts, iterations=n_iter, opt_gap=opt_gap, converged=converged,
        status=status, trace=trace, adversary=adv, lower_bound=lower, mode=mode,
    )


def _row_args(row: Row):
    return row.idx, row.coef, row.sense, row.rhs, row.name


def write_trace(sol: RiskAwareSolution, path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "master_obj", "v_hat_master", "adversary_exposure", "cuts_added",
                     "wall_time"])
        for r in sol.trace:
            wr.writerow([r.iteration, repr(r.master_obj), repr(r.v_hat_master),
                         repr(r.adversary_exposure), r.cuts_added, f"{r.wall_time:.4f}"])


class RiskAwareSCUC(BaseEstimator):
    """Estimator wrapper around :func:`solve_risk_aware`.

    ``fit(system, uncertainty_set)`` sets ``solution_``, ``schedule_``,
    ``objective_`` and ``exposure_``; ``predict(scenarios)`` clears the RT
    market for each scenario under the fitted commitment.
    """

    def __init__(self, rho: float = 1.0, cut_families=("lbbd",), mode: str = "iterative",
                 gap: float = 1e-3, time_limit: float | None = None, root_cuts: int = 0,
                 backend: str = "highs", workers: int = 1):
        self.rho = rho
        self.cut_families = cut_families
        self.mode = mode
        self.gap = gap
        self.time_limit = time_limit
        self.root_cuts = root_cuts
        self.backend = backend
        self.workers = workers

    def fit(self, system: PowerSystem, uncertainty_set: UncertaintySet, det_schedule=None):
        self.system_ = system
        self.solution_ = solve_risk_aware(
            system, uncertainty_set, self.rho, self.cut_families, self.mode, det_schedule, self.gap,
            self.time_limit, self.root_cuts, self.backend, workers=self.workers)
        self.schedule_ = self.solution_.schedule
        self.objective_ = self.solution_.total_objective
        self.exposure_ = self.solution_.v_hat
        return self

    def predict(self, scenarios):
        from .dcopf_rt import solve_dcopf

        check_is_fitted(self, "schedule_")
        return [solve_dcopf(self.system_, self.schedule_, s) for s in scenarios]
