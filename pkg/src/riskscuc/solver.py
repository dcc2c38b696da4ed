"""LP/MILP model container and solver backends.

Two backends are available:

``highs``
    scipy's HiGHS bindings (``linprog`` / ``milp``). Fast, no lazy-constraint
    callbacks.
``bnb``
    A small best-bound branch-and-bound over HiGHS LP relaxations. Slower, but
    it calls a lazy-constraint callback at every integral incumbent, which is
    what the branch-and-cut mode of the decomposition needs.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .errors import SolverError

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-6
DUAL_TOL = 1e-6
INT_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TIME_LIMIT = "time_limit"
GAP_LIMIT = "gap_limit"
ERROR = "error"

_SENSES = ("<=", ">=", "==")


@dataclass(frozen=True)
class Row:
    """A linear constraint ``coef @ x[idx] (sense) rhs``."""

    idx: np.ndarray
    coef: np.ndarray
    sense: str
    rhs: float
    name: str = ""


class ModelHandle:
    """Mutable container for a linear (mixed-integer) minimization model."""

    def __init__(self, name: str = "model"):
        self.name = name
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._obj: list[float] = []
        self._int: list[bool] = []
        self.var_names: list[str] = []
        self.rows: list[Row] = []
        self.obj_constant = 0.0
        self._mat_cache: tuple[int, int, sp.csr_matrix] | None = None

    # -- variables ---------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self._lb)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def has_integers(self) -> bool:
        return any(self._int)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                obj: float = 0.0, binary: bool = False) -> int:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ValueError(f"variable {name}: lb {lb} > ub {ub}")
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._obj.append(float(obj))
        self._int.append(bool(binary))
        self.var_names.append(name)
        return self.n_vars - 1

    def add_vars(self, name: str, shape, lb=0.0, ub=math.inf, obj=0.0,
                 binary: bool = False) -> np.ndarray:
        """Add a block of variables; returns an int index array of ``shape``."""
        shape = tuple(np.atleast_1d(shape))
        n = int(np.prod(shape)) if shape else 1
        lb = np.broadcast_to(np.asarray(lb, dtype=float), shape).ravel()
        ub = np.broadcast_to(np.asarray(ub, dtype=float), shape).ravel()
        obj = np.broadcast_to(np.asarray(obj, dtype=float), shape).ravel()
        out = np.empty(n, dtype=np.int64)
        for k, pos in enumerate(itertools.product(*[range(s) for s in shape])):
            label = f"{name}[{','.join(map(str, pos))}]"
            out[k] = self.add_var(label, lb[k], ub[k], obj[k], binary)
        return out.reshape(shape)

    def set_bounds(self, var: int, lb: float, ub: float) -> None:
        self._lb[var] = float(lb)
        self._ub[var] = float(ub)

    def fix(self, var, value) -> None:
        """Fix variable(s) by tightening bounds to ``[value, value]``."""
        for j, v in zip(np.atleast_1d(var).ravel(), np.broadcast_to(value, np.shape(var)).ravel()):
            self.set_bounds(int(j), float(v), float(v))

    def set_objective(self, var, coef) -> None:
        for j, c in zip(np.atleast_1d(var).ravel(), np.broadcast_to(coef, np.shape(var)).ravel()):
            self._obj[int(j)] = float(c)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._lb), np.array(self._ub)

    @property
    def objective(self) -> np.ndarray:
        return np.array(self._obj)

    @property
    def integrality(self) -> np.ndarray:
        return np.array(self._int, dtype=bool)

    # -- constraints -------------------------------------------------------
    def add_row(self, idx, coef, sense: str, rhs: float, name: str = "") -> int:
        if sense not in _SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        idx = np.asarray(idx, dtype=np.int64).ravel()
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).astype(float)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise ValueError(f"row {name!r} references an unknown variable")
        self.rows.append(Row(idx, coef, sense, float(rhs), name))
        return self.n_rows - 1

    def copy(self) -> "ModelHandle":
        other = ModelHandle(self.name)
        other._lb, other._ub = list(self._lb), list(self._ub)
        other._obj, other._int = list(self._obj), list(self._int)
        other.var_names = list(self.var_names)
        other.rows = list(self.rows)
        other.obj_constant = self.obj_constant
        return other

    def matrix(self) -> sp.csr_matrix:
        key = (self.n_rows, self.n_vars)
        if self._mat_cache is not None and self._mat_cache[:2] == key:
            return self._mat_cache[2]
        mat = self._build_matrix()
        self._mat_cache = (*key, mat)
        return mat

    def _build_matrix(self) -> sp.csr_matrix:
        data, ri, ci = [], [], []
        for r, row in enumerate(self.rows):
            data.append(row.coef)
            ci.append(row.idx)
            ri.append(np.full(row.idx.size, r))
        if not self.rows:
            return sp.csr_matrix((0, self.n_vars))
        return sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
            shape=(self.n_rows, self.n_vars),
        )

    def rhs(self) -> np.ndarray:
        return np.array([row.rhs for row in self.rows])

    def senses(self) -> np.ndarray:
        return np.array([row.sense for row in self.rows])

    def max_violation(self, x: np.ndarray) -> float:
        """Largest primal infeasibility of ``x`` over rows and bounds."""
        lb, ub = self.bounds()
        viol = [0.0, float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0))]
        if self.rows:
            act = self.matrix() @ x
            rhs, sense = self.rhs(), self.senses()
            le = np.where(sense == "<=", act - rhs, 0.0)
            ge = np.where(sense == ">=", rhs - act, 0.0)
            eq = np.where(sense == "==", np.abs(act - rhs), 0.0)
            viol.append(float(np.max(np.concatenate([le, ge, eq]))))
        return max(viol)


@dataclass
class SolveResult:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    duals: Optional[np.ndarray] = None
    mip_gap: float = math.nan
    dual_objective: float = math.nan
    reduced_costs: Optional[np.ndarray] = None
    message: str = ""
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def has_solution(self) -> bool:
        return self.x is not None

    @property
    def duality_gap(self) -> float:
        return abs(self.objective - self.dual_objective)

    def value(self, idx) -> np.ndarray:
        if self.x is None:
            raise SolverError(f"no primal solution (status {self.status})")
        return self.x[np.asarray(idx)]

    def dual(self, rows) -> np.ndarray:
        if self.duals is None:
            raise SolverError("dual values are only available for LP solves")
        return self.duals[np.asarray(rows)]


# ---------------------------------------------------------------------------
# LP
# ---------------------------------------------------------------------------
def _split_rows(model: ModelHandle):
    A = model.matrix()
    rhs, sense = model.rhs(), model.senses()
    ub_mask = sense != "=="
    eq_mask = ~ub_mask
    # ">=" rows are negated into "<=" form
    sign = np.where(sense == ">=", -1.0, 1.0)
    A_ub = sp.diags(sign[ub_mask]) @ A[ub_mask] if ub_mask.any() else None
    b_ub = (sign * rhs)[ub_mask] if ub_mask.any() else None
    A_eq = A[eq_mask] if eq_mask.any() else None
    b_eq = rhs[eq_mask] if eq_mask.any() else None
    return A_ub, b_ub, A_eq, b_eq, ub_mask, eq_mask, sign


def solve_lp(model: ModelHandle, *, feas_tol: float = FEAS_TOL,
             dual_tol: float = DUAL_TOL, check: bool = True,
             bounds: tuple[np.ndarray, np.ndarray] | None = None,
             relax: bool = False) -> SolveResult:
    """Solve ``model`` as an LP; integer variables must already be fixed.

    Duals are reported as d(objective)/d(rhs) for every row, so the dual of a
    load-balance equality is the nodal price directly. ``bounds`` overrides
    the variable bounds and ``relax`` drops integrality (used by the
    branch-and-bound backend).
    """
    lb, ub = model.bounds() if bounds is None else bounds
    free_int = model.integrality & (lb != ub)
    if free_int.any() and not relax:
        raise SolverError(
            f"solve_lp called with {int(free_int.sum())} unfixed integer variables"
        )
    c = model.objective
    if model.n_vars == 0:
        return SolveResult(OPTIMAL, np.zeros(0), model.obj_constant,
                           np.zeros(model.n_rows), dual_objective=model.obj_constant)
    A_ub, b_ub, A_eq, b_eq, ub_mask, eq_mask, sign = _split_rows(model)
    bnds = np.column_stack([np.where(np.isinf(lb), None, lb), np.where(np.isinf(ub), None, ub)])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bnds, method="highs")
    if res.status == 2:
        return SolveResult(INFEASIBLE, message=res.message)
    if res.status == 3:
        return SolveResult(UNBOUNDED, message=res.message)
    if res.status != 0:
        return SolveResult(ERROR, message=res.message)

    duals = np.zeros(model.n_rows)
    if ub_mask.any():
        duals[ub_mask] = res.ineqlin.marginals * sign[ub_mask]
    if eq_mask.any():
        duals[eq_mask] = res.eqlin.marginals
    lo_m = np.asarray(res.lower.marginals)
    up_m = np.asarray(res.upper.marginals)
    dual_obj = float(model.rhs() @ duals) if model.n_rows else 0.0
    dual_obj += float(np.where(np.isfinite(lb), lb, 0.0) @ lo_m)
    dual_obj += float(np.where(np.isfinite(ub), ub, 0.0) @ up_m)
    dual_obj += model.obj_constant
    out = SolveResult(OPTIMAL, np.asarray(res.x), float(res.fun) + model.obj_constant,
                      duals, dual_objective=dual_obj, reduced_costs=lo_m + up_m)
    if check:
        viol = model.max_violation(out.x) if bounds is None else 0.0
        if viol > feas_tol * (1.0 + float(np.max(np.abs(out.x), initial=0.0))):
            logger.warning("%s: primal residual %.3g exceeds tolerance", model.name, viol)
        if out.duality_gap > dual_tol * (1.0 + abs(out.objective)):
            logger.warning("%s: duality gap %.3g exceeds tolerance", model.name, out.duality_gap)
    return out


# ---------------------------------------------------------------------------
# MILP
# ---------------------------------------------------------------------------
LazyCallback = Callable[[np.ndarray], Sequence[Row]]


class Backend:
    name = "abstract"
    supports_lazy = False

    def solve_mip(self, model, gap, time_limit, lazy_cb=None, warm_start=None) -> SolveResult:
        raise NotImplementedError


class HighsBackend(Backend):
    name = "highs"
    supports_lazy = False

    def solve_mip(self, model, gap, time_limit, lazy_cb=None, warm_start=None):
        if lazy_cb is not None:
            raise SolverError("the highs backend does not support lazy callbacks")
        if warm_start is not None:
            logger.info("highs backend ignores warm starts")
        lb, ub = model.bounds()
        cons = []
        if model.n_rows:
            A = model.matrix()
            rhs, sense = model.rhs(), model.senses()
            lo = np.where(sense == "<=", -np.inf, rhs)
            hi = np.where(sense == ">=", np.inf, rhs)
            cons.append(LinearConstraint(A, lo, hi))
        opts = {"mip_rel_gap": gap, "disp": False}
        if time_limit is not None and math.isfinite(time_limit):
            opts["time_limit"] = float(time_limit)
        res = milp(model.objective, constraints=cons, integrality=model.integrality.astype(int),
                   bounds=Bounds(lb, ub), options=opts)
        gap_val = float(getattr(res, "mip_gap", 0.0) or 0.0)
        if res.status == 0:
            return SolveResult(OPTIMAL, np.asarray(res.x), float(res.fun) + model.obj_constant,
                               mip_gap=gap_val, message=res.message)
        if res.status == 2:
            return SolveResult(INFEASIBLE, message=res.message)
        if res.status == 3:
            return SolveResult(UNBOUNDED, message=res.message)
        if res.status == 1 and res.x is not None:
            return SolveResult(TIME_LIMIT, np.asarray(res.x), float(res.fun) + model.obj_constant,
                               mip_gap=gap_val, message=res.message)
        if res.status == 1:
            return SolveResult(TIME_LIMIT, message=res.message)
        return SolveResult(ERROR, message=res.message)


class BranchAndBoundBackend(Backend):
    """Best-bound branch-and-bound with lazy constraints at integral nodes."""

    name = "bnb"
    supports_lazy = True

    def __init__(self, node_limit: int = 100_000):
        self.node_limit = node_limit

    def solve_mip(self, model, gap, time_limit, lazy_cb=None, warm_start=None):
        start = time.monotonic()
        work = model.copy()
        integ = work.integrality
        lb0, ub0 = work.bounds()
        incumbent, inc_obj = None, math.inf
        stats = {"nodes": 0, "lazy_rounds": 0, "lazy_rows": 0}

        def _check_lazy(x) -> bool:
            if lazy_cb is None:
                return True
            cuts = list(lazy_cb(x))
            if not cuts:
                return True
            stats["lazy_rounds"] += 1
            for row in cuts:
                work.add_row(row.idx, row.coef, row.sense, row.rhs, row.name)
                stats["lazy_rows"] += 1
            return False

        if warm_start is not None:
            x0 = np.asarray(warm_start, dtype=float)
            if work.max_violation(x0) <= FEAS_TOL and _check_lazy(x0):
                incumbent, inc_obj = x0, float(work.objective @ x0) + work.obj_constant

        counter = itertools.count()
        heap = [(-math.inf, next(counter), lb0, ub0)]
        timed_out = False
        while heap:
            bound, _, lb, ub = heapq.heappop(heap)
            if self._gap_closed(inc_obj, bound, gap):
                heap.clear()
                heapq.heappush(heap, (bound, next(counter), lb, ub))
                break
            if time_limit is not None and time.monotonic() - start > time_limit:
                heapq.heappush(heap, (bound, next(counter), lb, ub))
                timed_out = True
                break
            if stats["nodes"] >= self.node_limit:
                heapq.heappush(heap, (bound, next(counter), lb, ub))
                timed_out = True
                break
            stats["nodes"] += 1
            res = solve_lp(work, check=False, bounds=(lb, ub), relax=True)
            if res.status == UNBOUNDED:
                return SolveResult(UNBOUNDED, message="LP relaxation unbounded", stats=stats)
            if res.status != OPTIMAL or res.objective >= inc_obj - 1e-9 * (1 + abs(inc_obj)):
                continue
            x = res.x
            frac = np.abs(x - np.round(x))
            frac[~integ] = 0.0
            j = int(np.argmax(frac))
            if frac[j] <= INT_TOL:
                x = np.where(integ, np.round(x), x)
                if _check_lazy(x):
                    incumbent, inc_obj = x, res.objective
                else:
                    heapq.heappush(heap, (res.objective, next(counter), lb, ub))
                continue
            # branch on the most fractional variable
            down_ub = ub.copy()
            down_ub[j] = math.floor(x[j])
            up_lb = lb.copy()
            up_lb[j] = math.ceil(x[j])
            heapq.heappush(heap, (res.objective, next(counter), lb, down_ub))
            heapq.heappush(heap, (res.objective, next(counter), up_lb, ub))

        best_bound = heap[0][0] if heap else inc_obj
        if incumbent is None:
            status = TIME_LIMIT if timed_out else INFEASIBLE
            return SolveResult(status, stats=stats)
        mip_gap = self._rel_gap(inc_obj, best_bound)
        status = TIME_LIMIT if timed_out else OPTIMAL
        stats["added_rows"] = work.rows[model.n_rows:]
        return SolveResult(status, incumbent, inc_obj, mip_gap=mip_gap, stats=stats)

    @staticmethod
    def _rel_gap(inc, bound):
        if not math.isfinite(inc):
            return math.inf
        if bound >= inc:
            return 0.0
        return (inc - bound) / max(abs(inc), 1e-10)

    @classmethod
    def _gap_closed(cls, inc, bound, gap):
        return math.isfinite(inc) and cls._rel_gap(inc, bound) <= gap


_BACKENDS = {"highs": HighsBackend, "bnb": BranchAndBoundBackend}


def get_backend(name: str | Backend = "highs") -> Backend:
    if isinstance(name, Backend):
        return name
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown solver backend {name!r}; choose from {sorted(_BACKENDS)}") from None


def solve_mip(model: ModelHandle, gap: float = 1e-3, time_limit: float | None = None,
              lazy_cb: LazyCallback | None = None, backend: str | Backend = "highs",
              warm_start=None) -> SolveResult:
    """Solve a MILP.

    If ``lazy_cb`` is given, it is called with every integral candidate and
    may return rows that cut it off; the candidate is only accepted when the
    callback returns nothing. Requires a backend with ``supports_lazy``.
    """
    if not gap > 0:
        raise ValueError("gap must be positive")
    be = get_backend(backend)
    if lazy_cb is not None and not be.supports_lazy:
        raise SolverError(f"backend {be.name!r} cannot run lazy callbacks")
    if not model.has_integers:
        res = solve_lp(model)
        res.mip_gap = 0.0
        return res
    return be.solve_mip(model, gap, time_limit, lazy_cb=lazy_cb, warm_start=warm_start)
