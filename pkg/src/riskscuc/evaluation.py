"""Out-of-sample evaluation of schedules and the stochastic CVaR benchmark."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from ._formulation import add_commitment_block, add_da_ramping, add_dispatch_block
from ._validation import check_scalar
from .dcopf_rt import Scenario, solve_dcopf
from .errors import RiskScucError, SolverError, ValidationError
from .power_system import PowerSystem
from .scuc_da import CommitmentSchedule, da_pricing_run
from .solver import INFEASIBLE, OPTIMAL, TIME_LIMIT, solve_lp, solve_mip
from .uncertainty import StressorVector, UncertaintySet, expand_stressor, realize

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SampleSpec:
    """How to draw stressors for out-of-sample tests.

    ``cone``: fixed-norm vectors uniform on the spherical cap of half-angle
    ``cone_angle`` around ``center``, drawn per (kind, RT period) or, with
    ``joint=True``, once over the whole stacked stressor.
    ``uniform``: every coefficient i.i.d. on ``[-R, R]``.
    """

    method: str = "uniform"
    n_samples: int = 100
    cone_angle: float = math.pi / 3
    center: StressorVector | None = None
    seed: int = 0
    joint: bool = False

    def __post_init__(self):
        if self.method not in ("cone", "uniform"):
            raise ValueError("method must be 'cone' or 'uniform'")
        check_scalar(self.n_samples, "n_samples", lo=1, integer=True)
        if not 0 <= self.cone_angle <= math.pi:
            raise ValueError("cone_angle must lie in [0, pi]")
        if self.method == "cone":
            if self.center is None:
                raise ValueError("cone sampling needs a center stressor")
            norm = math.hypot(*self.center.alpha_d.ravel(), *self.center.alpha_w.ravel())
            if norm == 0:
                raise ValueError("cone sampling needs a nonzero center")


def sample_cap(center: np.ndarray, angle: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` vectors with the norm of ``center``, uniform on the cap within ``angle`` of it.

    The cosine of the polar angle follows the cap-restricted law of a uniform
    point on the sphere, ``(1 + cos) / 2 ~ Beta((d-1)/2, (d-1)/2)``, drawn by
    inverse CDF; the azimuthal direction is a projected Gaussian.
    """
    c = np.asarray(center, dtype=float)
    d, r = c.size, float(np.linalg.norm(c))
    if r == 0:
        raise ValueError("zero-norm center")
    u = c / r
    if d == 1 or angle == 0:
        return np.tile(c, (n, 1))
    a = (d - 1) / 2.0
    lo = stats.beta.cdf((1 + math.cos(angle)) / 2, a, a)
    p = lo + rng.random(n) * (1 - lo)
    cos_t = np.clip(2 * stats.beta.ppf(p, a, a) - 1, -1.0, 1.0)
    sin_t = np.sqrt(1 - cos_t ** 2)
    g = rng.standard_normal((n, d))
    g -= np.outer(g @ u, u)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return r * (cos_t[:, None] * u[None, :] + sin_t[:, None] * g)


def sample_stressors(spec: SampleSpec, uset: UncertaintySet) -> list[StressorVector]:
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_samples, uset.n_periods
    Kd, Kw = uset.K_d, uset.K_w
    if spec.method == "uniform":
        ad = rng.uniform(-uset.R_d, uset.R_d, size=(n, Kd, T))
        aw = rng.uniform(-uset.R_w, uset.R_w, size=(n, Kw, T))
        return [StressorVector(ad[s], aw[s]) for s in range(n)]

    c = spec.center
    if c.alpha_d.shape != (Kd, T) or c.alpha_w.shape != (Kw, T):
        raise ValidationError("cone center shape does not match the uncertainty set", "dimensions")
    if spec.joint:
        flat = np.concatenate([c.alpha_d.ravel(), c.alpha_w.ravel()])
        draws = sample_cap(flat, spec.cone_angle, n, rng)
        return [StressorVector(x[:Kd * T].reshape(Kd, T), x[Kd * T:].reshape(Kw, T)) for x in draws]
    ad = np.zeros((n, Kd, T))
    aw = np.zeros((n, Kw, T))
    for out, src in ((ad, c.alpha_d), (aw, c.alpha_w)):
        for t in range(T):
            block = src[:, t]
            if block.size and np.any(block != 0):
                out[:, :, t] = sample_cap(block, spec.cone_angle, n, rng)
            # a zero block has no direction to perturb and stays at zero
    return [StressorVector(ad[s], aw[s]) for s in range(n)]


def sample_scenarios(spec: SampleSpec, uset: UncertaintySet) -> list[Scenario]:
    """Sampled stressors realized with truncation at zero (no bound check)."""
    return [realize(uset, a, clip=True, check_bounds=False) for a in sample_stressors(spec, uset)]


# ---------------------------------------------------------------------------
# paired evaluation
# ---------------------------------------------------------------------------
def _fsum_mean(x) -> float:
    x = list(np.ravel(x))
    return math.fsum(x) / len(x) if x else math.nan


def _std(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    m = _fsum_mean(x)
    return math.sqrt(math.fsum((x - m) ** 2) / (x.size - 1))


@dataclass
class ScheduleStats:
    name: str
    da_cost: float
    mean_cost: float           # DA cost + RT consumer exposure, averaged over samples
    std_cost: float
    mean_exposure: float
    mean_surplus: float
    mean_rt_cost: float
    da_lmp: np.ndarray         # per bus, mean over DA hours
    rt_lmp: np.ndarray         # per bus, mean over samples and RT periods
    costs: np.ndarray          # per used sample
    exposures: np.ndarray
    rt_lmp_samples: np.ndarray  # (samples, buses), mean over RT periods


@dataclass
class PairwiseStats:
    subject: str
    comparator: str
    save: float
    cost_red: float
    exposure_diff: float
    da_cost_diff: float


@dataclass
class EvalReport:
    schedules: list[ScheduleStats]
    pairwise: list[PairwiseStats]
    n_samples: int
    n_used: int
    failed_samples: list[int] = field(default_factory=list)
    bus_ids: tuple = ()

    def by_name(self, name: str) -> ScheduleStats:
        return next(s for s in self.schedules if s.name == name)

    def write_csv(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "summary.csv", out / "pairwise.csv", out / "lmp_distribution.csv"]
        with paths[0].open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["schedule", "da_cost", "mean_total_cost", "std_total_cost", "mean_exposure",
                         "mean_producer_surplus", "mean_rt_cost", "samples_used"])
            for s in self.schedules:
                wr.writerow([s.name, repr(s.da_cost), repr(s.mean_cost), repr(s.std_cost),
                             repr(s.mean_exposure), repr(s.mean_surplus), repr(s.mean_rt_cost),
                             self.n_used])
        with paths[1].open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["schedule", "comparator", "save", "comparator_cost", "cost_red_pct",
                         "da_cost_diff", "consumer_exposure_diff", "comparator_std", "schedule_std"])
            for p in self.pairwise:
                subj, comp = self.by_name(p.subject), self.by_name(p.comparator)
                wr.writerow([p.subject, p.comparator, repr(p.save), repr(comp.mean_cost),
                             repr(100 * p.cost_red), repr(p.da_cost_diff), repr(p.exposure_diff),
                             repr(comp.std_cost), repr(subj.std_cost)])
        with paths[2].open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["schedule", "market", "sample", "bus", "lmp"])
            for s in self.schedules:
                for i, b in enumerate(self.bus_ids):
                    wr.writerow([s.name, "DA", "", b, repr(float(s.da_lmp[i]))])
                for k, row in enumerate(s.rt_lmp_samples):
                    for i, b in enumerate(self.bus_ids):
                        wr.writerow([s.name, "RT", k, b, repr(float(row[i]))])
        return paths

    def plot_boxplots(self, path) -> Path:
        """Static SVG box plots of per-bus RT LMPs for every schedule."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, len(self.schedules), figsize=(4 * len(self.schedules), 3.5),
                                 squeeze=False, sharey=True)
        for ax, s in zip(axes[0], self.schedules):
            ax.boxplot(s.rt_lmp_samples, labels=[str(b) for b in self.bus_ids])
            ax.set_title(s.name)
            ax.set_xlabel("bus")
        axes[0][0].set_ylabel("RT LMP ($/MWh)")
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)
        return Path(path)


def _as_named(schedules) -> list[tuple[str, CommitmentSchedule]]:
    if isinstance(schedules, Mapping):
        return list(schedules.items())
    named = []
    for k, s in enumerate(schedules):
        named.append(s if isinstance(s, tuple) else (f"schedule_{k}", s))
    return named


def evaluate_schedules(sys: PowerSystem, schedules, uset: UncertaintySet | None, spec: SampleSpec | None,
                       *, scenarios: Sequence[Scenario] | None = None, rt_n_tp: int | None = None,
                       workers: int = 1) -> EvalReport:
    """Paired Monte Carlo comparison of commitments.

    Every schedule sees the same scenarios. The first schedule is the
    comparator for the pairwise columns. ``rt_n_tp`` re-evaluates at a finer
    RT resolution, holding hourly baselines constant within each hour.
    Samples whose DCOPF fails for any schedule are dropped for all of them.
    """
    named = _as_named(schedules)
    if not named:
        raise ValueError("no schedules to evaluate")
    sys_eval = sys.with_rt_resolution(rt_n_tp) if rt_n_tp else sys
    if scenarios is None:
        if uset is None or spec is None:
            raise ValueError("pass scenarios, or an uncertainty set and a sample spec")
        u = uset.refine(sys_eval) if rt_n_tp else uset
        if spec.center is not None and spec.center.alpha_d.shape[1] != u.n_periods:
            spec = replace(spec, center=expand_stressor(spec.center, uset, u))
        scenarios = sample_scenarios(spec, u)
    scenarios = list(scenarios)
    S = len(scenarios)

    def _one(args):
        k, sched = args
        try:
            return solve_dcopf(sys_eval, sched, scenarios[k])
        except RiskScucError as exc:
            logger.warning("sample %d failed: %s", k, exc)
            return None

    results = {}
    for name, sched in named:
        jobs = [(k, sched) for k in range(S)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results[name] = list(pool.map(_one, jobs))
        else:
            results[name] = [_one(j) for j in jobs]
    failed = sorted({k for sols in results.values() for k, s in enumerate(sols) if s is None})
    used = [k for k in range(S) if k not in failed]
    if not used:
        raise SolverError("every evaluation sample failed", "error")

    stats_list = []
    for name, sched in named:
        pricing = da_pricing_run(sys, sched)
        sols = [results[name][k] for k in used]
        exp = np.array([s.exposure for s in sols])
        cost = pricing.objective + exp
        stats_list.append(ScheduleStats(
            name=name, da_cost=pricing.objective, mean_cost=_fsum_mean(cost), std_cost=_std(cost),
            mean_exposure=_fsum_mean(exp), mean_surplus=_fsum_mean([s.producer_surplus for s in sols]),
            mean_rt_cost=_fsum_mean([s.objective for s in sols]),
            da_lmp=pricing.lmp.mean(axis=1), rt_lmp=np.mean([s.lmp.mean(axis=1) for s in sols], axis=0),
            costs=cost, exposures=exp, rt_lmp_samples=np.array([s.lmp.mean(axis=1) for s in sols]),
        ))
    comp = stats_list[0]
    pairwise = []
    for s in stats_list[1:]:
        save = comp.mean_cost - s.mean_cost
        pairwise.append(PairwiseStats(s.name, comp.name, save,
                                      save / comp.mean_cost if comp.mean_cost else math.nan,
                                      s.mean_exposure - comp.mean_exposure, s.da_cost - comp.da_cost))
    return EvalReport(stats_list, pairwise, S, len(used), failed, tuple(b.id for b in sys.buses))


# ---------------------------------------------------------------------------
# stochastic SCUC with CVaR
# ---------------------------------------------------------------------------
@dataclass
class StochasticSolution:
    schedule: CommitmentSchedule
    scenario_costs: np.ndarray
    z: float
    eta: np.ndarray
    objective: float
    rho_sto: float
    beta: float
    mip_gap: float
    status: str

    @property
    def cvar(self) -> float:
        return self.z + _fsum_mean(self.eta) / (1 - self.beta)


def _ru_minimizer(c: np.ndarray, beta: float) -> float:
    # the piecewise-linear objective attains its minimum at one of the costs
    vals = [z + _fsum_mean(np.maximum(c - z, 0.0)) / (1 - beta) for z in c]
    return float(c[int(np.argmin(vals))])


def empirical_cvar(costs, beta: float) -> float:
    """CVaR of equally likely costs: minimum over z of z + mean((c - z)^+) / (1 - beta)."""
    c = np.asarray(costs, dtype=float)
    z = _ru_minimizer(c, beta)
    return z + _fsum_mean(np.maximum(c - z, 0.0)) / (1 - beta)


def _solution(sched, c_val, z_val, eta_val, obj, rho_sto, beta, gap, status) -> StochasticSolution:
    if rho_sto == 0:
        # z and eta carry no cost; report the tail quantities of the costs instead
        z_val = _ru_minimizer(c_val, beta)
        eta_val = np.maximum(c_val - z_val, 0.0)
    return StochasticSolution(sched, c_val, z_val, eta_val, obj, rho_sto, beta, gap, status)


def scenario_hourly(sys: PowerSystem, scen: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Hourly load and wind per DA hour: RT hours take the mean of their periods."""
    load, wind = np.array(sys.load_da), np.array(sys.wind_da)
    for j, h in enumerate(sys.time.rt_hours):
        ks = list(sys.time.periods_of_hour(h))
        t = sys.time.hour_index(h)
        load[:, t] = scen.d_rt[:, ks].mean(axis=1)
        if wind.size:
            wind[:, t] = scen.p_cap_rt[:, ks].mean(axis=1)
    return load, wind


def _build_stochastic(sys: PowerSystem, scenarios, rho_sto: float, beta: float):
    from .solver import ModelHandle

    S = len(scenarios)
    m = ModelHandle("stochastic_scuc")
    y, v, w = add_commitment_block(m, sys)
    start, down = sys.thermal_attr("startup_cost"), sys.thermal_attr("shutdown_cost")
    m.set_objective(v, 0.0)
    m.set_objective(w, 0.0)
    c = m.add_vars("c", (S,), lb=-math.inf, obj=1.0 / S)
    z = m.add_var("z", lb=-math.inf, obj=rho_sto)
    eta = m.add_vars("eta", (S,), lb=0.0, obj=rho_sto / ((1 - beta) * S))
    for s, scen in enumerate(scenarios):
        load, wind = scenario_hourly(sys, scen)
        d = add_dispatch_block(m, sys, load, wind, sys.voll_rt, y_var=y, tag=f"_s{s}")
        m.set_objective(d.h, 0.0)
        m.set_objective(d.unmet, 0.0)
        add_da_ramping(m, sys, d.p, y, v, w)
        idx = np.concatenate([[c[s]], d.h.ravel(), v.ravel(), w.ravel(), d.unmet.ravel()])
        coef = np.concatenate([[1.0], -np.ones(d.h.size), -np.repeat(start, v.shape[1]),
                               -np.repeat(down, w.shape[1]), -sys.voll_rt * np.ones(d.unmet.size)])
        m.add_row(idx, coef, "==", 0.0, f"scenario_cost[{s}]")
        m.add_row([eta[s], c[s], z], [1.0, -1.0, 1.0], ">=", 0.0, f"cvar[{s}]")
    return m, y, v, w, c, z, eta


def _check_sto_args(scenarios, rho_sto, beta):
    if not scenarios:
        raise ValueError("need at least one scenario")
    check_scalar(rho_sto, "rho_sto", lo=0)
    check_scalar(beta, "beta", lo=0, hi=1, lo_open=True, hi_open=True)


def _fixed_stochastic(sys, scenarios, schedule, rho_sto, beta):
    m, y, v, w, c, z, eta = _build_stochastic(sys, scenarios, rho_sto, beta)
    m.fix(y, schedule.y)
    m.fix(v, schedule.v)
    m.fix(w, schedule.w)
    res = solve_lp(m)
    if res.status != OPTIMAL:
        raise SolverError(f"stochastic evaluation returned {res.status}", res.status)
    sol = _solution(schedule, res.value(c), float(res.x[z]), res.value(eta), res.objective,
                    rho_sto, beta, 0.0, res.status)
    return sol, res.x


def stochastic_objective(sys: PowerSystem, scenarios, schedule: CommitmentSchedule, rho_sto: float = 0.0,
                         beta: float = 0.9) -> StochasticSolution:
    """The benchmark objective of a fixed commitment (an LP)."""
    _check_sto_args(scenarios, rho_sto, beta)
    return _fixed_stochastic(sys, scenarios, schedule, rho_sto, beta)[0]


def solve_stochastic_scuc(sys: PowerSystem, scenarios: Sequence[Scenario], rho_sto: float = 0.0,
                          beta: float = 0.9, gap: float = 1e-3, time_limit: float | None = None,
                          warm_start: CommitmentSchedule | None = None,
                          backend: str = "highs") -> StochasticSolution:
    """Extensive-form two-stage SCUC: shared commitment, one dispatch per scenario.

    Scenario costs use the RT value of lost load. ``warm_start`` seeds the
    search with a known commitment where the backend can use one.
    """
    _check_sto_args(scenarios, rho_sto, beta)
    m, y, v, w, c, z, eta = _build_stochastic(sys, scenarios, rho_sto, beta)
    x0 = None
    if warm_start is not None:
        _, x0 = _fixed_stochastic(sys, scenarios, warm_start, rho_sto, beta)
    res = solve_mip(m, gap=gap, time_limit=time_limit, backend=backend, warm_start=x0)
    if res.status == INFEASIBLE or not res.has_solution:
        raise SolverError(f"stochastic SCUC returned {res.status}", res.status)
    if res.status == TIME_LIMIT:
        logger.warning("stochastic SCUC stopped at the time limit, gap %.3g", res.mip_gap)
    sched = CommitmentSchedule(np.rint(res.value(y)), np.rint(res.value(v)), np.rint(res.value(w)))
    return _solution(sched, res.value(c), float(res.x[z]), res.value(eta), res.objective, rho_sto, beta,
                     res.mip_gap or 0.0, res.status)
