"""Constraint blocks shared by the DA, RT and stochastic models."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .power_system import PowerSystem
from .solver import ModelHandle


@dataclass
class DispatchIndex:
    """Variable and row indices of one network-dispatch block."""

    p: np.ndarray        # thermal output (G, P)
    h: np.ndarray        # thermal production cost (G, P)
    pw: np.ndarray       # wind output (W, P)
    curtail: np.ndarray  # wind curtailment (W, P)
    f: np.ndarray        # line flow (L, P)
    theta: np.ndarray    # bus angle (N, P)
    unmet: np.ndarray    # unserved load (N, P)
    balance: np.ndarray  # load-balance rows (N, P)


def add_dispatch_block(model: ModelHandle, sys: PowerSystem, load: np.ndarray,
                       wind_cap: np.ndarray, voll: float, *, y_var=None, y_fixed=None,
                       tag: str = "") -> DispatchIndex:
    """Add cost epigraph, load balance, DC flow, production and wind rows.

    Commitment enters either as binary variables ``y_var`` (G, P) or as fixed
    values ``y_fixed`` (G, P); in the fixed case production limits become
    variable bounds and intercept costs move to the right-hand side.
    """
    if (y_var is None) == (y_fixed is None):
        raise ValueError("pass exactly one of y_var / y_fixed")
    N, P = load.shape
    G, W, L = sys.n_thermal, sys.n_wind, len(sys.lines)
    pmin, pmax = sys.thermal_attr("p_min"), sys.thermal_attr("p_max")

    if y_fixed is not None:
        y_fixed = np.asarray(y_fixed, dtype=float).reshape(G, P)
        p = model.add_vars(f"p{tag}", (G, P), lb=pmin[:, None] * y_fixed, ub=pmax[:, None] * y_fixed)
    else:
        p = model.add_vars(f"p{tag}", (G, P), lb=0.0)
    h = model.add_vars(f"h{tag}", (G, P), lb=-math.inf, obj=1.0)
    pw = model.add_vars(f"pw{tag}", (W, P), lb=0.0)
    curtail = model.add_vars(f"curtail{tag}", (W, P), lb=0.0)
    f = model.add_vars(f"f{tag}", (L, P), lb=-math.inf)
    theta = model.add_vars(f"theta{tag}", (N, P), lb=-math.inf)
    unmet = model.add_vars(f"unmet{tag}", (N, P), lb=0.0, obj=voll)
    model.fix(theta[sys.reference_bus], 0.0)

    for g, gen in enumerate(sys.thermal_generators):
        for t in range(P):
            for slope, icpt in gen.cost_segments:
                if y_var is not None:
                    model.add_row([h[g, t], p[g, t], y_var[g, t]], [1.0, -slope, -icpt], ">=", 0.0,
                                  f"cost[{gen.id},{t}]")
                else:
                    model.add_row([h[g, t], p[g, t]], [1.0, -slope], ">=", icpt * y_fixed[g, t],
                                  f"cost[{gen.id},{t}]")
            if y_var is not None:
                model.add_row([p[g, t], y_var[g, t]], [1.0, -pmax[g]], "<=", 0.0, f"pmax[{gen.id},{t}]")
                model.add_row([p[g, t], y_var[g, t]], [1.0, -pmin[g]], ">=", 0.0, f"pmin[{gen.id},{t}]")

    for k, wgen in enumerate(sys.wind_generators):
        for t in range(P):
            model.add_row([pw[k, t], curtail[k, t]], [1.0, 1.0], "==", wind_cap[k, t],
                          f"wind[{wgen.id},{t}]")

    ends = sys.line_ends
    for l, line in enumerate(sys.lines):
        i, j = ends[l]
        for t in range(P):
            model.add_row([f[l, t], theta[i, t], theta[j, t]],
                          [1.0, -line.susceptance, line.susceptance], "==", 0.0, f"flow[{line.id},{t}]")
            model.add_row([f[l, t]], [1.0], "<=", line.capacity, f"fmax[{line.id},{t}]")
            model.add_row([f[l, t]], [1.0], ">=", -line.capacity, f"fmin[{line.id},{t}]")

    balance = np.empty((N, P), dtype=np.int64)
    gbus, wbus = sys.thermal_bus, sys.wind_bus
    for i in range(N):
        g_here = np.flatnonzero(gbus == i)
        w_here = np.flatnonzero(wbus == i)
        l_in = np.flatnonzero(ends[:, 1] == i) if L else np.array([], dtype=int)
        l_out = np.flatnonzero(ends[:, 0] == i) if L else np.array([], dtype=int)
        for t in range(P):
            idx = np.concatenate([p[g_here, t], pw[w_here, t], [unmet[i, t]], f[l_in, t], f[l_out, t]])
            coef = np.concatenate([np.ones(len(g_here) + len(w_here) + 1 + len(l_in)),
                                   -np.ones(len(l_out))])
            balance[i, t] = model.add_row(idx, coef, "==", load[i, t], f"balance[{i},{t}]")
    return DispatchIndex(p, h, pw, curtail, f, theta, unmet, balance)


def add_commitment_block(model: ModelHandle, sys: PowerSystem, tag: str = ""):
    """Binary on/startup/shutdown variables with cold-start linking."""
    G, T = sys.n_thermal, sys.time.n_da
    y = model.add_vars(f"y{tag}", (G, T), binary=True)
    v = model.add_vars(f"v{tag}", (G, T), binary=True, obj=sys.thermal_attr("startup_cost")[:, None])
    w = model.add_vars(f"w{tag}", (G, T), binary=True, obj=sys.thermal_attr("shutdown_cost")[:, None])
    for g in range(G):
        for t in range(T):
            idx = [v[g, t], w[g, t], y[g, t]] + ([y[g, t - 1]] if t > 0 else [])
            coef = [1.0, -1.0, -1.0] + ([1.0] if t > 0 else [])
            model.add_row(idx, coef, "==", 0.0, f"link[{g},{t}]")
    return y, v, w


def add_da_ramping(model: ModelHandle, sys: PowerSystem, p, y, v, w) -> None:
    """Hourly ramp limits for t > 1, relaxed by P_min on startup/shutdown."""
    M, pmin = sys.thermal_attr("ramp_hourly"), sys.thermal_attr("p_min")
    for g in range(sys.n_thermal):
        if math.isinf(M[g]):
            continue
        for t in range(1, p.shape[1]):
            model.add_row([p[g, t], p[g, t - 1], y[g, t - 1], v[g, t]], [1.0, -1.0, -M[g], -pmin[g]],
                          "<=", 0.0, f"rampup[{g},{t}]")
            model.add_row([p[g, t - 1], p[g, t], y[g, t], w[g, t]], [1.0, -1.0, -M[g], -pmin[g]],
                          "<=", 0.0, f"rampdn[{g},{t}]")
