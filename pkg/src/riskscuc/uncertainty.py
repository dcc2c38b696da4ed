"""PCA-based uncertainty set: leading covariance modes, stressors, grids."""
from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_history_array
from .dcopf_rt import Scenario
from .errors import ValidationError
from .power_system import PowerSystem

logger = logging.getLogger(__name__)

BOUND_TOL = 1e-9
NEG_TOL = 1e-9


@dataclass(frozen=True)
class StressorVector:
    """Stressor coefficients per (mode, RT period) for load and wind."""

    alpha_d: np.ndarray
    alpha_w: np.ndarray
    label: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("alpha_d", "alpha_w"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise ValidationError(f"{name} must be (modes, periods)", "stressor")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __eq__(self, other):
        if not isinstance(other, StressorVector):
            return NotImplemented
        return (np.array_equal(self.alpha_d, other.alpha_d)
                and np.array_equal(self.alpha_w, other.alpha_w))

    __hash__ = None

    def __add__(self, other: "StressorVector") -> "StressorVector":
        return StressorVector(self.alpha_d + other.alpha_d, self.alpha_w + other.alpha_w)


@dataclass(frozen=True)
class UncertaintySet:
    """Leading modes per RT period plus stressor bounds and forecast baselines."""

    modes_load: np.ndarray      # (R, K_d, N), orthonormal rows
    modes_wind: np.ndarray      # (R, K_w, W)
    eigvals_load: np.ndarray    # (R, N) full spectrum, descending
    eigvals_wind: np.ndarray    # (R, W)
    R_d: float
    R_w: float
    sigma_d: float
    sigma_w: float
    baseline_load: np.ndarray   # (N, R)
    baseline_wind: np.ndarray   # (W, R)
    period_hours: tuple = ()

    @property
    def K(self) -> int:
        return self.modes_load.shape[1]

    @property
    def K_d(self) -> int:
        return self.modes_load.shape[1]

    @property
    def K_w(self) -> int:
        return self.modes_wind.shape[1]

    @property
    def n_periods(self) -> int:
        return self.baseline_load.shape[1]

    def zero_stressor(self) -> StressorVector:
        return StressorVector(np.zeros((self.K_d, self.n_periods)), np.zeros((self.K_w, self.n_periods)))

    def realize(self, alpha: StressorVector, clip: bool = False,
                check_bounds: bool = True) -> Scenario:
        return realize(self, alpha, clip=clip, check_bounds=check_bounds)

    def refine(self, system: PowerSystem) -> "UncertaintySet":
        """Re-express on ``system``'s RT periods (same RT hours, finer n_tp).

        Each new period reuses the modes of its parent hour; baselines come
        from ``system``.
        """
        hours = system.time.rt_periods
        first = {h: self.period_hours.index(h) for h in dict.fromkeys(self.period_hours)}
        try:
            src = [first[h] for h in hours]
        except KeyError as exc:
            raise ValidationError(f"hour {exc.args[0]} not covered by the uncertainty set",
                                  "dimensions") from None
        return replace(self, modes_load=self.modes_load[src], modes_wind=self.modes_wind[src],
                       eigvals_load=self.eigvals_load[src], eigvals_wind=self.eigvals_wind[src],
                       baseline_load=system.load_rt, baseline_wind=system.wind_rt,
                       period_hours=tuple(hours))


def expand_stressor(alpha: StressorVector, src: UncertaintySet, dst: UncertaintySet) -> StressorVector:
    """Carry a stressor onto ``dst``'s periods; each new period copies its hour's first period."""
    first = {h: src.period_hours.index(h) for h in dict.fromkeys(src.period_hours)}
    cols = [first[h] for h in dst.period_hours]
    return StressorVector(alpha.alpha_d[:, cols], alpha.alpha_w[:, cols], label=alpha.label)


def _signed(vec: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude component is positive (ties: lowest index)."""
    if vec.size == 0:
        return vec
    mag = np.abs(vec)
    k = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
    return -vec if vec[k] < 0 else vec


def spectral_modes(history: np.ndarray, K: int):
    """Sample covariance (n-1 denominator) and its eigenpairs, descending.

    Returns ``(cov, eigvals, eigvecs)`` with eigenvectors as rows, sign
    normalized, and only the first ``K`` rows kept in the returned modes.
    """
    X = np.asarray(history, dtype=float)
    n, dim = X.shape
    if n < 2:
        raise ValidationError("need at least 2 observations", "history-samples")
    if dim == 0:
        return np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0))
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = np.array([_signed(vecs[:, j]) for j in order])
    k_eff = min(K, dim)
    scale = vals[0] if vals.size else 0.0
    nonzero = int(np.sum(vals > 1e-12 * max(scale, 1.0)))
    if k_eff > nonzero:
        logger.warning("requested %d modes but covariance has numerical rank %d", k_eff, nonzero)
    return cov, vals, vecs


def _sigma(rule, bound: float) -> float:
    if isinstance(rule, (int, float)):
        return float(rule)
    m = re.fullmatch(r"\s*([0-9.]*)\s*R\s*", str(rule))
    if not m:
        raise ValueError(f"sigma_rule must be a number or like '3R', got {rule!r}")
    return float(m.group(1) or 1.0) * bound


def _per_hour(history, hours) -> dict:
    if isinstance(history, Mapping):
        missing = [h for h in hours if h not in history]
        if missing:
            raise ValidationError(f"no history for RT hours {missing}", "history-dimensions")
        return {h: as_history_array(history[h]) for h in hours}
    arr = as_history_array(history)
    return {h: arr for h in hours}


def _drop_flat(vecs: np.ndarray, vals: np.ndarray) -> np.ndarray:
    # directions without observed variance carry no stress
    scale = max(float(vals[0]), 1.0) if vals.size else 1.0
    flat = vals[:vecs.shape[0]] <= 1e-12 * scale
    out = vecs.copy()
    out[flat] = 0.0
    return out


def build_uncertainty_set(load_hist, wind_hist, sys: PowerSystem, K: int = 3, R_d: float = 0.1,
                          R_w: float = 0.2, sigma_rule="3R") -> UncertaintySet:
    """Build the PCA uncertainty set from load and wind histories.

    Each history is a matrix (observations x buses / farms) shared by all RT
    hours, or a mapping ``{rt_hour: matrix}``. Load and wind are decomposed
    separately; every RT period uses its parent hour's modes.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if R_d < 0 or R_w < 0:
        raise ValueError("stressor bounds must be >= 0")
    rt_hours = sys.time.rt_hours
    N, W = sys.n_buses, sys.n_wind
    load_h = _per_hour(load_hist, rt_hours)
    if W == 0 and wind_hist is None:
        wind_h = {h: np.zeros((2, 0)) for h in rt_hours}
    else:
        wind_h = _per_hour(wind_hist, rt_hours)

    per_hour = {}
    for h in rt_hours:
        if load_h[h].shape[1] != N:
            raise ValidationError(f"load history has {load_h[h].shape[1]} columns, system has {N} buses",
                                  "history-dimensions")
        if wind_h[h].shape[1] != W:
            raise ValidationError(f"wind history has {wind_h[h].shape[1]} columns, system has {W} farms",
                                  "history-dimensions")
        _, vals_d, vecs_d = spectral_modes(load_h[h], K)
        _, vals_w, vecs_w = spectral_modes(wind_h[h], K)
        per_hour[h] = (_drop_flat(vecs_d[:min(K, N)], vals_d), _drop_flat(vecs_w[:min(K, W)], vals_w),
                       vals_d, vals_w)

    periods = sys.time.rt_periods
    pick = lambda j: np.stack([per_hour[h][j] for h in periods])  # noqa: E731
    return UncertaintySet(
        modes_load=pick(0), modes_wind=pick(1).reshape(len(periods), min(K, W), W),
        eigvals_load=pick(2), eigvals_wind=pick(3).reshape(len(periods), W),
        R_d=float(R_d), R_w=float(R_w), sigma_d=_sigma(sigma_rule, R_d), sigma_w=_sigma(sigma_rule, R_w),
        baseline_load=sys.load_rt, baseline_wind=sys.wind_rt, period_hours=tuple(periods),
    )


def _shift(modes: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    # modes (R, K, n), alpha (K, R) -> (n, R)
    if modes.shape[1] == 0:
        return np.zeros((modes.shape[2], modes.shape[0]))
    return np.einsum("rkn,kr->nr", modes, alpha)


def check_stressor(uset: UncertaintySet, alpha: StressorVector, tol: float = BOUND_TOL) -> None:
    """Raise if ``alpha`` leaves the box or sum bounds of the set."""
    R = uset.n_periods
    if alpha.alpha_d.shape != (uset.K_d, R) or alpha.alpha_w.shape != (uset.K_w, R):
        raise ValidationError("stressor shape does not match the uncertainty set", "dimensions")
    for a, box, tot, kind in ((alpha.alpha_d, uset.R_d, uset.sigma_d, "load"),
                              (alpha.alpha_w, uset.R_w, uset.sigma_w, "wind")):
        if a.size and np.max(np.abs(a)) > box + tol:
            raise ValidationError(f"{kind} stressor exceeds bound {box}", "stressor-box")
        if a.size and np.max(np.abs(a.sum(axis=0))) > tot + tol:
            raise ValidationError(f"{kind} stressor sum exceeds bound {tot}", "stressor-sum")


def realize(uset: UncertaintySet, alpha: StressorVector, clip: bool = False,
            check_bounds: bool = True) -> Scenario:
    """Forecast plus stressed leading modes.

    Negative entries raise unless ``clip`` truncates them at zero.
    """
    if check_bounds:
        check_stressor(uset, alpha)
    d = uset.baseline_load + _shift(uset.modes_load, alpha.alpha_d)
    w = uset.baseline_wind + _shift(uset.modes_wind, alpha.alpha_w)
    for arr, kind in ((d, "load at bus"), (w, "wind at farm")):
        small = (arr < 0) & (arr >= -NEG_TOL)
        arr[small] = 0.0
        if clip:
            np.maximum(arr, 0.0, out=arr)
        elif np.any(arr < 0):
            i, t = np.argwhere(arr < 0)[0]
            raise ValidationError(f"negative {kind} index {i}, period {t}: {arr[i, t]:.6g}",
                                  "scenario-nonnegative")
    return Scenario(d, w)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------
def sign_patterns(K: int, kind: str) -> list[tuple[int, ...]]:
    """Sign patterns enumerated by the grid search.

    With three modes, load uses ``(+,-,+)`` and ``(+,+,-)`` and wind all eight
    patterns; otherwise every pattern is enumerated (plus-first counter order).
    """
    if K == 0:
        return [()]
    if K == 3 and kind == "load":
        return [(1, -1, 1), (1, 1, -1)]
    return list(itertools.product((1, -1), repeat=K))


def adjust_last_stressor(base: np.ndarray, modes: np.ndarray, alpha: np.ndarray,
                         bound: float) -> tuple[np.ndarray, bool]:
    """Move the last stressor toward zero just enough to keep ``base + modes.T @ alpha >= 0``.

    ``modes`` is (K, n). Returns the adjusted alpha and whether the result is
    exactly feasible; when no value within the box restores nonnegativity the
    last stressor is left at the box edge and the caller truncates.
    """
    alpha = np.array(alpha, dtype=float)
    if modes.shape[0] == 0 or np.all(base + modes.T @ alpha >= -NEG_TOL):
        return alpha, True
    partial = base + modes[:-1].T @ alpha[:-1]
    q = modes[-1]
    pos, neg, zero = q > 1e-14, q < -1e-14, np.abs(q) <= 1e-14
    lo = np.max(-partial[pos] / q[pos], initial=-np.inf)
    hi = np.min(-partial[neg] / q[neg], initial=np.inf)
    feasible = lo <= hi and np.all(partial[zero] >= -NEG_TOL)
    a = alpha[-1]
    a_new = min(a, hi) if a >= 0 else max(a, lo)
    ok = feasible and lo - 1e-12 <= a_new <= hi + 1e-12 and abs(a_new) <= bound + BOUND_TOL
    alpha[-1] = float(np.clip(a_new, -bound, bound))
    return alpha, bool(ok)


def _kind_grid(uset: UncertaintySet, patterns, kind: str) -> np.ndarray:
    """Stressor matrix (K, periods) for one sign pattern per period."""
    if kind == "load":
        K, modes, base, R = uset.K_d, uset.modes_load, uset.baseline_load, uset.R_d
    else:
        K, modes, base, R = uset.K_w, uset.modes_wind, uset.baseline_wind, uset.R_w
    out = np.zeros((K, uset.n_periods))
    if K == 0:
        return out
    for t, pat in enumerate(patterns):
        alpha, ok = adjust_last_stressor(base[:, t], modes[t], R * np.asarray(pat, dtype=float), R)
        if not ok:
            logger.info("%s grid %s period %d: truncating negative entries", kind, pat, t)
        out[:, t] = alpha
    return out


def grid_points(uset: UncertaintySet, independent_periods: bool = False) -> list[StressorVector]:
    """Stressor grids for the adversary: load patterns x wind patterns.

    By default each (load, wind) pattern pair is applied to every RT period;
    with ``independent_periods`` every period picks its own pair, so the grid
    count grows exponentially with the number of periods. Labels hold the
    per-period pattern pairs.
    """
    pairs = list(itertools.product(sign_patterns(uset.K_d, "load"), sign_patterns(uset.K_w, "wind")))
    T = uset.n_periods
    if independent_periods:
        choices = itertools.product(pairs, repeat=T)
    else:
        choices = ((pair,) * T for pair in pairs)
    grids = []
    for choice in choices:
        lp = [c[0] for c in choice]
        wp = [c[1] for c in choice]
        label = choice[0] if not independent_periods else tuple(choice)
        grids.append(StressorVector(_kind_grid(uset, lp, "load"), _kind_grid(uset, wp, "wind"),
                                    label=label))
    return grids


def realize_grid(uset: UncertaintySet, alpha: StressorVector) -> Scenario:
    """Realize a grid point: bounds are relaxed on the sum and entries truncated at 0."""
    return realize(uset, alpha, clip=True, check_bounds=False)


class PCAUncertaintySet(TransformerMixin, BaseEstimator):
    """Fit leading covariance modes from history; transform stressors to scenarios.

    Parameters mirror :func:`build_uncertainty_set`. ``fit(load_history,
    wind_history)`` sets ``uncertainty_set_``, ``covariance_load_``,
    ``covariance_wind_`` and ``explained_load_`` (top-K eigenvalue share).
    """

    def __init__(self, system: PowerSystem | None = None, n_modes: int = 3, load_bound: float = 0.1,
                 wind_bound: float = 0.2, sigma_rule="3R"):
        self.system = system
        self.n_modes = n_modes
        self.load_bound = load_bound
        self.wind_bound = wind_bound
        self.sigma_rule = sigma_rule

    def fit(self, X, y=None, wind_history=None):
        if self.system is None:
            raise ValueError("PCAUncertaintySet needs a system")
        self.uncertainty_set_ = build_uncertainty_set(X, wind_history, self.system, self.n_modes,
                                                      self.load_bound, self.wind_bound, self.sigma_rule)
        if not isinstance(X, Mapping):
            self.covariance_load_ = np.atleast_2d(np.cov(as_history_array(X), rowvar=False, ddof=1))
        if wind_history is not None and not isinstance(wind_history, Mapping):
            self.covariance_wind_ = np.atleast_2d(np.cov(as_history_array(wind_history), rowvar=False,
                                                         ddof=1))
        ev = self.uncertainty_set_.eigvals_load
        total = ev.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.explained_load_ = np.where(total > 0, ev[:, :self.uncertainty_set_.K_d].sum(axis=1) / total,
                                            1.0)
        return self

    def transform(self, X):
        """Map stressor vectors to scenarios (entries must stay nonnegative)."""
        check_is_fitted(self, "uncertainty_set_")
        if isinstance(X, StressorVector):
            return realize(self.uncertainty_set_, X)
        return [realize(self.uncertainty_set_, a) for a in X]

    def grid_points(self, independent_periods: bool = False):
        check_is_fitted(self, "uncertainty_set_")
        return grid_points(self.uncertainty_set_, independent_periods)
