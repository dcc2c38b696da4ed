"""Small input-validation helpers shared by estimators and the CLI."""
from __future__ import annotations

import numbers

import numpy as np

from .errors import ValidationError
from .power_system import HistoryMatrix, PowerSystem


def as_history_array(hist) -> np.ndarray:
    """Return a 2-D float array (observations x columns) from a history-like input."""
    values = hist.values if isinstance(hist, HistoryMatrix) else hist
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError("history must be 2-D (observations x columns)", "history-dimensions")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("history contains non-finite values", "history-values")
    if arr.shape[0] < 2:
        raise ValidationError("history needs at least 2 observations for a covariance",
                              "history-samples")
    return arr


def check_system(system) -> PowerSystem:
    if not isinstance(system, PowerSystem):
        raise TypeError(f"expected a PowerSystem, got {type(system).__name__}")
    return system


def check_scalar(value, name: str, *, lo=None, hi=None, lo_open=False, hi_open=False,
                 integer=False):
    """Range-check one numeric parameter; returns it unchanged."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a number'}, got {value!r}")
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ValueError(f"{name} must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        raise ValueError(f"{name} must be {'<' if hi_open else '<='} {hi}, got {value}")
    return value


def check_cut_families(families) -> tuple[str, ...]:
    if isinstance(families, str):
        families = [f.strip() for f in families.split(",") if f.strip()]
    fams = tuple(families)
    bad = [f for f in fams if f not in ("no_good", "l_shaped", "lbbd")]
    if bad or not fams:
        raise ValueError(f"cut families must be drawn from no_good, l_shaped, lbbd; got {fams}")
    return fams
