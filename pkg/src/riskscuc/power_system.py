"""Grid and time-structure data model, case-file ingestion and validation."""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import CaseFormatError, ValidationError

UNBOUNDED = math.inf
UNBOUNDED_TOKEN = "unbounded"

CASE_KEYS = ("buses", "lines", "thermal_generators", "wind_generators", "time",
             "voll_da", "voll_rt")


def _finite_nonneg(values: Sequence[float], what: str) -> None:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError(f"{what} must be finite and >= 0", "nonnegative-forecast")


@dataclass(frozen=True)
class Bus:
    id: Any
    forecast_load: tuple[float, ...]
    rt_forecast_load: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Line:
    from_bus: Any
    to_bus: Any
    susceptance: float
    capacity: float
    id: str = ""


@dataclass(frozen=True)
class ThermalGenerator:
    id: str
    bus: Any
    p_min: float
    p_max: float
    cost_segments: tuple[tuple[float, float], ...]
    ramp_hourly: float = UNBOUNDED
    ramp_rt: float = UNBOUNDED
    startup_cost: float = 0.0
    shutdown_cost: float = 0.0

    @property
    def max_marginal_cost(self) -> float:
        return max(s for s, _ in self.cost_segments)

    def cost(self, p, on=1.0):
        """Piecewise-linear production cost ``max_o(slope*p + intercept*on)``."""
        p = np.asarray(p, dtype=float)
        on = np.asarray(on, dtype=float)
        return np.max([s * p + c * on for s, c in self.cost_segments], axis=0)


@dataclass(frozen=True)
class WindGenerator:
    id: str
    bus: Any
    forecast_cap: tuple[float, ...]
    rt_forecast_cap: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TimeStructure:
    """DA hours, the critical RT hours, and RT periods per hour.

    RT periods are laid out hour by hour: period ``k`` belongs to
    ``rt_hours[k // n_tp]``.
    """

    da_hours: tuple[int, ...]
    rt_hours: tuple[int, ...]
    n_tp: int = 1
    flex_window: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.flex_window is None:
            object.__setattr__(self, "flex_window", tuple(self.da_hours))
        da = list(self.da_hours)
        if not da:
            raise ValidationError("da_hours is empty", "time")
        if len(set(da)) != len(da) or da != sorted(da):
            raise ValidationError("da_hours must be strictly increasing", "time")
        if not isinstance(self.n_tp, (int, np.integer)) or self.n_tp < 1:
            raise ValidationError("n_tp must be a positive integer", "time")
        rt = list(self.rt_hours)
        if len(set(rt)) != len(rt) or rt != sorted(rt):
            raise ValidationError("rt_hours must be strictly increasing", "time")
        if not set(rt) <= set(da):
            raise ValidationError("rt_hours must be a subset of da_hours", "time")
        if not set(self.flex_window) <= set(da):
            raise ValidationError("flex_window must be a subset of da_hours", "time")
        if not set(rt) <= set(self.flex_window):
            raise ValidationError("flex_window must contain every rt hour", "time")

    @property
    def n_da(self) -> int:
        return len(self.da_hours)

    @property
    def n_rt(self) -> int:
        return len(self.rt_hours) * self.n_tp

    @property
    def rt_periods(self) -> tuple[int, ...]:
        """Parent DA hour of each RT period."""
        return tuple(h for h in self.rt_hours for _ in range(self.n_tp))

    def hour_index(self, hour: int) -> int:
        return self.da_hours.index(hour)

    @property
    def rt_parent_index(self) -> np.ndarray:
        """Index into ``da_hours`` of each RT period's parent hour."""
        return np.array([self.hour_index(h) for h in self.rt_periods], dtype=int)

    @property
    def rt_hour_index(self) -> np.ndarray:
        """Index into ``da_hours`` of each RT hour."""
        return np.array([self.hour_index(h) for h in self.rt_hours], dtype=int)

    @property
    def flex_index(self) -> np.ndarray:
        return np.array([self.hour_index(h) for h in self.flex_window], dtype=int)

    def periods_of_hour(self, hour: int) -> range:
        k = self.rt_hours.index(hour)
        return range(k * self.n_tp, (k + 1) * self.n_tp)


@dataclass(frozen=True)
class PowerSystem:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    thermal_generators: tuple[ThermalGenerator, ...]
    wind_generators: tuple[WindGenerator, ...]
    time: TimeStructure
    voll_da: float = 10_000.0
    voll_rt: float = 20_000.0
    name: str = field(default="case", compare=False)

    def __post_init__(self):
        validate_system(self)

    # -- index helpers -----------------------------------------------------
    @cached_property
    def bus_index(self) -> dict:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_thermal(self) -> int:
        return len(self.thermal_generators)

    @property
    def n_wind(self) -> int:
        return len(self.wind_generators)

    @cached_property
    def reference_bus(self) -> int:
        return self.bus_index[min(self.bus_index)]

    @cached_property
    def thermal_bus(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.thermal_generators], dtype=int)

    @cached_property
    def wind_bus(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.wind_generators], dtype=int)

    @cached_property
    def line_ends(self) -> np.ndarray:
        return np.array([[self.bus_index[l.from_bus], self.bus_index[l.to_bus]] for l in self.lines],
                        dtype=int).reshape(-1, 2)

    def _ro(self, arr) -> np.ndarray:
        arr = np.array(arr, dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def load_da(self) -> np.ndarray:
        """DA forecast load, shape (buses, DA hours)."""
        return self._ro([b.forecast_load for b in self.buses]).reshape(self.n_buses, self.time.n_da)

    @cached_property
    def load_rt(self) -> np.ndarray:
        """RT baseline load, shape (buses, RT periods)."""
        parent = self.time.rt_parent_index
        rows = [b.rt_forecast_load if b.rt_forecast_load is not None
                else np.asarray(b.forecast_load)[parent] for b in self.buses]
        return self._ro(rows).reshape(self.n_buses, self.time.n_rt)

    @cached_property
    def wind_da(self) -> np.ndarray:
        return self._ro([w.forecast_cap for w in self.wind_generators]).reshape(self.n_wind, self.time.n_da)

    @cached_property
    def wind_rt(self) -> np.ndarray:
        parent = self.time.rt_parent_index
        rows = [w.rt_forecast_cap if w.rt_forecast_cap is not None
                else np.asarray(w.forecast_cap)[parent] for w in self.wind_generators]
        return self._ro(rows).reshape(self.n_wind, self.time.n_rt)

    def thermal_attr(self, name: str) -> np.ndarray:
        return np.array([getattr(g, name) for g in self.thermal_generators], dtype=float)

    # -- derived systems ---------------------------------------------------
    def with_time(self, **changes) -> "PowerSystem":
        """Copy with a modified time structure.

        Explicit RT baselines are dropped when the RT layout changes, so they
        fall back to the parent-hour DA forecast.
        """
        new_time = replace(self.time, **changes)
        keep = (new_time.rt_hours == self.time.rt_hours and new_time.n_tp == self.time.n_tp)
        buses = self.buses if keep else tuple(replace(b, rt_forecast_load=None) for b in self.buses)
        wind = self.wind_generators if keep else tuple(
            replace(w, rt_forecast_cap=None) for w in self.wind_generators)
        return replace(self, time=new_time, buses=buses, wind_generators=wind)

    def with_rt_resolution(self, n_tp: int) -> "PowerSystem":
        """Split every RT hour into ``n_tp`` periods.

        Baselines are held constant within an hour and per-period RT ramp
        limits are prorated by the period length.
        """
        old = self.time.n_tp
        if n_tp == old:
            return self

        def _expand(vals):
            if vals is None:
                return None
            arr = np.asarray(vals, dtype=float).reshape(len(self.time.rt_hours), old)
            return tuple(np.repeat(arr.mean(axis=1), n_tp).tolist())

        buses = tuple(replace(b, rt_forecast_load=_expand(b.rt_forecast_load)) for b in self.buses)
        wind = tuple(replace(w, rt_forecast_cap=_expand(w.rt_forecast_cap))
                     for w in self.wind_generators)
        gens = tuple(replace(g, ramp_rt=g.ramp_rt * old / n_tp) for g in self.thermal_generators)
        return replace(self, buses=buses, wind_generators=wind, thermal_generators=gens,
                       time=replace(self.time, n_tp=n_tp))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------
def validate_system(sys: PowerSystem) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    T, R = sys.time.n_da, sys.time.n_rt
    ids = [b.id for b in sys.buses]
    if not ids:
        raise ValidationError("system has no buses", "buses")
    if len(set(ids)) != len(ids):
        raise ValidationError("bus ids must be unique", "unique-bus-id")
    if len({type(i) for i in ids}) > 1:
        raise ValidationError("bus ids must all share one type", "unique-bus-id")
    known = set(ids)
    for b in sys.buses:
        if len(b.forecast_load) != T:
            raise ValidationError(f"bus {b.id}: forecast_load needs {T} values", "dimensions")
        _finite_nonneg(b.forecast_load, f"bus {b.id} forecast_load")
        if b.rt_forecast_load is not None:
            if len(b.rt_forecast_load) != R:
                raise ValidationError(f"bus {b.id}: rt_forecast_load needs {R} values", "dimensions")
            _finite_nonneg(b.rt_forecast_load, f"bus {b.id} rt_forecast_load")
    for k, l in enumerate(sys.lines):
        name = l.id or f"line {k}"
        if l.from_bus not in known or l.to_bus not in known:
            raise ValidationError(f"{name}: unknown bus", "line-endpoints")
        if l.from_bus == l.to_bus:
            raise ValidationError(f"{name}: from_bus equals to_bus", "line-endpoints")
        if not (l.susceptance > 0 and math.isfinite(l.susceptance)):
            raise ValidationError(f"{name}: susceptance must be > 0", "line-susceptance")
        if not l.capacity > 0:
            raise ValidationError(f"{name}: capacity must be > 0", "line-capacity")
    gids = [g.id for g in sys.thermal_generators] + [w.id for w in sys.wind_generators]
    if len(set(gids)) != len(gids):
        raise ValidationError("generator ids must be unique", "unique-generator-id")
    max_mc = 0.0
    for g in sys.thermal_generators:
        if g.bus not in known:
            raise ValidationError(f"generator {g.id}: unknown bus {g.bus!r}", "generator-bus")
        if not (0 <= g.p_min <= g.p_max) or not math.isfinite(g.p_max):
            raise ValidationError(f"generator {g.id}: need 0 <= p_min <= p_max", "generator-limits")
        if not g.ramp_hourly > 0 or not g.ramp_rt > 0:
            raise ValidationError(f"generator {g.id}: ramp limits must be > 0", "generator-ramp")
        if g.startup_cost < 0 or g.shutdown_cost < 0:
            raise ValidationError(f"generator {g.id}: startup/shutdown costs must be >= 0",
                                  "generator-costs")
        if not g.cost_segments:
            raise ValidationError(f"generator {g.id}: cost_segments is empty", "cost-curve")
        seg = np.asarray(g.cost_segments, dtype=float)
        if seg.ndim != 2 or seg.shape[1] != 2 or not np.all(np.isfinite(seg)):
            raise ValidationError(f"generator {g.id}: cost segments must be finite (slope, intercept)",
                                  "cost-curve")
        # a max of affine pieces is convex by construction; negative slopes
        # would make the marginal cost (and any LMP it sets) negative
        if np.any(seg[:, 0] < 0):
            raise ValidationError(f"generator {g.id}: segment slopes must be >= 0", "cost-curve")
        max_mc = max(max_mc, g.max_marginal_cost)
    for w in sys.wind_generators:
        if w.bus not in known:
            raise ValidationError(f"wind generator {w.id}: unknown bus {w.bus!r}", "generator-bus")
        if len(w.forecast_cap) != T:
            raise ValidationError(f"wind generator {w.id}: forecast_cap needs {T} values", "dimensions")
        _finite_nonneg(w.forecast_cap, f"wind generator {w.id} forecast_cap")
        if w.rt_forecast_cap is not None:
            if len(w.rt_forecast_cap) != R:
                raise ValidationError(f"wind generator {w.id}: rt_forecast_cap needs {R} values",
                                      "dimensions")
            _finite_nonneg(w.rt_forecast_cap, f"wind generator {w.id} rt_forecast_cap")
    if not (sys.voll_rt > sys.voll_da > max_mc):
        raise ValidationError("need voll_rt > voll_da > every generator marginal cost", "voll-order")
    _check_connected(ids, sys.lines)


def _check_connected(ids, lines) -> None:
    adj = {i: [] for i in ids}
    for l in lines:
        adj[l.from_bus].append(l.to_bus)
        adj[l.to_bus].append(l.from_bus)
    seen, todo = {ids[0]}, deque([ids[0]])
    while todo:
        for j in adj[todo.popleft()]:
            if j not in seen:
                seen.add(j)
                todo.append(j)
    if len(seen) != len(ids):
        missing = sorted(map(str, set(ids) - seen))
        raise ValidationError(f"network is not connected; unreachable buses {missing}", "connected")


# ---------------------------------------------------------------------------
# case files
# ---------------------------------------------------------------------------
def _ramp(value, where: str) -> float:
    if value is None or value == UNBOUNDED_TOKEN:
        return UNBOUNDED
    if isinstance(value, str):
        raise CaseFormatError(f"expected a number or {UNBOUNDED_TOKEN!r}, got {value!r}", where)
    return float(value)


def _ramp_out(value: float):
    return UNBOUNDED_TOKEN if math.isinf(value) else value


def _floats(value, where: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise CaseFormatError("expected a list of numbers", where)
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise CaseFormatError("expected a list of numbers", where) from None


def _req(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise CaseFormatError("expected an object", where)
    if key not in obj:
        raise CaseFormatError(f"missing field {key!r}", where)
    return obj[key]


def _num(obj, key, where, default=None) -> float:
    if key not in obj and default is not None:
        return float(default)
    value = _req(obj, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseFormatError(f"field {key!r} must be a number", where)
    return float(value)


def parse_case(data: dict, name: str = "case") -> PowerSystem:
    """Build a validated :class:`PowerSystem` from a decoded case document."""
    if not isinstance(data, dict):
        raise CaseFormatError("case document must be a JSON object")
    missing = [k for k in CASE_KEYS if k not in data]
    if missing:
        raise CaseFormatError(f"missing top-level keys {missing}")
    t = data["time"]
    time_struct = TimeStructure(
        da_hours=tuple(int(h) for h in _req(t, "da_hours", "time")),
        rt_hours=tuple(int(h) for h in _req(t, "rt_hours", "time")),
        n_tp=int(t.get("n_tp", 1)),
        flex_window=tuple(int(h) for h in t["flex_window"]) if t.get("flex_window") is not None else None,
    )
    buses = []
    for k, b in enumerate(data["buses"]):
        where = f"buses[{k}]"
        rt = b.get("rt_forecast_load") if isinstance(b, dict) else None
        buses.append(Bus(
            id=_req(b, "id", where),
            forecast_load=_floats(_req(b, "forecast_load", where), where + ".forecast_load"),
            rt_forecast_load=_floats(rt, where + ".rt_forecast_load") if rt is not None else None,
        ))
    lines = []
    for k, l in enumerate(data["lines"]):
        where = f"lines[{k}]"
        lines.append(Line(
            from_bus=_req(l, "from_bus", where), to_bus=_req(l, "to_bus", where),
            susceptance=_num(l, "susceptance", where), capacity=_num(l, "capacity", where),
            id=str(l.get("id", f"L{k + 1}")),
        ))
    thermal = []
    for k, g in enumerate(data["thermal_generators"]):
        where = f"thermal_generators[{k}]"
        segs = _req(g, "cost_segments", where)
        try:
            segs = tuple((float(s), float(c)) for s, c in segs)
        except (TypeError, ValueError):
            raise CaseFormatError("cost_segments must be [slope, intercept] pairs",
                                  where + ".cost_segments") from None
        thermal.append(ThermalGenerator(
            id=str(g.get("id", f"G{k + 1}")), bus=_req(g, "bus", where),
            p_min=_num(g, "p_min", where, 0.0), p_max=_num(g, "p_max", where),
            cost_segments=segs,
            ramp_hourly=_ramp(g.get("ramp_hourly"), where + ".ramp_hourly"),
            ramp_rt=_ramp(g.get("ramp_rt"), where + ".ramp_rt"),
            startup_cost=_num(g, "startup_cost", where, 0.0),
            shutdown_cost=_num(g, "shutdown_cost", where, 0.0),
        ))
    wind = []
    for k, w in enumerate(data["wind_generators"]):
        where = f"wind_generators[{k}]"
        rt = w.get("rt_forecast_cap") if isinstance(w, dict) else None
        wind.append(WindGenerator(
            id=str(w.get("id", f"W{k + 1}")), bus=_req(w, "bus", where),
            forecast_cap=_floats(_req(w, "forecast_cap", where), where + ".forecast_cap"),
            rt_forecast_cap=_floats(rt, where + ".rt_forecast_cap") if rt is not None else None,
        ))
    return PowerSystem(tuple(buses), tuple(lines), tuple(thermal), tuple(wind), time_struct,
                       voll_da=_num(data, "voll_da", "voll_da"),
                       voll_rt=_num(data, "voll_rt", "voll_rt"), name=name)


def load_case(path) -> PowerSystem:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise CaseFormatError(f"case file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(exc.msg, f"{path}:line {exc.lineno} col {exc.colno}") from None
    return parse_case(data, name=path.stem)


def case_to_dict(sys: PowerSystem) -> dict:
    t = sys.time
    return {
        "buses": [{"id": b.id, "forecast_load": list(b.forecast_load),
                   **({"rt_forecast_load": list(b.rt_forecast_load)} if b.rt_forecast_load else {})}
                  for b in sys.buses],
        "lines": [{"id": l.id, "from_bus": l.from_bus, "to_bus": l.to_bus,
                   "susceptance": l.susceptance, "capacity": l.capacity} for l in sys.lines],
        "thermal_generators": [{
            "id": g.id, "bus": g.bus, "p_min": g.p_min, "p_max": g.p_max,
            "ramp_hourly": _ramp_out(g.ramp_hourly), "ramp_rt": _ramp_out(g.ramp_rt),
            "startup_cost": g.startup_cost, "shutdown_cost": g.shutdown_cost,
            "cost_segments": [list(s) for s in g.cost_segments]} for g in sys.thermal_generators],
        "wind_generators": [{"id": w.id, "bus": w.bus, "forecast_cap": list(w.forecast_cap),
                             **({"rt_forecast_cap": list(w.rt_forecast_cap)} if w.rt_forecast_cap else {})}
                            for w in sys.wind_generators],
        "time": {"da_hours": list(t.da_hours), "rt_hours": list(t.rt_hours), "n_tp": t.n_tp,
                 "flex_window": list(t.flex_window)},
        "voll_da": sys.voll_da,
        "voll_rt": sys.voll_rt,
    }


def dump_case(sys: PowerSystem, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(sys), indent=2))


# ---------------------------------------------------------------------------
# history tables
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HistoryMatrix:
    """Past observations: rows are timestamps, columns buses or wind farms (MW)."""

    columns: tuple[str, ...]
    values: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]


def load_history(path, kind: str, system: PowerSystem | None = None) -> HistoryMatrix:
    """Read a history CSV (header of bus/farm ids, one row per observation).

    With ``system`` given, columns are checked against its bus ids
    (``kind="load"``) or wind-farm ids (``kind="wind"``) and reordered to
    match the system's ordering.
    """
    if kind not in ("load", "wind"):
        raise ValueError("kind must be 'load' or 'wind'")
    path = Path(path)
    try:
        fh = path.open(newline="")
    except FileNotFoundError:
        raise CaseFormatError(f"history file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CaseFormatError("empty history file", str(path)) from None
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise CaseFormatError(f"expected {len(header)} cells, found {len(raw)}",
                                      f"{path}:line {lineno}")
            try:
                row = [float(c) for c in raw]
            except ValueError:
                bad = next(i for i, c in enumerate(raw) if not _is_float(c))
                raise CaseFormatError(f"non-numeric cell {raw[bad]!r} in column {header[bad]!r}",
                                      f"{path}:line {lineno}") from None
            if not all(math.isfinite(v) for v in row):
                raise CaseFormatError("missing or non-finite value", f"{path}:line {lineno}")
            rows.append(row)
    values = np.asarray(rows, dtype=float).reshape(-1, len(header))
    hist = HistoryMatrix(tuple(header), values)
    if system is not None:
        hist = align_history(hist, kind, system)
    if hist.n_obs < 2:
        raise ValidationError("history needs at least 2 observations for a covariance",
                              "history-samples")
    return hist


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def align_history(hist: HistoryMatrix, kind: str, system: PowerSystem) -> HistoryMatrix:
    ids = [str(b.id) for b in system.buses] if kind == "load" else [w.id for w in system.wind_generators]
    if len(hist.columns) != len(ids):
        raise ValidationError(f"{kind} history has {len(hist.columns)} columns, system has {len(ids)}",
                              "history-dimensions")
    if set(hist.columns) != set(ids):
        unknown = sorted(set(hist.columns) - set(ids))
        raise ValidationError(f"{kind} history columns not in system: {unknown}", "history-dimensions")
    order = [hist.columns.index(i) for i in ids]
    return HistoryMatrix(tuple(ids), hist.values[:, order])


def history_from_array(values, columns: Iterable[str] | None = None) -> HistoryMatrix:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    cols = tuple(columns) if columns is not None else tuple(str(i) for i in range(values.shape[1]))
    return HistoryMatrix(cols, values)
