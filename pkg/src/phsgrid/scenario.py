"""JSON scenario documents: parsing with validation, and serialization.

Layout (defaults in brackets)::

    {
      "name": str, "description": str [""],
      "dgus": [{"id": int, "filter": {"r_t", "l_t", "c_t"},
                "load": {"y_l", "i_bar", "p_l", "v_nominal", "threshold_fraction" [0.7]},
                "controller": {"r1", "k_i", "v_ref", "compensate_load" [true],
                               "integral_action" [true]},
                "connected" [true], "external_current" [0.0]}],
      "lines": [{"id": int, "from": int, "to": int, "connected" [true],
                 "length_km": float, "per_km": {"r", "l", "c"}}
                 or {..., "r", "l", "c", "length_km" [1.0]}],
      "events": [{"time", "kind", "dgu", "lines", "load", "v_ref", "update_controller" [true]}],
      "simulation": {"t_start" [0], "t_end", "dt" [1e-5], "decimation" [10]},
      "initial": {"kind": "steady_state", "voltage_offset" [0.0]},
      "output": {"dir" ["out"], "csv" ["trajectory.csv"], "summary" ["summary.json"]}
    }

Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from phsgrid.control import ControllerParams
from phsgrid.network import EVENT_KINDS, DguUnit, Event, Topology
from phsgrid.plant import DguParams, PiLine, ZipLoad, pi_line_from_length

DEFAULT_DT = 1e-5
DEFAULT_DECIMATION = 10
BUNDLED = ("paper_fig6",)


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario document; ``where`` names the field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


@dataclass(frozen=True)
class SimSettings:
    t_end: float
    t_start: float = 0.0
    dt: float = DEFAULT_DT
    decimation: int = DEFAULT_DECIMATION


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "steady_state"
    voltage_offset: float = 0.0


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    csv: str = "trajectory.csv"
    summary: str = "summary.json"


@dataclass(frozen=True)
class LineSpec:
    """Line as written in the document (per-km or absolute values)."""

    id: int
    endpoints: tuple[int, int]
    length_km: float
    per_km: Optional[tuple[float, float, float]] = None
    absolute: Optional[tuple[float, float, float]] = None
    connected: bool = True

    def build(self) -> PiLine:
        if self.per_km is not None:
            return pi_line_from_length(self.per_km, self.length_km, self.endpoints)
        r, l, c = self.absolute
        return PiLine(r=r, l=l, c=c, length=self.length_km, endpoints=self.endpoints)


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: Topology
    events: tuple[Event, ...]
    settings: SimSettings
    line_specs: tuple[LineSpec, ...]
    initial: InitialSpec = field(default_factory=InitialSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    description: str = ""

    def initial_state(self) -> np.ndarray:
        from phsgrid.steady_state import steady_state_for

        topo = self.topology
        for ev in self.events:
            if ev.time <= self.settings.t_start:
                topo = topo.apply(ev)
        x = steady_state_for(topo).as_state()
        n = topo.n_dgu
        x[n:2 * n] += self.initial.voltage_offset
        return x

    def topology_at(self, time: float) -> Topology:
        """Configuration in force just after all events up to ``time``."""
        topo = self.topology
        for ev in self.events:
            if ev.time <= time + 1e-12:
                topo = topo.apply(ev)
        return topo


# ------------------------------------------------------------------ parsing

_MISSING = object()


class _Obj:
    """Key access on a JSON object that records which keys were consumed."""

    def __init__(self, data: Any, where: str):
        if not isinstance(data, dict):
            raise ScenarioError(where, f"expected an object, got {type(data).__name__}")
        self.data = data
        self.where = where
        self.used: set[str] = set()

    def _path(self, key: str) -> str:
        return f"{self.where}.{key}" if self.where else key

    def get(self, key: str, default=_MISSING):
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ScenarioError(self._path(key), "required field missing")
            return default
        return self.data[key]

    def number(self, key: str, default=_MISSING, positive=False, nonneg=False) -> float:
        val = self.get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            raise ScenarioError(self._path(key), f"expected a finite number, got {val!r}")
        if positive and not val > 0:
            raise ScenarioError(self._path(key), f"must be > 0, got {val}")
        if nonneg and not val >= 0:
            raise ScenarioError(self._path(key), f"must be >= 0, got {val}")
        return float(val)

    def integer(self, key: str, default=_MISSING) -> int:
        val = self.get(key, default)
        if isinstance(val, bool) or not isinstance(val, int):
            raise ScenarioError(self._path(key), f"expected an integer, got {val!r}")
        return val

    def boolean(self, key: str, default=_MISSING) -> bool:
        val = self.get(key, default)
        if not isinstance(val, bool):
            raise ScenarioError(self._path(key), f"expected true/false, got {val!r}")
        return val

    def string(self, key: str, default=_MISSING) -> str:
        val = self.get(key, default)
        if not isinstance(val, str):
            raise ScenarioError(self._path(key), f"expected a string, got {val!r}")
        return val

    def obj(self, key: str, default=_MISSING) -> Optional["_Obj"]:
        val = self.get(key, default)
        if val is None:
            return None
        return _Obj(val, self._path(key))

    def items(self, key: str, default=_MISSING) -> list["_Obj"]:
        val = self.get(key, default)
        if not isinstance(val, list):
            raise ScenarioError(self._path(key), "expected a list")
        return [_Obj(v, f"{self._path(key)}[{i}]") for i, v in enumerate(val)]

    def done(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ScenarioError(self._path(extra[0]), "unknown key")


def _construct(where: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ScenarioError(where, str(exc)) from None


def _load(o: _Obj) -> ZipLoad:
    load = _construct(
        o.where, ZipLoad,
        y_l=o.number("y_l", nonneg=True), i_bar=o.number("i_bar", 0.0, nonneg=True),
        p_l=o.number("p_l", 0.0, nonneg=True), v_nominal=o.number("v_nominal", positive=True),
        threshold_fraction=o.number("threshold_fraction", 0.7),
    )
    o.done()
    return load


def _dgu(o: _Obj) -> tuple[DguUnit, bool]:
    f = o.obj("filter")
    params = _construct(f.where, DguParams, r_t=f.number("r_t"), l_t=f.number("l_t"), c_t=f.number("c_t"))
    f.done()
    load = _load(o.obj("load"))
    c = o.obj("controller")
    ctl = _construct(
        c.where, ControllerParams,
        r1=c.number("r1"), k_i=c.number("k_i"), v_ref=c.number("v_ref"),
        compensate_load=c.boolean("compensate_load", True),
        integral_action=c.boolean("integral_action", True),
    )
    c.done()
    unit = DguUnit(id=o.integer("id"), params=params, load=load, controller=ctl,
                   external_current=o.number("external_current", 0.0))
    connected = o.boolean("connected", True)
    o.done()
    return unit, connected


def _line(o: _Obj, dgu_ids: set[int]) -> LineSpec:
    lid = o.integer("id")
    a, b = o.integer("from"), o.integer("to")
    for key, node in (("from", a), ("to", b)):
        if node not in dgu_ids:
            raise ScenarioError(o._path(key), f"references unknown DGU {node} (known: {sorted(dgu_ids)})")
    if a == b:
        raise ScenarioError(o._path("to"), "line endpoints must differ")
    connected = o.boolean("connected", True)
    if "per_km" in o.data:
        pk = o.obj("per_km")
        per_km = (pk.number("r", positive=True), pk.number("l", positive=True), pk.number("c", nonneg=True))
        pk.done()
        spec = LineSpec(lid, (a, b), o.number("length_km", positive=True), per_km=per_km, connected=connected)
    else:
        absolute = (o.number("r", positive=True), o.number("l", positive=True), o.number("c", 0.0, nonneg=True))
        spec = LineSpec(lid, (a, b), o.number("length_km", 1.0, positive=True), absolute=absolute,
                        connected=connected)
    o.done()
    return spec


def _event(o: _Obj, dgu_ids: set[int], line_ids: set[int]) -> Event:
    kind = o.string("kind")
    if kind not in EVENT_KINDS:
        raise ScenarioError(o._path("kind"), f"must be one of {', '.join(EVENT_KINDS)}")
    time = o.number("time", nonneg=True)
    dgu = o.integer("dgu", None) if "dgu" in o.data else None
    if dgu is not None and dgu not in dgu_ids:
        raise ScenarioError(o._path("dgu"), f"references unknown DGU {dgu}")
    raw_lines = o.get("lines", [])
    if not isinstance(raw_lines, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw_lines):
        raise ScenarioError(o._path("lines"), "expected a list of line ids")
    for lid in raw_lines:
        if lid not in line_ids:
            raise ScenarioError(o._path("lines"), f"references unknown line {lid}")
    load = _load(o.obj("load")) if "load" in o.data else None
    v_ref = o.number("v_ref", positive=True) if "v_ref" in o.data else None
    update = o.boolean("update_controller", True)
    o.done()
    return _construct(o.where, Event, time=time, kind=kind, dgu=dgu, lines=tuple(raw_lines),
                      load=load, v_ref=v_ref, update_controller=update)


def scenario_from_dict(data: dict) -> Scenario:
    root = _Obj(data, "")
    name = root.string("name")
    description = root.string("description", "")
    units, dmask = [], []
    for o in root.items("dgus"):
        unit, on = _dgu(o)
        units.append(unit)
        dmask.append(on)
    if not units:
        raise ScenarioError("dgus", "at least one DGU is required")
    dgu_ids = {u.id for u in units}
    if len(dgu_ids) != len(units):
        raise ScenarioError("dgus", "duplicate DGU id")
    specs = [_line(o, dgu_ids) for o in root.items("lines", [])]
    line_ids = {s.id for s in specs}
    if len(line_ids) != len(specs):
        raise ScenarioError("lines", "duplicate line id")
    events = [_event(o, dgu_ids, line_ids) for o in root.items("events", [])]
    times = [e.time for e in events]
    if times != sorted(times):
        raise ScenarioError("events", "events must be sorted by time")

    sim = root.obj("simulation")
    settings = SimSettings(
        t_start=sim.number("t_start", 0.0),
        t_end=sim.number("t_end"),
        dt=sim.number("dt", DEFAULT_DT, positive=True),
        decimation=sim.integer("decimation", DEFAULT_DECIMATION),
    )
    sim.done()
    if not settings.t_end > settings.t_start:
        raise ScenarioError("simulation.t_end", "must exceed t_start")
    if settings.decimation < 1:
        raise ScenarioError("simulation.decimation", "must be >= 1")
    for i, e in enumerate(events):
        if not settings.t_start <= e.time <= settings.t_end:
            raise ScenarioError(f"events[{i}].time", "outside the simulated interval")

    init = root.obj("initial", None)
    initial = InitialSpec()
    if init is not None:
        kind = init.string("kind", "steady_state")
        if kind != "steady_state":
            raise ScenarioError("initial.kind", "only 'steady_state' is supported")
        initial = InitialSpec(kind, init.number("voltage_offset", 0.0))
        init.done()
    out = root.obj("output", None)
    output = OutputSpec()
    if out is not None:
        output = OutputSpec(out.string("dir", "out"), out.string("csv", "trajectory.csv"),
                            out.string("summary", "summary.json"))
        out.done()
    root.done()

    lines = []
    for i, s in enumerate(specs):
        try:
            lines.append(s.build())
        except ValueError as exc:
            raise ScenarioError(f"lines[{i}]", str(exc)) from None
    try:
        topology = Topology(tuple(units), tuple(lines), tuple(dmask), tuple(s.connected for s in specs),
                            line_ids=tuple(s.id for s in specs))
    except ValueError as exc:
        raise ScenarioError("lines", str(exc)) from None
    return Scenario(name=name, topology=topology, events=tuple(events), settings=settings,
                    line_specs=tuple(specs), initial=initial, output=output, description=description)


def parse_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
    return scenario_from_dict(data)


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Read a scenario file; a bare bundled name such as ``paper_fig6`` is
    resolved from the package data."""
    p = Path(path_or_name)
    if not p.exists() and str(path_or_name) in BUNDLED:
        text = resources.files("phsgrid.data").joinpath(f"{path_or_name}.json").read_text()
    else:
        text = p.read_text()
    return parse_scenario(text)


# ------------------------------------------------------------ serialization

def _load_dict(load: ZipLoad) -> dict:
    return {"y_l": load.y_l, "i_bar": load.i_bar, "p_l": load.p_l, "v_nominal": load.v_nominal,
            "threshold_fraction": load.threshold_fraction}


def scenario_to_dict(sc: Scenario) -> dict:
    topo = sc.topology
    dgus = []
    for d, on in zip(topo.dgus, topo.connected_dgus):
        c = d.controller
        dgus.append({
            "id": d.id,
            "filter": {"r_t": d.params.r_t, "l_t": d.params.l_t, "c_t": d.params.c_t},
            "load": _load_dict(d.load),
            "controller": {"r1": c.r1, "k_i": c.k_i, "v_ref": c.v_ref,
                           "compensate_load": c.compensate_load, "integral_action": c.integral_action},
            "connected": on,
            "external_current": d.external_current,
        })
    lines = []
    for s in sc.line_specs:
        item = {"id": s.id, "from": s.endpoints[0], "to": s.endpoints[1], "connected": s.connected,
                "length_km": s.length_km}
        if s.per_km is not None:
            item["per_km"] = dict(zip(("r", "l", "c"), s.per_km))
        else:
            item.update(zip(("r", "l", "c"), s.absolute))
        lines.append(item)
    events = []
    for e in sc.events:
        item = {"time": e.time, "kind": e.kind}
        if e.dgu is not None:
            item["dgu"] = e.dgu
        if e.lines:
            item["lines"] = list(e.lines)
        if e.load is not None:
            item["load"] = _load_dict(e.load)
        if e.v_ref is not None:
            item["v_ref"] = e.v_ref
        item["update_controller"] = e.update_controller
        events.append(item)
    s = sc.settings
    return {
        "name": sc.name,
        "description": sc.description,
        "dgus": dgus,
        "lines": lines,
        "events": events,
        "simulation": {"t_start": s.t_start, "t_end": s.t_end, "dt": s.dt, "decimation": s.decimation},
        "initial": {"kind": sc.initial.kind, "voltage_offset": sc.initial.voltage_offset},
        "output": {"dir": sc.output.dir, "csv": sc.output.csv, "summary": sc.output.summary},
    }


def serialize_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2) + "\n"
