"""Bipartite DGU/line network: assembly, events and fixed-step simulation.

The state vector has a fixed layout ``[It (N), V (N), xi (N), I_line (M)]``
for the whole run; connectivity masks switch lines in and out.  A DGU that
is not yet connected keeps running standalone under its own controller
(``I_N = 0``), so it arrives at its PCC already regulated.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from phsgrid import _kernels as K
from phsgrid.control import ControllerParams, feedforward_current
from phsgrid.phs_core import DomainError
from phsgrid.plant import DEFAULT_V_MIN, DguParams, PiLine, ZipLoad, zip_current

log = logging.getLogger(__name__)

EVENT_KINDS = ("connect_line", "connect_dgu", "set_load", "set_reference")


class SimulationError(RuntimeError):
    """Integration produced a non-finite state or left the voltage domain."""

    def __init__(self, message: str, time: float, node: Optional[int] = None):
        super().__init__(message)
        self.time = time
        self.node = node


@dataclass(frozen=True)
class DguUnit:
    """One PCC: filter, load, controller and (optionally) an extra constant
    current drawn at the PCC by an unmodelled neighbour.

    ``controller_load`` is the load model the controller uses for its
    feedforward; it defaults to the actual load.
    """

    id: int
    params: DguParams
    load: ZipLoad
    controller: ControllerParams
    controller_load: Optional[ZipLoad] = None
    external_current: float = 0.0

    @property
    def model_load(self) -> ZipLoad:
        return self.load if self.controller_load is None else self.controller_load


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    dgu: Optional[int] = None
    lines: tuple[int, ...] = ()
    load: Optional[ZipLoad] = None
    v_ref: Optional[float] = None
    update_controller: bool = True

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not (math.isfinite(self.time) and self.time >= 0):
            raise ValueError(f"event time must be >= 0, got {self.time}")
        object.__setattr__(self, "lines", tuple(int(i) for i in self.lines))
        if self.kind in ("connect_dgu", "set_load", "set_reference") and self.dgu is None:
            raise ValueError(f"{self.kind} event needs a dgu id")
        if self.kind == "connect_line" and not self.lines:
            raise ValueError("connect_line event needs line ids")
        if self.kind == "set_load" and self.load is None:
            raise ValueError("set_load event needs a load")
        if self.kind == "set_reference" and not (self.v_ref is not None and self.v_ref > 0):
            raise ValueError("set_reference event needs a positive v_ref")


@dataclass(frozen=True)
class Topology:
    dgus: tuple[DguUnit, ...]
    lines: tuple[PiLine, ...]
    connected_dgus: tuple[bool, ...]
    connected_lines: tuple[bool, ...]
    line_ids: tuple[int, ...] = ()
    v_min: float = DEFAULT_V_MIN

    def __post_init__(self):
        object.__setattr__(self, "dgus", tuple(self.dgus))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "connected_dgus", tuple(bool(c) for c in self.connected_dgus))
        object.__setattr__(self, "connected_lines", tuple(bool(c) for c in self.connected_lines))
        if not self.line_ids:
            object.__setattr__(self, "line_ids", tuple(range(1, len(self.lines) + 1)))
        ids = [d.id for d in self.dgus]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate DGU ids: {ids}")
        if len(set(self.line_ids)) != len(self.line_ids) or len(self.line_ids) != len(self.lines):
            raise ValueError("line ids must be unique, one per line")
        if len(self.connected_dgus) != len(self.dgus):
            raise ValueError("connected_dgus mask has wrong length")
        if len(self.connected_lines) != len(self.lines):
            raise ValueError("connected_lines mask has wrong length")
        known = set(ids)
        for lid, line, on in zip(self.line_ids, self.lines, self.connected_lines):
            for end in line.endpoints:
                if end not in known:
                    raise ValueError(f"line {lid} references unknown DGU {end}")
            if on and not all(self.connected_dgus[self.index(e)] for e in line.endpoints):
                raise ValueError(f"line {lid} is connected but an endpoint DGU is not")

    @property
    def n_dgu(self) -> int:
        return len(self.dgus)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_state(self) -> int:
        return 3 * self.n_dgu + self.n_line

    def index(self, dgu_id: int) -> int:
        for i, d in enumerate(self.dgus):
            if d.id == dgu_id:
                return i
        raise KeyError(f"unknown DGU id {dgu_id}")

    def line_index(self, line_id: int) -> int:
        try:
            return self.line_ids.index(line_id)
        except ValueError:
            raise KeyError(f"unknown line id {line_id}") from None

    def split(self, x):
        """``(It, V, xi, I_line)`` views of a state (or of a stack of states)."""
        x = np.asarray(x, dtype=float)
        n = self.n_dgu
        return x[..., :n], x[..., n:2 * n], x[..., 2 * n:3 * n], x[..., 3 * n:]

    # ----------------------------------------------------------- kernel data

    @cached_property
    def line_nodes(self) -> np.ndarray:
        return np.array([[self.index(a), self.index(b)] for a, b in (l.endpoints for l in self.lines)],
                        dtype=np.int64).reshape(-1, 2)

    @cached_property
    def node_capacitance(self) -> np.ndarray:
        """Filter capacitance plus half of every connected incident line's
        shunt capacitance (plant side only)."""
        c = np.array([d.params.c_t for d in self.dgus], dtype=float)
        for (a, b), line, on in zip(self.line_nodes, self.lines, self.connected_lines):
            if on:
                c[a] += line.c_half
                c[b] += line.c_half
        return c

    @cached_property
    def dgu_array(self) -> np.ndarray:
        out = np.zeros((self.n_dgu, K.N_DGU_COLS))
        for i, (d, on) in enumerate(zip(self.dgus, self.connected_dgus)):
            ctl = d.controller
            out[i, K.RT] = d.params.r_t
            out[i, K.LT] = d.params.l_t
            out[i, K.CP] = self.node_capacitance[i]
            out[i, K.R1] = ctl.r1
            out[i, K.KI] = ctl.k_i
            out[i, K.VREF] = ctl.v_ref
            out[i, K.IFF] = feedforward_current(ctl, d.model_load)
            out[i, K.IA] = 1.0 if ctl.integral_action else 0.0
            out[i, K.Y] = d.load.y_l
            out[i, K.IBAR] = d.load.i_bar
            out[i, K.P] = d.load.p_l
            out[i, K.VTHR] = d.load.v_threshold
            out[i, K.YEQ] = d.load.y_equivalent
            out[i, K.IEXT] = d.external_current
            out[i, K.ON] = 1.0 if on else 0.0
        return out

    @cached_property
    def line_array(self) -> np.ndarray:
        out = np.zeros((self.n_line, K.N_LINE_COLS))
        for k, (line, on) in enumerate(zip(self.lines, self.connected_lines)):
            out[k] = (line.r, line.l, 1.0 if on else 0.0)
        return out

    @cached_property
    def vector_field(self) -> K.NumpyRhs:
        return K.NumpyRhs(self.dgu_array, self.line_array, self.line_nodes)

    # ------------------------------------------------------------ mutations

    def replace_dgu(self, dgu_id: int, **changes) -> "Topology":
        i = self.index(dgu_id)
        dgus = list(self.dgus)
        dgus[i] = dataclasses.replace(dgus[i], **changes)
        return dataclasses.replace(self, dgus=tuple(dgus))

    def with_integral_action(self, enabled: bool) -> "Topology":
        dgus = tuple(
            dataclasses.replace(d, controller=dataclasses.replace(d.controller, integral_action=enabled))
            for d in self.dgus
        )
        return dataclasses.replace(self, dgus=dgus)

    def apply(self, event: Event) -> "Topology":
        """Topology after ``event`` (the state is handled by the caller)."""
        if event.kind == "connect_line":
            on = list(self.connected_lines)
            for lid in event.lines:
                on[self.line_index(lid)] = True
            return dataclasses.replace(self, connected_lines=tuple(on))
        if event.kind == "connect_dgu":
            dmask = list(self.connected_dgus)
            dmask[self.index(event.dgu)] = True
            lmask = list(self.connected_lines)
            for lid in event.lines:
                lmask[self.line_index(lid)] = True
            return dataclasses.replace(self, connected_dgus=tuple(dmask), connected_lines=tuple(lmask))
        if event.kind == "set_load":
            d = self.dgus[self.index(event.dgu)]
            ctl_load = event.load if event.update_controller else d.model_load
            return self.replace_dgu(event.dgu, load=event.load, controller_load=ctl_load)
        if event.kind == "set_reference":
            d = self.dgus[self.index(event.dgu)]
            return self.replace_dgu(event.dgu, controller=dataclasses.replace(d.controller, v_ref=event.v_ref))
        raise ValueError(f"unknown event kind {event.kind!r}")


def net_currents(topology: Topology, line_currents) -> np.ndarray:
    """Per-node net current into the network from connected lines
    (positive when leaving the node)."""
    il = np.asarray(line_currents, dtype=float)
    out = np.zeros(il.shape[:-1] + (topology.n_dgu,))
    for k, ((a, b), on) in enumerate(zip(topology.line_nodes, topology.connected_lines)):
        if on:
            out[..., a] += il[..., k]
            out[..., b] -= il[..., k]
    return out


def node_net_currents(topology: Topology, x) -> np.ndarray:
    """Total disturbance current ``I_N`` per node: lines plus any external
    current (zero for disconnected DGUs)."""
    _, _, _, il = topology.split(x)
    ext = topology.dgu_array[:, K.IEXT] * topology.dgu_array[:, K.ON]
    return net_currents(topology, il) + ext


def effective_node_capacitance(topology: Topology, node: int) -> float:
    return float(topology.node_capacitance[topology.index(node)])


def _check_voltage_domain(topology: Topology, x, t: float) -> None:
    _, v, _, _ = topology.split(x)
    for i, vi in enumerate(v):
        if not vi >= topology.v_min:
            node = topology.dgus[i].id
            raise DomainError(f"bus voltage {vi:.6g} V at DGU {node} (t={t:g} s) below v_min")


def assemble_rhs(topology: Topology, state, t: float = 0.0) -> np.ndarray:
    """Closed-loop network vector field at ``state``."""
    x = np.asarray(state, dtype=float)
    if x.shape != (topology.n_state,):
        raise ValueError(f"state must have length {topology.n_state}, got {x.shape}")
    _check_voltage_domain(topology, x, t)
    return topology.vector_field(x)


def rhs_jacobian(topology: Topology, state) -> np.ndarray:
    """Analytic Jacobian of :func:`assemble_rhs`."""
    x = np.asarray(state, dtype=float)
    _check_voltage_domain(topology, x, 0.0)
    d = topology.dgu_array
    n, m = topology.n_dgu, topology.n_line
    _, v, _, _ = topology.split(x)
    jac = np.zeros((topology.n_state, topology.n_state))
    for i in range(n):
        lt, cp, r1, ki, ia = d[i, K.LT], d[i, K.CP], d[i, K.R1], d[i, K.KI], d[i, K.IA]
        it_r, v_r, xi_r = i, n + i, 2 * n + i
        jac[it_r, it_r] = -r1 / lt
        jac[it_r, v_r] = (-1.0 - ia * ki * lt) / lt
        jac[it_r, xi_r] = ia * ki * r1 / lt
        if v[i] >= d[i, K.VTHR]:
            dil = d[i, K.Y] - d[i, K.P] / v[i] ** 2
        else:
            dil = d[i, K.YEQ]
        jac[v_r, it_r] = 1.0 / cp
        jac[v_r, v_r] = -dil / cp
        jac[xi_r, v_r] = -ia
    for k, ((a, b), on) in enumerate(zip(topology.line_nodes, topology.connected_lines)):
        if not on:
            continue
        row = 3 * n + k
        line = topology.lines[k]
        jac[n + a, row] -= 1.0 / d[a, K.CP]
        jac[n + b, row] += 1.0 / d[b, K.CP]
        jac[row, n + a] = 1.0 / line.l
        jac[row, n + b] = -1.0 / line.l
        jac[row, row] = -line.r / line.l
    return jac


def step_rk4(rhs: Callable[[np.ndarray], np.ndarray], state, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of an autonomous field."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    out = K.rk4_step(rhs, np.asarray(state, dtype=float), dt)
    if not np.all(np.isfinite(out)):
        raise SimulationError("RK4 step produced a non-finite state", time=float("nan"))
    return out


def integrate(rhs: Callable[[np.ndarray], np.ndarray], state, t_span: float, dt: float,
              record_every: int = 0):
    """Fixed-step RK4 of an arbitrary autonomous field over ``t_span``.

    Returns the final state, or ``(times, states)`` when ``record_every`` > 0.
    """
    n_steps = int(round(t_span / dt))
    x = np.asarray(state, dtype=float)
    ts, xs = [0.0], [x]
    for k in range(1, n_steps + 1):
        x = step_rk4(rhs, x, dt)
        if record_every and k % record_every == 0:
            ts.append(k * dt)
            xs.append(x)
    if record_every:
        return np.array(ts), np.array(xs)
    return x


# ------------------------------------------------------------------ energy

def total_hamiltonian(topology: Topology, state, equilibrium=None) -> np.ndarray | float:
    """Network storage function, zero at the composite equilibrium.

    Per connected DGU, with ``a = kI`` under integral action (else 0) and
    ``*`` marking equilibrium values::

        Lt/2 (It - It* - a (xi - xi*))^2 + C/2 (V - V*)^2 + a/2 (xi - xi*)^2

    where ``C`` is the plant node capacitance.  The first term is the filter
    energy in the integrator-shifted current coordinate; the last one equals
    ``(kI xi - kI xi*)^2 / (2 kI)``.  Connected lines add ``L/2 (I - I*)^2``.
    Works on a single state or a stack of states.
    """
    if equilibrium is None:
        from phsgrid.steady_state import steady_state_for

        equilibrium = steady_state_for(topology)
    x = np.asarray(state, dtype=float)
    it, v, xi, il = topology.split(x)
    d = topology.dgu_array
    a = d[:, K.KI] * d[:, K.IA]
    on_d = d[:, K.ON] != 0.0
    w = (it - equilibrium.i_t) - a * (xi - equilibrium.xi)
    h_dgu = (0.5 * d[:, K.LT] * w ** 2 + 0.5 * d[:, K.CP] * (v - equilibrium.v) ** 2
             + 0.5 * a * (xi - equilibrium.xi) ** 2)
    h = np.sum(np.where(on_d, h_dgu, 0.0), axis=-1)
    if topology.n_line:
        lines = topology.line_array
        on_l = lines[:, K.LON] != 0.0
        h_line = 0.5 * lines[:, K.LL] * (il - equilibrium.i_line) ** 2
        h = h + np.sum(np.where(on_l, h_line, 0.0), axis=-1)
    return float(h) if np.ndim(h) == 0 else h


# -------------------------------------------------------------- simulation

@dataclass
class Segment:
    t_start: float
    t_end: float
    topology: Topology


@dataclass
class TimeSeries:
    """Logged trajectory.  Rows are sample instants; at an event time the
    logged row holds the pre-event configuration."""

    t: np.ndarray
    states: np.ndarray
    u: np.ndarray
    i_n: np.ndarray
    h_total: np.ndarray
    v_ref: np.ndarray
    connected: np.ndarray
    dgu_ids: tuple[int, ...]
    line_ids: tuple[int, ...]
    segments: list[Segment] = field(default_factory=list)

    @property
    def n_dgu(self) -> int:
        return len(self.dgu_ids)

    def _cols(self, a, b):
        return self.states[:, a:b]

    @property
    def i_t(self) -> np.ndarray:
        return self._cols(0, self.n_dgu)

    @property
    def v(self) -> np.ndarray:
        return self._cols(self.n_dgu, 2 * self.n_dgu)

    @property
    def xi(self) -> np.ndarray:
        return self._cols(2 * self.n_dgu, 3 * self.n_dgu)

    @property
    def i_line(self) -> np.ndarray:
        return self.states[:, 3 * self.n_dgu:]

    def at(self, time: float) -> int:
        """Index of the last sample at or before ``time``."""
        idx = int(np.searchsorted(self.t, time + 1e-12, side="right")) - 1
        if idx < 0:
            raise ValueError(f"time {time} precedes the series")
        return idx


def _steps_for(span: float, dt: float) -> tuple[int, float]:
    """Full steps of ``dt`` in ``span`` plus the leftover partial step."""
    n = int(math.floor(span / dt + 1e-9))
    rest = span - n * dt
    if rest <= 1e-9 * dt:
        rest = 0.0
    return n, rest


def _derived(topology: Topology, states: np.ndarray, equilibrium):
    f = topology.vector_field
    it, v, xi, _ = topology.split(states)
    u = f.control(it, v, xi)
    i_n = node_net_currents(topology, states)
    h = total_hamiltonian(topology, states, equilibrium)
    v_ref = np.broadcast_to(topology.dgu_array[:, K.VREF], v.shape).copy()
    conn = np.broadcast_to(topology.dgu_array[:, K.ON] != 0.0, v.shape).copy()
    return u, i_n, np.atleast_1d(h), v_ref, conn


def run(topology: Topology, x0, events: Sequence[Event], t_start: float, t_end: float,
        dt: float = 1e-5, decimation: int = 1, backend: Optional[str] = None) -> TimeSeries:
    """Integrate through ``events`` with fixed-step RK4.

    Event instants are hit exactly: a segment ending off the ``dt`` grid
    finishes with one shorter step.  The sample grid is ``t_start + k*dt*decimation``
    plus every event time and ``t_end``.
    """
    from phsgrid.steady_state import steady_state_for

    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    decimation = int(decimation)
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    events = list(events)
    times = [e.time for e in events]
    if times != sorted(times):
        raise ValueError("events must be sorted by time")
    for e in events:
        if not t_start <= e.time <= t_end:
            raise ValueError(f"event at t={e.time} outside [{t_start}, {t_end}]")

    x = np.array(x0, dtype=float)
    if x.shape != (topology.n_state,):
        raise ValueError(f"initial state must have length {topology.n_state}")
    _check_voltage_domain(topology, x, t_start)

    t_parts, x_parts, u_parts, in_parts, h_parts, vr_parts, c_parts = [], [], [], [], [], [], []
    segments: list[Segment] = []
    topo = topology
    t = t_start
    step_base = 0
    pending = list(events)

    def record(tp, ts, xs):
        eq = steady_state_for(tp)
        u, i_n, h, vr, conn = _derived(tp, xs, eq)
        t_parts.append(ts)
        x_parts.append(xs)
        u_parts.append(u)
        in_parts.append(i_n)
        h_parts.append(h)
        vr_parts.append(vr)
        c_parts.append(conn)

    def apply_due(tp, xs, now):
        while pending and pending[0].time <= now + 1e-12:
            ev = pending.pop(0)
            tp = tp.apply(ev)
            if ev.kind in ("connect_dgu", "connect_line"):
                base = 3 * tp.n_dgu
                for lid in ev.lines:
                    xs[base + tp.line_index(lid)] = 0.0
            log.debug("t=%.6g s: applied %s", now, ev.kind)
        return tp

    topo = apply_due(topo, x, t)
    record(topo, np.array([t]), x[None, :])
    boundaries = sorted({e.time for e in pending if e.time > t} | {t_end})
    for t_next in boundaries:
        n_steps, rest = _steps_for(t_next - t, dt)
        x_new, log_x, log_k, status, fail_k = K.integrate(
            x, dt, n_steps, rest, decimation, step_base, topo.dgu_array, topo.line_array,
            topo.line_nodes, topo.v_min, backend=backend)
        if status != K.OK:
            t_fail = t + min(fail_k, n_steps) * dt + (rest if fail_k > n_steps else 0.0)
            if status == K.DOMAIN:
                _, v, _, _ = topo.split(x_new)
                bad = int(np.argmin(v))
                node = topo.dgus[bad].id
                raise SimulationError(
                    f"bus voltage at DGU {node} left the domain (V={v[bad]:.6g} V) at t={t_fail:.6g} s",
                    time=t_fail, node=node)
            raise SimulationError(f"non-finite state at t={t_fail:.6g} s", time=t_fail)
        ts = t + log_k * dt
        if rest > 0.0 or len(log_k) == 0 or log_k[-1] != n_steps:
            ts = np.append(ts, t_next)
            log_x = np.vstack([log_x, x_new[None, :]])
        else:
            ts[-1] = t_next
        segments.append(Segment(t, t_next, topo))
        record(topo, ts, log_x)
        x = x_new
        t = t_next
        step_base += n_steps
        topo = apply_due(topo, x, t)

    return TimeSeries(
        t=np.concatenate(t_parts),
        states=np.vstack(x_parts),
        u=np.vstack(u_parts),
        i_n=np.vstack(in_parts),
        h_total=np.concatenate(h_parts),
        v_ref=np.vstack(vr_parts),
        connected=np.vstack(c_parts),
        dgu_ids=tuple(d.id for d in topology.dgus),
        line_ids=topology.line_ids,
        segments=segments,
    )


def simulate(scenario, dt: Optional[float] = None, decimation: Optional[int] = None,
             backend: Optional[str] = None) -> TimeSeries:
    """Run a :class:`phsgrid.scenario.Scenario` (or anything with the same
    ``topology``, ``events``, ``settings`` and ``initial_state()``)."""
    s = scenario.settings
    return run(
        scenario.topology,
        scenario.initial_state(),
        scenario.events,
        s.t_start,
        s.t_end,
        dt=s.dt if dt is None else dt,
        decimation=s.decimation if decimation is None else decimation,
        backend=backend,
    )
