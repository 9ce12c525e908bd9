"""Physical subsystem models: DGU converter with RLC filter, Z/ZIP loads and
RL / pi-model lines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.constants import epsilon_0

from phsgrid.phs_core import DomainError, PhsSystem, QuadraticHamiltonian

DEFAULT_V_MIN = 1e-3

# Per-kilometre defaults of the Simscape pi-section line block: ohm, henry, farad.
MATLAB_PER_KM = (0.01273, 0.9337e-3, 12.74e-9)


@dataclass(frozen=True)
class DguParams:
    """Lumped converter/filter parameters: ohm, henry, farad."""

    r_t: float
    l_t: float
    c_t: float

    def __post_init__(self):
        for name in ("r_t", "l_t", "c_t"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"DguParams.{name} must be > 0, got {val}")


@dataclass(frozen=True)
class ZipLoad:
    """Two-tier load: ZIP above ``threshold_fraction * v_nominal``, pure
    conductance below it."""

    y_l: float
    i_bar: float
    p_l: float
    v_nominal: float
    threshold_fraction: float = 0.7

    def __post_init__(self):
        if not self.y_l >= 0:
            raise ValueError(f"ZipLoad.y_l must be >= 0, got {self.y_l}")
        if not self.i_bar >= 0:
            raise ValueError(f"ZipLoad.i_bar must be >= 0, got {self.i_bar}")
        if not self.p_l >= 0:
            raise ValueError(f"ZipLoad.p_l must be >= 0, got {self.p_l}")
        if not self.v_nominal > 0:
            raise ValueError(f"ZipLoad.v_nominal must be > 0, got {self.v_nominal}")
        if not 0 < self.threshold_fraction < 1:
            raise ValueError(
                f"ZipLoad.threshold_fraction must lie in (0, 1), got {self.threshold_fraction}"
            )

    @property
    def v_threshold(self) -> float:
        return self.threshold_fraction * self.v_nominal

    @property
    def y_equivalent(self) -> float:
        """Conductance of the low-voltage tier; makes the law continuous."""
        vt = self.v_threshold
        return (self.y_l * vt + self.i_bar + self.p_l / vt) / vt


def zip_current(load: ZipLoad, v: float) -> float:
    """Load current drawn at bus voltage ``v``."""
    if not v > 0:
        raise DomainError(f"load voltage must be positive, got {v}")
    if v >= load.v_threshold:
        return load.y_l * v + load.i_bar + load.p_l / v
    return load.y_equivalent * v


def zip_current_derivative(load: ZipLoad, v: float) -> float:
    if not v > 0:
        raise DomainError(f"load voltage must be positive, got {v}")
    if v >= load.v_threshold:
        return load.y_l - load.p_l / (v * v)
    return load.y_equivalent


def dgu_phs(params: DguParams, load: ZipLoad, v_min: float = DEFAULT_V_MIN,
            x_star: Optional[np.ndarray] = None) -> PhsSystem:
    """DGU with its PCC load as a two-state PHS.

    State ``(Lt*It, Ct*V)``, input ``u = Vt``, disturbance ``d = -I_N``.
    States with ``V < v_min`` are rejected; ``v_min = 0`` is accepted for a
    pure-conductance load.
    """
    if v_min < 0 or (v_min == 0 and (load.i_bar != 0.0 or load.p_l != 0.0)):
        raise ValueError(f"v_min must be > 0 for a load with current or power terms, got {v_min}")
    lt, ct = params.l_t, params.c_t

    def voltage(x):
        return x[1] / ct

    def domain(x):
        v = voltage(x)
        if not v >= v_min:
            return f"bus voltage {v:.6g} V below v_min={v_min:g} V"
        return None

    pure_z = load.i_bar == 0.0 and load.p_l == 0.0

    def r_of_x(x):
        # a pure conductance stays defined at V = 0
        g_load = load.y_l if pure_z else zip_current(load, voltage(x)) / voltage(x)
        return np.array([[params.r_t, 0.0], [0.0, g_load]])

    j = np.array([[0.0, -1.0], [1.0, 0.0]])
    return PhsSystem(
        n=2,
        j_of_x=lambda x: j,
        r_of_x=r_of_x,
        g=np.array([[1.0], [0.0]]),
        k=np.array([[0.0], [1.0]]),
        hamiltonian=QuadraticHamiltonian.diagonal([1.0 / lt, 1.0 / ct], x_star),
        domain=domain,
        name="dgu",
    )


@dataclass(frozen=True)
class PiLine:
    """pi-section line between two PCC nodes; ``c`` is the total shunt
    capacitance, split half per end."""

    r: float
    l: float
    c: float
    length: float
    endpoints: tuple[int, int]

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"PiLine.r must be > 0, got {self.r}")
        if not self.l > 0:
            raise ValueError(f"PiLine.l must be > 0, got {self.l}")
        if not self.c >= 0:
            raise ValueError(f"PiLine.c must be >= 0, got {self.c}")
        i, j = self.endpoints
        if i == j:
            raise ValueError(f"PiLine endpoints must differ, got {self.endpoints}")
        object.__setattr__(self, "endpoints", (int(i), int(j)))

    @property
    def c_half(self) -> float:
        return 0.5 * self.c


def pi_line_from_length(per_km, length: float, endpoints) -> PiLine:
    """Scale per-km ``(ohm, henry, farad)`` values by ``length`` in km."""
    if not length > 0:
        raise ValueError(f"line length must be > 0 km, got {length}")
    r_km, l_km, c_km = per_km
    return PiLine(r=r_km * length, l=l_km * length, c=c_km * length,
                  length=float(length), endpoints=tuple(endpoints))


def rl_line_phs(line: PiLine) -> PhsSystem:
    """One-state PHS of the series branch; state ``L*I``, ``d = (V_i, V_j)``,
    ``z = (I, -I)``, no control port."""
    r = line.r
    return PhsSystem(
        n=1,
        j_of_x=lambda x: np.zeros((1, 1)),
        r_of_x=lambda x: np.array([[r]]),
        g=np.zeros((1, 0)),
        k=np.array([[1.0, -1.0]]),
        hamiltonian=QuadraticHamiltonian.diagonal([1.0 / line.l]),
        name="line",
    )


def estimate_line_capacitance(distance_d: float, radius_r: float, length: float) -> float:
    """Single-conductor-over-ground capacitance ``2 pi eps0 / ln(d/r)``
    times ``length`` (km); distances in metres."""
    if not (radius_r > 0 and distance_d > radius_r):
        raise ValueError("need distance_d > radius_r > 0")
    if length < 0:
        raise ValueError("length must be >= 0")
    return 2.0 * math.pi * epsilon_0 / math.log(distance_d / radius_r) * length * 1e3
