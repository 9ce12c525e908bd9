"""Decentralized IDA-PBC voltage controller with integral action.

Per DGU the converter voltage is

    u = (Rt - r1) It + V* + r1 I_L(V*)  +  kI r1 xi + kI Lt (V* - V)

where ``xi`` integrates ``V* - V``.  The first group assigns the damping
``r1`` to the filter current and shifts the energy minimum to ``V*``; the
second group is the integral action that removes the offset caused by the
network current.  ``r2`` (the damping the load contributes in closed loop)
never enters the feedback and is only used for certification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from phsgrid.phs_core import DomainError, rhs as phs_rhs
from phsgrid.plant import DguParams, ZipLoad, dgu_phs, zip_current


@dataclass(frozen=True)
class ControllerParams:
    """Gains and reference of one DGU controller.

    ``integral_action=False`` removes the integral term (the offset regime).
    ``compensate_load=False`` drops the steady-state load feedforward and
    leaves that job to the integrator.
    """

    r1: float
    k_i: float
    v_ref: float
    compensate_load: bool = True
    integral_action: bool = True

    def __post_init__(self):
        if not self.r1 > 0:
            raise ValueError(f"ControllerParams.r1 must be > 0, got {self.r1}")
        if not self.k_i > 0:
            raise ValueError(f"ControllerParams.k_i must be > 0, got {self.k_i}")
        if not self.v_ref > 0:
            raise ValueError(f"ControllerParams.v_ref must be > 0, got {self.v_ref}")


@dataclass
class ControllerState:
    """Integral of the voltage error ``V* - V`` in V*s."""

    xi: float = 0.0

    def reset(self) -> None:
        self.xi = 0.0


def r2_damping(load: ZipLoad, v: float, v_ref: float) -> float:
    """Closed-loop voltage damping ``Y_L - P_L / (V V*)``, valid on the ZIP tier."""
    vt = load.v_threshold
    if v < vt or v_ref < vt:
        raise DomainError(
            f"r2 is defined for V, V* >= {vt:g} V (got V={v:g}, V*={v_ref:g})"
        )
    return load.y_l - load.p_l / (v * v_ref)


def feedforward_current(params: ControllerParams, load: ZipLoad) -> float:
    """Current the controller expects the load to draw at the reference."""
    return zip_current(load, params.v_ref) if params.compensate_load else 0.0


def ida_feedback(params: ControllerParams, dgu: DguParams, load: ZipLoad, i_t: float) -> float:
    """Static damping-assignment part of the converter voltage."""
    return (dgu.r_t - params.r1) * i_t + params.v_ref + params.r1 * feedforward_current(params, load)


def ia_feedback(params: ControllerParams, dgu: DguParams, state: ControllerState, v: float) -> float:
    if not params.integral_action:
        return 0.0
    return params.k_i * params.r1 * state.xi + params.k_i * dgu.l_t * (params.v_ref - v)


def control_input(params: ControllerParams, dgu: DguParams, load: ZipLoad,
                  state: ControllerState, i_t: float, v: float) -> float:
    """Converter voltage command ``Vt``."""
    return ida_feedback(params, dgu, load, i_t) + ia_feedback(params, dgu, state, v)


def closed_loop_rhs(params: ControllerParams, dgu: DguParams, load: ZipLoad, x, i_n: float) -> np.ndarray:
    """Closed-loop dynamics written with the assigned damping.

    ``x`` is ``(It, V)`` or ``(It, V, xi)``.  Returns
    ``(Lt dIt/dt, Ct dV/dt[, dxi/dt])``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape not in ((2,), (3,)):
        raise ValueError(f"x must have 2 or 3 entries, got shape {x.shape}")
    i_t, v = x[0], x[1]
    v_ref = params.v_ref
    it_star = zip_current(load, v_ref)
    r2 = r2_damping(load, v, v_ref)
    v_ia = 0.0
    if x.shape[0] == 3:
        v_ia = ia_feedback(params, dgu, ControllerState(x[2]), v)
    ff = feedforward_current(params, load)
    out = [
        -params.r1 * (i_t - ff) - (v - v_ref) + v_ia,
        (i_t - it_star) - r2 * (v - v_ref) - i_n,
    ]
    if x.shape[0] == 3:
        out.append(v_ref - v if params.integral_action else 0.0)
    return np.array(out)


@dataclass(frozen=True)
class MatchingReport:
    max_residual: float
    max_abs_residual: np.ndarray
    j12: float
    it_star: float
    residuals: np.ndarray = field(repr=False)


def verify_matching(params: ControllerParams, dgu: DguParams, load: ZipLoad, samples,
                    feedforward: float | None = None) -> MatchingReport:
    """Compare the open-loop model under ``ida_feedback`` with the assigned
    closed loop at undisturbed samples ``(It, V)``.

    ``max_residual`` is relative to the magnitude of the terms in each row;
    ``max_abs_residual`` is per row in A/s and V/s.  ``feedforward`` replaces
    ``I_L(V*)`` inside the control law (for checking that a wrong law is
    detected).
    """
    sys = dgu_phs(dgu, load)
    ff = feedforward_current(params, load) if feedforward is None else feedforward
    it_star = zip_current(load, params.v_ref)
    rel, absolute = [], []
    for i_t, v in samples:
        u = (dgu.r_t - params.r1) * i_t + params.v_ref + params.r1 * ff
        x = np.array([dgu.l_t * i_t, dgu.c_t * v])
        open_loop = phs_rhs(sys, x, [u], [0.0])
        closed = closed_loop_rhs(params, dgu, load, (i_t, v), 0.0)
        diff = open_loop - closed
        il = zip_current(load, v)
        scale = np.array([
            abs(dgu.r_t * i_t) + abs(v) + abs(u),
            abs(i_t) + abs(il),
        ])
        rel.append(np.abs(diff) / np.maximum(scale, 1e-300))
        absolute.append(np.abs(diff) / np.array([dgu.l_t, dgu.c_t]))
    rel = np.array(rel)
    absolute = np.array(absolute)
    return MatchingReport(
        max_residual=float(rel.max()),
        max_abs_residual=absolute.max(axis=0),
        j12=1.0,
        it_star=it_star,
        residuals=rel,
    )


@dataclass(frozen=True)
class PassivityReport:
    r1_positive: bool
    r2_min: float
    r2_pointwise_positive: bool
    conservative_lhs: float
    p_l: float
    v_range: tuple[float, float]

    @property
    def margin(self) -> float:
        """``0.49 Y_L V0^2 - P_L`` (threshold fraction squared in general)."""
        return self.conservative_lhs - self.p_l

    @property
    def conservative_ok(self) -> bool:
        return self.margin > 0

    @property
    def passed(self) -> bool:
        return self.r1_positive and self.conservative_ok

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "r1_positive": self.r1_positive,
            "r2_min": self.r2_min,
            "r2_pointwise_positive": self.r2_pointwise_positive,
            "conservative_lhs": self.conservative_lhs,
            "p_l": self.p_l,
            "margin": self.margin,
            "v_range": list(self.v_range),
        }


def check_strict_passivity(params: ControllerParams, load: ZipLoad, v_range=None,
                           n_grid: int = 201) -> PassivityReport:
    """Sufficient conditions for a strictly passive closed-loop DGU.

    Pass requires ``r1 > 0`` and the conservative load test
    ``(0.7 V0)^2 Y_L > P_L``; the pointwise ``r2 > 0`` scan over ``v_range``
    is reported alongside.
    """
    vt = load.v_threshold
    if v_range is None:
        v_range = (vt, 2.0 * load.v_nominal)
    v_lo, v_hi = float(v_range[0]), float(v_range[1])
    if v_lo < vt * (1 - 1e-12):
        raise ValueError(f"v_range must start at or above {vt:g} V, got {v_lo:g}")
    if v_hi < v_lo:
        raise ValueError("v_range upper bound below lower bound")
    grid = np.linspace(v_lo, v_hi, n_grid)
    if params.v_ref >= vt:
        r2 = load.y_l - load.p_l / (grid * params.v_ref)
        r2_min = float(r2.min())
    else:
        r2_min = float("-inf")
    return PassivityReport(
        r1_positive=params.r1 > 0,
        r2_min=r2_min,
        r2_pointwise_positive=r2_min > 0,
        conservative_lhs=load.threshold_fraction ** 2 * load.y_l * load.v_nominal ** 2,
        p_l=load.p_l,
        v_range=(v_lo, v_hi),
    )


def no_ia_offset_prediction(r1: float, d: float) -> float:
    """Steady-state voltage error ``r1 * d`` without integral action (load neglected)."""
    return r1 * d


def ia_equilibrium(params: ControllerParams, dgu: DguParams, load: ZipLoad, i_n: float) -> np.ndarray:
    """Closed-loop equilibrium ``(Lt It*, Ct V*, xi*)`` under a constant net current."""
    il_ref = zip_current(load, params.v_ref)
    xi = (il_ref + i_n - feedforward_current(params, load)) / params.k_i
    return np.array([dgu.l_t * (il_ref + i_n), dgu.c_t * params.v_ref, xi])
