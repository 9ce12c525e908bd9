"""Equilibria of the closed-loop network: closed form under integral action,
damped Newton in general."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from phsgrid import _kernels as K
from phsgrid.network import Topology, assemble_rhs, net_currents, rhs_jacobian
from phsgrid.phs_core import DomainError


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SteadyState:
    i_t: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    i_line: np.ndarray
    residual: float
    method: str = "closed_form"
    iterations: int = 0

    def as_state(self) -> np.ndarray:
        return np.concatenate([self.i_t, self.v, self.xi, self.i_line])

    def as_dict(self, topology: Topology) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "dgus": [
                {"id": d.id, "connected": on, "i_t": float(self.i_t[i]), "v": float(self.v[i]),
                 "xi": float(self.xi[i])}
                for i, (d, on) in enumerate(zip(topology.dgus, topology.connected_dgus))
            ],
            "lines": [
                {"id": lid, "connected": on, "i": float(self.i_line[k])}
                for k, (lid, on) in enumerate(zip(topology.line_ids, topology.connected_lines))
            ],
        }


def _storage_scale(topology: Topology) -> np.ndarray:
    """Row weights turning the vector field into V / A / V / V units."""
    d = topology.dgu_array
    return np.concatenate([d[:, K.LT], d[:, K.CP], np.ones(topology.n_dgu),
                           topology.line_array[:, K.LL]])


def relative_residual(topology: Topology, x) -> float:
    """``max |storage * f(x)| / max(1, max |x_phys|)``."""
    x = np.asarray(x, dtype=float)
    f = assemble_rhs(topology, x) * _storage_scale(topology)
    return float(np.max(np.abs(f)) / max(1.0, float(np.max(np.abs(x)))))


def steady_state_with_ia(topology: Topology) -> SteadyState:
    """Closed-form equilibrium when every controller integrates the voltage
    error: all buses sit at their references."""
    d = topology.dgu_array
    if not np.all(d[:, K.IA] != 0.0):
        raise ValueError("closed form requires integral action on every DGU")
    v = d[:, K.VREF].copy()
    i_line = np.zeros(topology.n_line)
    for k, ((a, b), on) in enumerate(zip(topology.line_nodes, topology.connected_lines)):
        if on:
            i_line[k] = (v[a] - v[b]) / topology.lines[k].r
    i_n = net_currents(topology, i_line) + d[:, K.IEXT] * d[:, K.ON]
    il = topology.vector_field.load_current(v)
    i_t = il + i_n
    xi = (il + i_n - d[:, K.IFF]) / d[:, K.KI]
    x = np.concatenate([i_t, v, xi, i_line])
    return SteadyState(i_t, v, xi, i_line, relative_residual(topology, x))


def _default_guess(topology: Topology) -> np.ndarray:
    f = topology.vector_field
    v = topology.dgu_array[:, K.VREF].copy()
    return np.concatenate([f.load_current(v), v, np.zeros(topology.n_dgu), np.zeros(topology.n_line)])


def steady_state_newton(topology: Topology, with_ia: Optional[bool] = True, initial_guess=None,
                        tol: float = 1e-10, max_iter: int = 50) -> SteadyState:
    """Damped Newton on the assembled vector field.

    ``with_ia`` forces integral action on or off in every controller;
    ``None`` keeps each controller's own setting.  Integrator states of
    controllers without integral action are dropped from the unknowns and
    reported as zero; the solution then carries the steady-state voltage
    offset.
    """
    topo = topology if with_ia is None else topology.with_integral_action(with_ia)
    x = _default_guess(topo) if initial_guess is None else np.array(initial_guess, dtype=float)
    if x.shape != (topo.n_state,):
        raise ValueError(f"initial guess must have length {topo.n_state}")
    _, v0, _, _ = topo.split(x)
    if np.any(~(v0 >= topo.v_min)):
        raise DomainError("initial guess has a bus voltage outside the domain")
    n = topo.n_dgu
    active = np.ones(topo.n_state, dtype=bool)
    ia = topo.dgu_array[:, K.IA] != 0.0
    active[2 * n:3 * n] = ia
    x[2 * n:3 * n][~ia] = 0.0
    lon = np.array(topo.connected_lines, dtype=bool)
    active[3 * n:] = lon
    x[3 * n:][~lon] = 0.0
    scale = _storage_scale(topo)

    def residual_vec(z):
        return (assemble_rhs(topo, z) * scale)[active]

    def norm(z):
        return float(np.max(np.abs(residual_vec(z)))) / max(1.0, float(np.max(np.abs(z))))

    res = norm(x)
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise ConvergenceError(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})")
        jac = (rhs_jacobian(topo, x) * scale[:, None])[np.ix_(active, active)]
        try:
            step = np.linalg.solve(jac, -residual_vec(x))
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular Jacobian") from exc
        lam = 1.0
        while True:
            trial = x.copy()
            trial[active] += lam * step
            _, vt, _, _ = topo.split(trial)
            if np.all(vt >= topo.v_min):
                trial_res = norm(trial)
                if trial_res < res or lam < 1e-6:
                    break
            elif lam < 1e-6:
                raise DomainError("Newton step cannot stay inside the voltage domain")
            lam *= 0.5
        x, res = trial, trial_res
        it += 1
    it_, v, xi, il = topo.split(x)
    return SteadyState(it_.copy(), v.copy(), xi.copy(), il.copy(), res, method="newton", iterations=it)


def steady_state_for(topology: Topology) -> SteadyState:
    """Closed form when every controller has integral action, Newton otherwise."""
    if np.all(topology.dgu_array[:, K.IA] != 0.0):
        return steady_state_with_ia(topology)
    return steady_state_newton(topology, with_ia=None)
