"""Explicit port-Hamiltonian systems with quadratic storage.

A model is

    dx/dt = (J(x) - R(x)) dH/dx + g u + k d
        y = g^T dH/dx
        z = k^T dH/dx

with ``H(x) = 1/2 (x - x*)^T Q (x - x*)``.  Input maps are constant; all
concrete models in this package only need pointwise evaluation of ``J`` and
``R``, so those are callbacks rather than symbolic expressions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

PD_TOL = 1e-10


class DimensionError(ValueError):
    """Array shapes do not match the model."""


class DomainError(ValueError):
    """State lies outside the model's valid domain (e.g. non-positive voltage)."""


def _as_vector(x, n: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape[0] != n:
        raise DimensionError(f"{what} has length {arr.shape[0]}, expected {n}")
    return arr


@dataclass(frozen=True)
class QuadraticHamiltonian:
    """Shifted quadratic energy ``1/2 (x - x_star)^T Q (x - x_star)``."""

    q_matrix: np.ndarray
    x_star: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q_matrix, dtype=float))
        if q.shape[0] != q.shape[1]:
            raise DimensionError(f"Q must be square, got {q.shape}")
        scale = max(1.0, float(np.max(np.abs(q))))
        if np.max(np.abs(q - q.T)) > 1e-12 * scale:
            raise ValueError("Q is not symmetric")
        if np.min(np.linalg.eigvalsh(q)) <= 0.0:
            raise ValueError("Q is not positive definite")
        x_star = np.zeros(q.shape[0]) if self.x_star is None else _as_vector(self.x_star, q.shape[0], "x_star")
        object.__setattr__(self, "q_matrix", q)
        object.__setattr__(self, "x_star", x_star)

    @property
    def n(self) -> int:
        return self.q_matrix.shape[0]

    @classmethod
    def diagonal(cls, weights: Sequence[float], x_star=None) -> "QuadraticHamiltonian":
        return cls(np.diag(np.asarray(weights, dtype=float)), x_star)


def hamiltonian_value(h: QuadraticHamiltonian, x) -> float:
    """Stored energy in joules."""
    e = _as_vector(x, h.n, "x") - h.x_star
    return 0.5 * float(e @ h.q_matrix @ e)


def gradient(h: QuadraticHamiltonian, x) -> np.ndarray:
    """Co-state ``Q (x - x_star)``."""
    e = _as_vector(x, h.n, "x") - h.x_star
    return h.q_matrix @ e


def _always_valid(x: np.ndarray) -> Optional[str]:
    return None


@dataclass(frozen=True)
class PhsSystem:
    """Port-Hamiltonian model with state-dependent J and R.

    ``domain`` returns ``None`` for admissible states, otherwise a message
    explaining the violation.
    """

    n: int
    j_of_x: Callable[[np.ndarray], np.ndarray]
    r_of_x: Callable[[np.ndarray], np.ndarray]
    g: np.ndarray
    k: np.ndarray
    hamiltonian: QuadraticHamiltonian
    domain: Callable[[np.ndarray], Optional[str]] = field(default=_always_valid)
    name: str = "phs"

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(self.n, -1)
        k = np.asarray(self.k, dtype=float).reshape(self.n, -1)
        if self.hamiltonian.n != self.n:
            raise DimensionError("Hamiltonian dimension does not match n")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "k", k)

    @property
    def m(self) -> int:
        return self.g.shape[1]

    @property
    def n_dist(self) -> int:
        return self.k.shape[1]

    def check_domain(self, x: np.ndarray) -> None:
        msg = self.domain(x)
        if msg is not None:
            raise DomainError(f"{self.name}: {msg}")

    def matrices(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = _as_vector(x, self.n, "x")
        self.check_domain(x)
        j = np.atleast_2d(np.asarray(self.j_of_x(x), dtype=float))
        r = np.atleast_2d(np.asarray(self.r_of_x(x), dtype=float))
        return j, r


def rhs(sys: PhsSystem, x, u=None, d=None) -> np.ndarray:
    """State derivative ``(J - R) dH/dx + g u + k d``."""
    x = _as_vector(x, sys.n, "x")
    u = np.zeros(sys.m) if u is None else _as_vector(u, sys.m, "u")
    d = np.zeros(sys.n_dist) if d is None else _as_vector(d, sys.n_dist, "d")
    j, r = sys.matrices(x)
    return (j - r) @ gradient(sys.hamiltonian, x) + sys.g @ u + sys.k @ d


def outputs(sys: PhsSystem, x) -> tuple[np.ndarray, np.ndarray]:
    """Power-conjugate outputs ``(y, z)``."""
    co = gradient(sys.hamiltonian, _as_vector(x, sys.n, "x"))
    return sys.g.T @ co, sys.k.T @ co


def power_balance_residual(sys: PhsSystem, x, u=None, d=None) -> float:
    """``dH/dt - (u^T y + d^T z - dH^T R dH)``, identically zero for a PHS.

    The result is divided by the summed magnitude of the products that
    cancel, so that it is a relative quantity.
    """
    x = _as_vector(x, sys.n, "x")
    u = np.zeros(sys.m) if u is None else _as_vector(u, sys.m, "u")
    d = np.zeros(sys.n_dist) if d is None else _as_vector(d, sys.n_dist, "d")
    co = gradient(sys.hamiltonian, x)
    j, r = sys.matrices(x)
    y, z = outputs(sys, x)
    h_dot = float(co @ rhs(sys, x, u, d))
    supply = float(u @ y + d @ z)
    dissipation = float(co @ r @ co)
    a = np.abs(co)
    scale = float(a @ (np.abs(j) + np.abs(r)) @ a + np.abs(u) @ np.abs(y) + np.abs(d) @ np.abs(z))
    scale = max(scale, 1e-300)
    return (h_dot - (supply - dissipation)) / scale


@dataclass(frozen=True)
class StructureSample:
    skew_defect: float
    symmetry_defect: float
    min_eig_r: float

    @property
    def r_psd(self) -> bool:
        return self.min_eig_r >= -PD_TOL

    @property
    def r_pd(self) -> bool:
        return self.min_eig_r > PD_TOL


@dataclass(frozen=True)
class StructureReport:
    samples: list[StructureSample]

    @property
    def max_skew_defect(self) -> float:
        return max(s.skew_defect for s in self.samples)

    @property
    def max_symmetry_defect(self) -> float:
        return max(s.symmetry_defect for s in self.samples)

    @property
    def min_eig_r(self) -> float:
        return min(s.min_eig_r for s in self.samples)

    @property
    def r_psd(self) -> bool:
        return all(s.r_psd for s in self.samples)

    @property
    def r_pd(self) -> bool:
        return all(s.r_pd for s in self.samples)


def check_structure(sys: PhsSystem, samples) -> StructureReport:
    """Skewness of J, symmetry and definiteness of R at each sample.

    Defects are relative to the largest matrix entry (absolute when the
    matrix is zero).
    """
    out = []
    for x in samples:
        j, r = sys.matrices(x)
        js = max(1.0, float(np.max(np.abs(j))))
        rs = max(1.0, float(np.max(np.abs(r))))
        rsym = 0.5 * (r + r.T)
        out.append(
            StructureSample(
                skew_defect=float(np.max(np.abs(j + j.T))) / js,
                symmetry_defect=float(np.max(np.abs(r - r.T))) / rs,
                min_eig_r=float(np.min(np.linalg.eigvalsh(rsym))),
            )
        )
    return StructureReport(out)
