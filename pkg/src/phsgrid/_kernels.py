"""Closed-loop network right-hand side and fixed-step RK4 loops.

Two interchangeable backends share one packed parameter layout:

* ``numba``: scalar loops compiled with ``@njit``.
* ``numpy``: vectorised array code driven from a Python step loop.

``PHSGRID_BACKEND=numpy`` in the environment selects the fallback; numba is
used otherwise when it imports.  State layout is
``[It_1..It_N, V_1..V_N, xi_1..xi_N, I_1..I_M]``.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised through BACKEND
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _default_backend() -> str:
    requested = os.environ.get("PHSGRID_BACKEND", "").strip().lower()
    if requested in ("numpy", "python", "none"):
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(f"PHSGRID_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _default_backend()

# DGU parameter columns
RT, LT, CP, R1, KI, VREF, IFF, IA, Y, IBAR, P, VTHR, YEQ, IEXT, ON = range(15)
N_DGU_COLS = 15
# line parameter columns
LR, LL, LON = range(3)
N_LINE_COLS = 3

OK, NONFINITE, DOMAIN = 0, 1, 2


# --------------------------------------------------------------------- numba

@njit(cache=True)
def _load_current(v, y, ibar, p, vthr, yeq):
    if v >= vthr:
        return y * v + ibar + p / v
    return yeq * v


@njit(cache=True)
def rhs_numba(x, dpar, lpar, lnodes, out, inet):
    n = dpar.shape[0]
    m = lpar.shape[0]
    for i in range(n):
        inet[i] = dpar[i, IEXT] * dpar[i, ON]
    for k in range(m):
        if lpar[k, LON] != 0.0:
            cur = x[3 * n + k]
            inet[lnodes[k, 0]] += cur
            inet[lnodes[k, 1]] -= cur
    for i in range(n):
        it = x[i]
        v = x[n + i]
        xi = x[2 * n + i]
        rt = dpar[i, RT]
        r1 = dpar[i, R1]
        ev = dpar[i, VREF] - v
        u = (rt - r1) * it + dpar[i, VREF] + r1 * dpar[i, IFF]
        if dpar[i, IA] != 0.0:
            u += dpar[i, KI] * r1 * xi + dpar[i, KI] * dpar[i, LT] * ev
            out[2 * n + i] = ev
        else:
            out[2 * n + i] = 0.0
        il = _load_current(v, dpar[i, Y], dpar[i, IBAR], dpar[i, P], dpar[i, VTHR], dpar[i, YEQ])
        out[i] = (-rt * it - v + u) / dpar[i, LT]
        out[n + i] = (it - il - inet[i]) / dpar[i, CP]
    for k in range(m):
        if lpar[k, LON] != 0.0:
            vi = x[n + lnodes[k, 0]]
            vj = x[n + lnodes[k, 1]]
            out[3 * n + k] = (vi - vj - lpar[k, LR] * x[3 * n + k]) / lpar[k, LL]
        else:
            out[3 * n + k] = 0.0


@njit(cache=True)
def _rk4_step_numba(x, h, dpar, lpar, lnodes, k1, k2, k3, k4, tmp, inet):
    nx = x.shape[0]
    rhs_numba(x, dpar, lpar, lnodes, k1, inet)
    for j in range(nx):
        tmp[j] = x[j] + 0.5 * h * k1[j]
    rhs_numba(tmp, dpar, lpar, lnodes, k2, inet)
    for j in range(nx):
        tmp[j] = x[j] + 0.5 * h * k2[j]
    rhs_numba(tmp, dpar, lpar, lnodes, k3, inet)
    for j in range(nx):
        tmp[j] = x[j] + h * k3[j]
    rhs_numba(tmp, dpar, lpar, lnodes, k4, inet)
    for j in range(nx):
        x[j] = x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


@njit(cache=True)
def _state_ok(x, dpar, v_min):
    n = dpar.shape[0]
    for j in range(x.shape[0]):
        if not np.isfinite(x[j]):
            return NONFINITE
    for i in range(n):
        if x[n + i] < v_min:
            return DOMAIN
    return OK


@njit(cache=True)
def integrate_numba(x0, dt, n_steps, dt_last, decimation, phase, dpar, lpar, lnodes, v_min):
    """Advance ``n_steps`` of size ``dt`` plus an optional final step
    ``dt_last``.  Full step ``k`` (1-based) is logged when
    ``(phase + k) % decimation == 0``."""
    nx = x0.shape[0]
    n = dpar.shape[0]
    x = x0.copy()
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    tmp = np.empty(nx)
    inet = np.empty(n)
    first = (decimation - phase % decimation) % decimation
    if first == 0:
        first = decimation
    n_log = 0
    if n_steps >= first:
        n_log = (n_steps - first) // decimation + 1
    log_x = np.empty((n_log, nx))
    log_k = np.empty(n_log, dtype=np.int64)
    idx = 0
    for k in range(1, n_steps + 1):
        _rk4_step_numba(x, dt, dpar, lpar, lnodes, k1, k2, k3, k4, tmp, inet)
        status = _state_ok(x, dpar, v_min)
        if status != OK:
            return x, log_x[:idx], log_k[:idx], status, k
        if (phase + k) % decimation == 0:
            log_x[idx, :] = x
            log_k[idx] = k
            idx += 1
    if dt_last > 0.0:
        _rk4_step_numba(x, dt_last, dpar, lpar, lnodes, k1, k2, k3, k4, tmp, inet)
        status = _state_ok(x, dpar, v_min)
        if status != OK:
            return x, log_x[:idx], log_k[:idx], status, n_steps + 1
    return x, log_x[:idx], log_k[:idx], OK, 0


# --------------------------------------------------------------------- numpy

class NumpyRhs:
    """Vectorised twin of :func:`rhs_numba` with precomputed incidence."""

    def __init__(self, dpar: np.ndarray, lpar: np.ndarray, lnodes: np.ndarray):
        self.n = dpar.shape[0]
        self.m = lpar.shape[0]
        d = dpar.T
        self.rt, self.lt, self.cp = d[RT], d[LT], d[CP]
        self.r1, self.ki, self.vref = d[R1], d[KI], d[VREF]
        self.ia = d[IA] != 0.0
        self.y, self.ibar, self.p = d[Y], d[IBAR], d[P]
        self.vthr, self.yeq = d[VTHR], d[YEQ]
        self.iext = d[IEXT] * d[ON]
        self.u0 = self.vref + self.r1 * d[IFF]
        self.lon = lpar[:, LON] != 0.0
        self.lr, self.ll = lpar[:, LR], lpar[:, LL]
        inc = np.zeros((self.n, self.m))
        for k in range(self.m):
            if self.lon[k]:
                inc[lnodes[k, 0], k] += 1.0
                inc[lnodes[k, 1], k] -= 1.0
        self.incidence = inc

    def load_current(self, v):
        hi = v >= self.vthr
        safe_v = np.where(hi, v, 1.0)
        return np.where(hi, self.y * v + self.ibar + self.p / safe_v, self.yeq * v)

    def control(self, it, v, xi):
        u = (self.rt - self.r1) * it + self.u0
        return u + np.where(self.ia, self.ki * self.r1 * xi + self.ki * self.lt * (self.vref - v), 0.0)

    def net_current(self, il):
        return self.iext + self.incidence @ il

    def __call__(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        it, v, xi, il = x[:n], x[n:2 * n], x[2 * n:3 * n], x[3 * n:]
        u = self.control(it, v, xi)
        inet = self.net_current(il)
        out = np.empty_like(x)
        out[:n] = (-self.rt * it - v + u) / self.lt
        out[n:2 * n] = (it - self.load_current(v) - inet) / self.cp
        out[2 * n:3 * n] = np.where(self.ia, self.vref - v, 0.0)
        out[3 * n:] = np.where(self.lon, (self.incidence.T @ v - self.lr * il) / self.ll, 0.0)
        return out


def rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _state_ok_numpy(x, n, v_min):
    if not np.all(np.isfinite(x)):
        return NONFINITE
    if np.any(x[n:2 * n] < v_min):
        return DOMAIN
    return OK


def integrate_numpy(x0, dt, n_steps, dt_last, decimation, phase, dpar, lpar, lnodes, v_min):
    f = NumpyRhs(dpar, lpar, lnodes)
    n = dpar.shape[0]
    x = np.array(x0, dtype=float)
    logs, ks = [], []
    for k in range(1, n_steps + 1):
        x = rk4_step(f, x, dt)
        status = _state_ok_numpy(x, n, v_min)
        if status != OK:
            return x, _stack(logs, x), np.array(ks, dtype=np.int64), status, k
        if (phase + k) % decimation == 0:
            logs.append(x.copy())
            ks.append(k)
    if dt_last > 0.0:
        x = rk4_step(f, x, dt_last)
        status = _state_ok_numpy(x, n, v_min)
        if status != OK:
            return x, _stack(logs, x), np.array(ks, dtype=np.int64), status, n_steps + 1
    return x, _stack(logs, x), np.array(ks, dtype=np.int64), OK, 0


def _stack(logs, x):
    if logs:
        return np.array(logs)
    return np.empty((0, x.shape[0]))


def integrate(x0, dt, n_steps, dt_last, decimation, phase, dpar, lpar, lnodes, v_min,
              backend: str | None = None):
    backend = backend or BACKEND
    args = (np.ascontiguousarray(x0, dtype=float), float(dt), int(n_steps), float(dt_last),
            int(decimation), int(phase), np.ascontiguousarray(dpar, dtype=float),
            np.ascontiguousarray(lpar, dtype=float).reshape(-1, N_LINE_COLS),
            np.ascontiguousarray(lnodes, dtype=np.int64).reshape(-1, 2), float(v_min))
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return integrate_numba(*args)
    if backend == "numpy":
        return integrate_numpy(*args)
    raise ValueError(f"unknown backend {backend!r}")
