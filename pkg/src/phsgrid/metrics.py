"""Per-event transient metrics and trajectory/summary files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from phsgrid import _kernels as K
from phsgrid.control import check_strict_passivity
from phsgrid.network import TimeSeries

SETTLING_BAND = 0.05  # V


@dataclass(frozen=True)
class DguWindowMetrics:
    dgu: int
    peak_deviation: float
    peak_percent: float
    settling_time: Optional[float]  # None: still outside the band at window end
    steady_state_error: float

    @property
    def settled(self) -> bool:
        return self.settling_time is not None


@dataclass(frozen=True)
class WindowMetrics:
    label: str
    t_start: float
    t_end: float
    dgus: tuple[DguWindowMetrics, ...]

    def for_dgu(self, dgu_id: int) -> DguWindowMetrics:
        for m in self.dgus:
            if m.dgu == dgu_id:
                return m
        raise KeyError(dgu_id)


@dataclass(frozen=True)
class Metrics:
    windows: tuple[WindowMetrics, ...]
    band: float = SETTLING_BAND

    def window_at(self, t_event: float) -> WindowMetrics:
        for w in self.windows:
            if abs(w.t_start - t_event) < 1e-12:
                return w
        raise KeyError(t_event)

    def as_dict(self) -> dict:
        return {"settling_band": self.band, "windows": [asdict(w) for w in self.windows]}


def _windows(scenario):
    s = scenario.settings
    starts = [s.t_start] + sorted({e.time for e in scenario.events if e.time > s.t_start})
    out = []
    for i, t0 in enumerate(starts):
        t1 = starts[i + 1] if i + 1 < len(starts) else s.t_end
        kinds = [e.kind for e in scenario.events if abs(e.time - t0) < 1e-12]
        label = "+".join(kinds) if kinds else "start"
        out.append((label, t0, t1, scenario.topology_at(t0)))
    return out


def compute_metrics(series, scenario, band: float = SETTLING_BAND) -> Metrics:
    """Signed peak deviation, settling time and end error of every connected
    bus voltage, per window between consecutive events.

    Only ``series.t`` and ``series.v`` are used; references and connectivity
    come from replaying the scenario events.  A window covers samples with
    ``t_start < t <= t_end`` (the first window includes ``t_start``).
    """
    t = np.asarray(series.t)
    v = np.asarray(series.v)
    windows = []
    for k, (label, t0, t1, topo) in enumerate(_windows(scenario)):
        lo = t >= t0 - 1e-12 if k == 0 else t > t0 + 1e-12
        mask = lo & (t <= t1 + 1e-12)
        if not np.any(mask):
            raise ValueError(f"no samples in window [{t0}, {t1}]")
        tw = t[mask]
        vref = topo.dgu_array[:, K.VREF]
        per = []
        for i, (d, on) in enumerate(zip(topo.dgus, topo.connected_dgus)):
            if not on:
                continue
            dev = v[mask, i] - vref[i]
            j = int(np.argmax(np.abs(dev)))
            outside = np.nonzero(np.abs(dev) >= band)[0]
            if outside.size == 0:
                settle = 0.0
            elif outside[-1] == dev.size - 1:
                settle = None
            else:
                settle = float(tw[outside[-1] + 1] - t0)
            per.append(DguWindowMetrics(
                dgu=d.id,
                peak_deviation=float(dev[j]),
                peak_percent=float(100.0 * dev[j] / vref[i]),
                settling_time=settle,
                steady_state_error=float(dev[-1]),
            ))
        windows.append(WindowMetrics(label, t0, t1, tuple(per)))
    return Metrics(tuple(windows), band)


def certificates(scenario) -> dict:
    """Passivity certificate for every (DGU, load, reference) combination
    that occurs in the scenario."""
    checks = []
    topos = [scenario.topology] + [scenario.topology_at(e.time) for e in scenario.events]
    seen = set()
    for topo in topos:
        for d in topo.dgus:
            key = (d.id, d.load, d.controller)
            if key in seen:
                continue
            seen.add(key)
            rep = check_strict_passivity(d.controller, d.load)
            checks.append({"dgu": d.id, "y_l": d.load.y_l, "i_bar": d.load.i_bar, "p_l": d.load.p_l,
                           "v_ref": d.controller.v_ref, **rep.as_dict()})
    ok = all(c["passed"] for c in checks)
    return {"certificate": "pass" if ok else "fail", "checks": checks}


# -------------------------------------------------------------------- files

def csv_header(series: TimeSeries) -> list[str]:
    ids = series.dgu_ids
    cols = ["t"]
    cols += [f"V_{i}" for i in ids]
    cols += [f"It_{i}" for i in ids]
    cols += [f"xi_{i}" for i in ids]
    cols += [f"Iline_{k}" for k in series.line_ids]
    cols += [f"u_{i}" for i in ids]
    cols += [f"IN_{i}" for i in ids]
    cols.append("H_total")
    return cols


def trajectory_table(series: TimeSeries) -> np.ndarray:
    return np.column_stack([series.t, series.v, series.i_t, series.xi, series.i_line,
                            series.u, series.i_n, series.h_total])


def write_outputs(series: TimeSeries, metrics: Metrics, paths: dict, extra: Optional[dict] = None) -> None:
    """Write the trajectory CSV (9 significant digits) to ``paths['csv']``
    and a JSON summary to ``paths['summary']``."""
    csv_path = Path(paths["csv"])
    summary_path = Path(paths["summary"])
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(csv_path, trajectory_table(series), fmt="%.9g", delimiter=",",
               header=",".join(csv_header(series)), comments="")
    summary = dict(extra or {})
    summary["metrics"] = metrics.as_dict()
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=False) + "\n")


@dataclass
class CsvSeries:
    """Columns of a trajectory CSV as arrays keyed by header name."""

    columns: dict[str, np.ndarray]

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]

    def group(self, prefix: str) -> np.ndarray:
        keys = [k for k in self.columns if k.startswith(prefix + "_")]
        return np.column_stack([self.columns[k] for k in keys])

    @property
    def v(self) -> np.ndarray:
        return self.group("V")

    @property
    def h_total(self) -> np.ndarray:
        return self.columns["H_total"]


def read_trajectory(path) -> CsvSeries:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
    return CsvSeries({name: data[:, i] for i, name in enumerate(header)})
