"""Wall-clock comparison of the numba and numpy integration backends.

Runs a slice of the bundled five-DGU scenario with each
backend, reports seconds per simulated second and per RK4 step, and checks
that both produce the same trajectory.

    python benchmarks/bench_backends.py --start 1.95 --horizon 0.2 --repeat 3
"""

from __future__ import annotations

import argparse
import dataclasses
import time

import numpy as np

from phsgrid import _kernels as K
from phsgrid.network import simulate
from phsgrid.scenario import load_scenario


def _slice(scenario, start, horizon):
    """Scenario cut to ``[start, start + horizon]``; the run starts from the
    steady state of the configuration in force at ``start``."""
    s = scenario.settings
    t_end = min(s.t_end, start + horizon)
    events = tuple(e for e in scenario.events if e.time <= t_end)
    return dataclasses.replace(scenario, events=events,
                               settings=dataclasses.replace(s, t_start=start, t_end=t_end))


def _time(scenario, backend, repeat):
    best, series = np.inf, None
    for _ in range(repeat):
        start = time.perf_counter()
        series = simulate(scenario, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best, series


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="paper_fig6")
    p.add_argument("--start", type=float, default=1.95, help="window start (default spans the plug-in)")
    p.add_argument("--horizon", type=float, default=0.2, help="simulated seconds per run")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    sc = _slice(load_scenario(args.scenario), args.start, args.horizon)
    span = sc.settings.t_end - sc.settings.t_start
    steps = int(round(span / sc.settings.dt))

    results = {}
    if K.HAVE_NUMBA:
        simulate(_slice(sc, sc.settings.t_start, 10 * sc.settings.dt), backend="numba")  # compile outside the timing
        results["numba"] = _time(sc, "numba", args.repeat)
    results["numpy"] = _time(sc, "numpy", args.repeat)

    print(f"scenario {sc.name}: {span:g} s simulated, {steps} RK4 steps, "
          f"{sc.topology.n_state} states, best of {args.repeat}")
    print(f"{'backend':>8} {'wall [s]':>10} {'us/step':>9} {'wall/sim':>9}")
    for name, (wall, _) in results.items():
        print(f"{name:>8} {wall:10.3f} {1e6 * wall / steps:9.2f} {wall / span:9.3f}")
    if "numba" in results:
        speedup = results["numpy"][0] / results["numba"][0]
        diff = float(np.max(np.abs(results["numba"][1].states - results["numpy"][1].states)))
        print(f"speed-up {speedup:.1f}x, max state difference {diff:.1e}")


if __name__ == "__main__":
    main()
