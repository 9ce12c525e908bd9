"""Command-line entry point ``phsgrid``.

Exit codes: 0 success, 1 passivity certificate failed, 2 invalid scenario
or arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from phsgrid.metrics import certificates, compute_metrics, read_trajectory, write_outputs
from phsgrid.network import SimulationError, simulate
from phsgrid.phs_core import DomainError
from phsgrid.scenario import ScenarioError, load_scenario
from phsgrid.steady_state import ConvergenceError, steady_state_newton, steady_state_with_ia

EXIT_OK, EXIT_CERT, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("phsgrid")


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    certs = certificates(sc)
    if certs["certificate"] == "fail":
        log.warning("scenario %s fails the strict passivity certificate; simulating anyway", sc.name)
    out_dir = Path(args.out) if args.out else Path(sc.output.dir)
    dt = args.dt if args.dt is not None else sc.settings.dt
    if not dt > 0:
        raise ScenarioError("--dt", "must be > 0")
    start = time.perf_counter()
    series = simulate(sc, dt=dt, decimation=args.decimation)
    log.info("simulated %s: %d samples in %.2f s", sc.name, len(series.t), time.perf_counter() - start)
    metrics = compute_metrics(series, sc)
    extra = {
        "scenario": sc.name,
        "dt": dt,
        "decimation": args.decimation or sc.settings.decimation,
        "certificate": certs["certificate"],
        "certificates": certs["checks"],
    }
    paths = {"csv": out_dir / sc.output.csv, "summary": out_dir / sc.output.summary}
    write_outputs(series, metrics, paths, extra)
    print(f"wrote {paths['csv']} and {paths['summary']}")
    return EXIT_CERT if certs["certificate"] == "fail" else EXIT_OK


def _cmd_check(args) -> int:
    sc = load_scenario(args.scenario)
    certs = certificates(sc)
    for c in certs["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} DGU {c['dgu']}: Y={c['y_l']:.6g} S, P={c['p_l']:.6g} W, "
              f"margin {c['margin']:.6g} W, r2_min {c['r2_min']:.6g} S")
    print(f"certificate: {certs['certificate']}")
    return EXIT_OK if certs["certificate"] == "pass" else EXIT_CERT


def _cmd_steady(args) -> int:
    sc = load_scenario(args.scenario)
    at = sc.settings.t_start if args.at is None else args.at
    topo = sc.topology_at(at)
    if args.no_ia:
        ss = steady_state_newton(topo, with_ia=False)
    else:
        ss = steady_state_with_ia(topo.with_integral_action(True))
    doc = {"scenario": sc.name, "time": at, "integral_action": not args.no_ia, **ss.as_dict(topo)}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_metrics(args) -> int:
    sc = load_scenario(args.scenario)
    series = read_trajectory(args.csv)
    metrics = compute_metrics(series, sc)
    sys.stdout.write(json.dumps(metrics.as_dict(), indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p = argparse.ArgumentParser(prog="phsgrid", description="DC microgrid PHS simulator and IDA-PBC controller")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="simulate a scenario and write CSV + JSON summary")
    r.add_argument("scenario", help="scenario JSON file or bundled name (paper_fig6)")
    r.add_argument("--out", help="output directory (default: from scenario)")
    r.add_argument("--dt", type=float, help="integration step in seconds")
    r.add_argument("--decimation", type=int, help="log every N-th step")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check", parents=[common], help="passivity certificates only")
    c.add_argument("scenario")
    c.set_defaults(func=_cmd_check)

    s = sub.add_parser("steady", parents=[common], help="steady-state oracle solution")
    s.add_argument("scenario")
    s.add_argument("--no-ia", action="store_true", help="solve with integral action disabled (Newton)")
    s.add_argument("--at", type=float, help="configuration after all events up to this time")
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.set_defaults(func=_cmd_steady)

    m = sub.add_parser("metrics", parents=[common], help="recompute metrics from a trajectory CSV")
    m.add_argument("csv")
    m.add_argument("scenario")
    m.set_defaults(func=_cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SimulationError, DomainError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
