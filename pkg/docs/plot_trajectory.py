"""Plot bus voltages and total energy from a ``phsgrid run`` trajectory.

    phsgrid run paper_fig6 --out out/fig6
    python docs/plot_trajectory.py out/fig6/trajectory.csv --save out/fig6/voltages.png

Needs matplotlib, which is not a package dependency.
"""

import argparse
import sys

from phsgrid.metrics import read_trajectory


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("csv", help="trajectory.csv written by 'phsgrid run'")
    p.add_argument("--save", help="write the figure here instead of showing it")
    args = p.parse_args(argv)

    try:
        import matplotlib
        if args.save:
            matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is required: pip install matplotlib", file=sys.stderr)
        return 1

    series = read_trajectory(args.csv)
    fig, (ax_v, ax_h) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for name, col in series.columns.items():
        if name.startswith("V_"):
            ax_v.plot(series.t, col, label=f"DGU {name[2:]}")
    ax_v.set_ylabel("bus voltage [V]")
    ax_v.legend(ncol=3, fontsize="small")
    ax_h.semilogy(series.t, series.h_total)
    ax_h.set_ylabel("H_total [J]")
    ax_h.set_xlabel("time [s]")
    fig.tight_layout()

    if args.save:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()
    return 0


if __name__ == "__main__":
    sys.exit(main())
