"""Plot BER curves from one or more ``ber.csv`` files (needs matplotlib).

    python3 scripts/plot_ber.py results/fig2*/ber.csv -o fig2.png
"""

import argparse
import csv
import math
from collections import defaultdict
from pathlib import Path

STYLE = {"central-wf": "k-", "pd-wf": "bo", "fd-wf": "r--", "mrt": "g-.", "zf": "m:"}


def read_curves(path):
    curves = defaultdict(lambda: ([], []))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            snr, ber = curves[row["precoder"]]
            snr.append(float(row["snr_db"]))
            ber.append(float(row["ber"]))
    return dict(curves)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", default="ber.png")
    ap.add_argument("--floor", type=float, default=1e-5, help="lower y limit")
    args = ap.parse_args(argv)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(args.csv)
    cols = min(n, 3)
    rows = math.ceil(n / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(4.5 * cols, 3.6 * rows), squeeze=False)
    for ax, path in zip(axes.flat, args.csv):
        for precoder, (snr, ber) in read_curves(path).items():
            ber = [b if b > 0 else float("nan") for b in ber]
            ax.semilogy(snr, ber, STYLE.get(precoder, "-"), label=precoder, mfc="none")
        ax.set_title(Path(path).parent.name)
        ax.set_xlabel("SNR [dB]")
        ax.set_ylabel("uncoded BER")
        ax.set_ylim(args.floor, 1)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    for ax in list(axes.flat)[n:]:
        ax.set_visible(False)
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
