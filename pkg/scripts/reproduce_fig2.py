"""Run the six BER presets (B=256 with C=2/4/8, and B=64/128/256 at B_c=32).

    python3 scripts/reproduce_fig2.py --trials 1000 --workers 4 --out-dir results
    python3 scripts/reproduce_fig2.py --only fig2c fig2d --trials 200

Each preset writes into ``<out-dir>/<preset>/``. Plot afterwards with
``scripts/plot_ber.py``.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from ffprecode.harness import PRESETS, build_spec, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--only", nargs="+", choices=sorted(PRESETS), default=sorted(PRESETS))
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--snr-start", type=float, default=-2.0)
    ap.add_argument("--snr-stop", type=float, default=20.0)
    ap.add_argument("--snr-step", type=float, default=1.0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    failed = 0
    for name in args.only:
        spec = build_spec(
            name,
            trials=args.trials,
            snr_start=args.snr_start,
            snr_stop=args.snr_stop,
            snr_step=args.snr_step,
            workers=args.workers,
            seed=args.seed,
            out_dir=str(Path(args.out_dir) / name),
        )
        t0 = time.perf_counter()
        result = run_experiment(spec)
        failed += not result.ok
        print(f"{name}: B={spec.bs_antennas} C={len(spec.sizes)} "
              f"{time.perf_counter() - t0:.1f}s -> {spec.out_dir}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
