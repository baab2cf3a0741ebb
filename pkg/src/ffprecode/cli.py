"""Command-line entry point.

    ffprecode run --preset fig2c --trials 200 --out-dir results/fig2c
    ffprecode ledger --clusters 8 --nsc 1200 --slots 7
    ffprecode presets

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .airlink import PRECODERS
from .errors import InvalidInputError, NumericalError
from .harness import PRESETS, build_spec, compare_ledgers, format_table, load_config, run_experiment

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


def _sizes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad cluster sizes {text!r}") from exc


def _add_spec_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML/JSON config file; flags override it")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--bs-antennas", type=int, dest="bs_antennas")
    p.add_argument("--users", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--cluster-sizes", type=_sizes, dest="cluster_sizes",
                   help="comma-separated antennas per cluster, e.g. 32,32")
    p.add_argument("--precoder", action="append", choices=PRECODERS, dest="precoders",
                   help="repeatable")
    p.add_argument("--snr-start", type=float, dest="snr_start")
    p.add_argument("--snr-stop", type=float, dest="snr_stop")
    p.add_argument("--snr-step", type=float, dest="snr_step")
    p.add_argument("--trials", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--order", type=int, help="QAM order (4, 16, 64, 256)")
    p.add_argument("--nsc", type=int, help="subcarriers per frame in the ledger workload")
    p.add_argument("--slots", type=int, help="OFDM symbols per frame")
    p.add_argument("--ber-subcarriers", type=int, dest="ber_subcarriers",
                   help="subcarriers simulated per BER trial")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--workers", type=int, help="processes for the BER sweep")
    p.add_argument("--fabric-mode", choices=("serial", "threaded"), dest="fabric_mode")
    p.add_argument("--tree-broadcast", action="store_const", const=True, dest="tree_broadcast",
                   help="broadcast over the mirrored adder tree instead of a star")
    p.add_argument("--latency-alpha", type=float, dest="latency_alpha",
                   help="per-message latency model offset [s]")
    p.add_argument("--latency-per-byte", type=float, dest="latency_per_byte",
                   help="per-message latency model slope [s/byte]")


_SPEC_KEYS = (
    "bs_antennas", "users", "clusters", "cluster_sizes", "precoders", "snr_start", "snr_stop",
    "snr_step", "trials", "tau", "order", "nsc", "slots", "ber_subcarriers", "seed", "out_dir",
    "workers", "fabric_mode", "tree_broadcast", "latency_alpha", "latency_per_byte",
)


def _spec_from_args(args):
    config = load_config(args.config) if args.config else None
    overrides = {k: getattr(args, k) for k in _SPEC_KEYS}
    return build_spec(args.preset, config, **overrides)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffprecode", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="BER sweep plus message ledgers")
    _add_spec_flags(run)
    ledger = sub.add_parser("ledger", help="compare fabric message counts with closed forms")
    _add_spec_flags(ledger)
    sub.add_parser("presets", help="list the built-in presets")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "presets":
        for name, values in PRESETS.items():
            print(name, " ".join(f"{k}={v}" for k, v in values.items() if k != "precoders"))
        return EXIT_OK

    try:
        spec = _spec_from_args(args)
        if args.command == "ledger":
            if not any(p in ("pd-wf", "fd-wf") for p in spec.precoders):
                raise InvalidInputError("ledger needs --precoder pd-wf and/or fd-wf")
            rows = compare_ledgers(spec)
            print(format_table(rows))
            return EXIT_OK if all(r["match"] for r in rows) else EXIT_NUMERICAL
        result = run_experiment(spec)
    except InvalidInputError as exc:
        print(f"ffprecode: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"ffprecode: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    for r in result.reports:
        status = r.error or f"{r.ber:.3e}"
        print(f"{r.precoder:>10s}  {r.snr_db:7.2f} dB  {status}")
    for name, path in result.paths.items():
        print(f"wrote {path}", file=sys.stderr)
    if result.failures:
        print(f"ffprecode: {len(result.failures)} point(s) failed numerically", file=sys.stderr)
        return EXIT_NUMERICAL
    if not all(r["match"] for r in result.ledger_rows):
        print("ffprecode: ledger does not match the closed forms", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
