"""Command line entry point.

    adaptive-inl [--seed S] [--out DIR] [--config FILE] {single,grid,montecarlo,bench,rht} ...

Exit codes: 0 success, 1 invariant failure, 2 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import ConfigError, build_config, read_config_file

log = logging.getLogger("adaptive_inl")

RUNNERS = {
    "single": experiments.run_single,
    "grid": experiments.run_grid,
    "montecarlo": experiments.run_montecarlo,
    "bench": experiments.bench_selection,
    "rht": experiments.run_rht_compare,
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="root seed (64-bit unsigned)")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--config", default=default, help="key=value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true", default=default)


def _estimator_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("device and estimator")
    g.add_argument("--bits", type=int)
    g.add_argument("--noise", type=float, help="input-referred noise, LSB RMS")
    g.add_argument("--samples", type=int, help="conversions per sweep")
    g.add_argument("--iterations", type=int)
    g.add_argument("--sigma-unit", type=float, help="unit-capacitor relative std")
    g.add_argument("--sigma-prior", type=float)
    g.add_argument("--tau", type=float, help="NIS inflation threshold")
    g.add_argument("--alpha", type=float, help="covariance inflation factor")
    g.add_argument("--r", type=float, help="measurement variance override, LSB^2")
    g.add_argument("--extra-bits", type=int, help="stimulus DAC bits beyond the ADC")
    g.add_argument("--half-span", type=float, help="sweep half width, LSB")
    g.add_argument("--epsilon-p", type=float, help="stop once every edge std is below this")
    g.add_argument("--pipelined", action="store_const", const="true",
                   help="select the next code while the current sweep runs")
    g.add_argument("--workers", type=int, help="process pool size for multi-device modes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-inl", description=__doc__.split("\n\n")[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="mode", required=True)

    p = sub.add_parser("single", help="one device, trace and INL/DNL files")
    _global_flags(p, True)
    _estimator_flags(p)

    p = sub.add_parser("grid", help="convergence traces along one parameter axis")
    _global_flags(p, True)
    _estimator_flags(p)
    p.add_argument("--resolutions", help="comma separated, e.g. 10,12,14")
    p.add_argument("--sample-counts", help="comma separated sweep sizes")
    p.add_argument("--noise-levels", help="comma separated noise levels (LSB RMS)")

    p = sub.add_parser("montecarlo", help="reference vs estimated INL peaks over many devices")
    _global_flags(p, True)
    _estimator_flags(p)
    p.add_argument("--devices", type=int)
    p.add_argument("--pass-limit", type=float, help="INL limit for yield classification, LSB")

    p = sub.add_parser("bench", help="code-selection timing per resolution")
    _global_flags(p, True)
    _estimator_flags(p)
    p.add_argument("--resolutions", help="comma separated")
    p.add_argument("--warmup", type=int)
    p.add_argument("--acquisition-rate", type=float, help="samples per second for the time model")

    p = sub.add_parser("rht", help="compare against a ramp histogram test")
    _global_flags(p, True)
    _estimator_flags(p)
    p.add_argument("--hpc", type=int, help="hits per code of the histogram test")
    return parser


_NOT_CONFIG = {"mode", "config", "verbose"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = build_config(args.mode, file_values, flags)
        RUNNERS[args.mode](cfg)
    except experiments.InvariantError as exc:
        print(f"adaptive-inl: invariant violated: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"adaptive-inl: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"adaptive-inl: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
