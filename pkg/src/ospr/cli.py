"""Command-line entry point: ``ospr <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numerical
non-convergence, 130 interrupted (completed CSV rows are kept).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .errors import ConfigError, NonConvergenceError, UnsupportedFormatError
from .harness import COMMANDS, build_config

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_INTERRUPT = 0, 1, 2, 3, 130


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--seed", help="master RNG seed (u64)")
    g.add_argument("--runs", help="independent runs per point")
    g.add_argument("--out", help="output directory")
    g.add_argument("--threads", help="worker threads")
    e = p.add_argument_group("experiment overrides")
    e.add_argument("--target", help="'uniform', 'constant' or an 8-bit PGM/PNG path")
    e.add_argument("--size", help="builtin target size in pixels")
    e.add_argument("--scheme", choices=["binary-phase", "phase-only-continuous", "none"])
    e.add_argument("--sweep", help="subframe counts, e.g. '1,2,4,8'")
    e.add_argument("--subframes", help="subframes written by 'generate'")
    e.add_argument("--bins", help="histogram bins for 'ssim-components'")
    e.add_argument("--symmetrize", action="store_const", const=True, default=None,
                   help="average the target with its 180-degree rotation")
    e.add_argument("--mandrill", help="Mandrill image path for 'table1'")
    e.add_argument("--peppers", help="Peppers image path for 'table1'")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="ospr", description="OSPR holography simulation and statistics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write quantised subframes and the mean replay image (PGM)",
        "converge": "MSE/SSIM against subframe count with an A + B/N fit",
        "table1": "measured vs simulated bias and subframe variance per distribution",
        "ssim-components": "histograms of SSIM window statistics per subframe count",
        "ssim-converge": "measured SSIM against the SSIM models",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in (
        "seed", "runs", "out", "threads", "target", "size", "scheme", "sweep",
        "subframes", "bins", "symmetrize", "mandrill", "peppers")}
    try:
        config = build_config(args.config, overrides)
        COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"ospr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, UnsupportedFormatError) as exc:
        print(f"ospr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonConvergenceError as exc:
        print(f"ospr: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        print("ospr: interrupted; completed rows were kept", file=sys.stderr)
        return EXIT_INTERRUPT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
