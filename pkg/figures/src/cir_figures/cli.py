"""Command-line entry point: ``figures <kind> --in ... --out ...``."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureDataError, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures",
        description="render cirlab CSV outputs as SVG figures",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument(
        "--in", dest="inputs", nargs="+", required=True, metavar="CSV",
        help="input CSV file(s); sample_paths accepts several trajectories",
    )
    parser.add_argument("--out", required=True, help="output SVG path")
    parser.add_argument(
        "--norm", choices=("l1", "l2"), default="l2",
        help="error norm column for rate/convergence figures",
    )
    parser.add_argument(
        "--sigma", type=float, default=None,
        help="restrict a convergence figure to one sigma value",
    )
    parser.add_argument(
        "--landmarks", type=float, nargs="*", default=(),
        metavar="SIGMA", help="sigma values to mark with vertical lines",
    )
    parser.add_argument(
        "--x-zero", type=float, default=None,
        help="step-size level for the lower reference line (sample_paths)",
    )
    parser.add_argument(
        "--guard-level", type=float, default=None,
        help="step-size level for the upper reference line (sample_paths)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind,
            inputs=tuple(args.inputs),
            output=args.out,
            landmarks=tuple(args.landmarks),
            x_zero=args.x_zero,
            guard_level=args.guard_level,
            norm=args.norm,
            sigma=args.sigma,
        )
        path = render(spec)
    except FigureDataError as exc:
        print(f"figures: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
