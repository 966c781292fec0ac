"""Command-line front end: path dumps, moment checks, campaigns, regimes.

Exit codes: 0 success, 1 configuration/usage error, 2 numerical-domain error
(for example a scheme requested outside its admissible regime). Every command
is deterministic given --seed; --threads and CIRLAB_THREADS trade wall-clock
only and never change output bytes. No plotting happens here: the `paths` and
`rates` commands write delimited files for the separate figure scripts.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .errors import CirLabError, ConfigError
from .experiment import (
    ExperimentConfig,
    moment_check,
    preset,
    run_campaign,
)
from .mesh import CONTROLLER_KINDS, build_controller
from .model import CirParams, classify_regime, sigma_landmarks, transform
from .schemes import SchemeId, run_trajectory
from .wiener import generate

__all__ = ["main"]

_SCHEME_TOKENS = tuple(s.value for s in SchemeId)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _add_model_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--kappa", type=float, default=2.0, help="mean-reversion speed")
    sub.add_argument("--theta", type=float, default=0.02, help="long-run level")
    sub.add_argument("--x0", type=float, default=0.0, help="initial state")
    sub.add_argument("--horizon", type=float, default=1.0, help="terminal time")


def _default_controller(scheme: SchemeId) -> str:
    return "soft_zero" if scheme is SchemeId.SPLIT_SOFT_ZERO else "fixed"


def _build_parser() -> _Parser:
    parser = _Parser(prog="cirlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    paths = sub.add_parser("paths", help="simulate trajectories and dump them as CSV")
    _add_model_args(paths)
    paths.add_argument("--sigma", type=float, required=True)
    paths.add_argument("--scheme", choices=_SCHEME_TOKENS, default="split_lie")
    paths.add_argument("--controller", choices=CONTROLLER_KINDS, default=None,
                       help="mesh controller (default: soft_zero for "
                            "split_soft_zero, fixed otherwise)")
    paths.add_argument("--dt-max", type=float, required=True)
    paths.add_argument("--dt-ref", type=float, default=1e-4)
    paths.add_argument("--rho", type=float, default=2.0)
    paths.add_argument("--num-paths", type=int, default=1)
    paths.add_argument("--seed", type=int, default=0)
    paths.add_argument("--out", default="cirlab_paths", help="output directory")
    paths.set_defaults(func=_cmd_paths)

    moments = sub.add_parser("moments", help="check the terminal-mean bound")
    _add_model_args(moments)
    moments.add_argument("--sigma", type=float, required=True)
    moments.add_argument("--scheme", choices=_SCHEME_TOKENS, default="split_lie")
    moments.add_argument("--controller", choices=CONTROLLER_KINDS, default=None)
    moments.add_argument("--dt-max", type=float, default=0.01)
    moments.add_argument("--dt-ref", type=float, default=None,
                         help="fine grid for adaptive controllers")
    moments.add_argument("--rho", type=float, default=2.0)
    moments.add_argument("--num-paths", type=int, default=1000)
    moments.add_argument("--seed", type=int, default=0)
    moments.set_defaults(func=_cmd_moments)

    rates = sub.add_parser("rates", help="run a convergence campaign")
    source = rates.add_mutually_exclusive_group()
    source.add_argument("--config", default=None, help="campaign config JSON")
    source.add_argument("--preset", choices=("desk", "paper"), default=None,
                        help="built-in config (desk: dt_ref=1e-4; paper: 1e-5)")
    rates.add_argument("--seed", type=int, default=None, help="override config seed")
    rates.add_argument("--out", default=None, help="output directory")
    rates.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: CIRLAB_THREADS or 1); "
                            "affects wall-clock only, never results")
    rates.set_defaults(func=_cmd_rates)

    regimes = sub.add_parser("regimes", help="classify sigma values by drift regime")
    regimes.add_argument("--kappa", type=float, default=2.0)
    regimes.add_argument("--theta", type=float, default=0.02)
    regimes.add_argument("--sigma", type=float, nargs="+", required=True)
    regimes.add_argument("--landmarks", action="store_true",
                         help="also classify the regime-boundary sigma values")
    regimes.set_defaults(func=_cmd_regimes)
    return parser


def _cmd_paths(args: argparse.Namespace) -> int:
    p = CirParams(kappa=args.kappa, theta=args.theta, sigma=args.sigma,
                  x0=args.x0, horizon=args.horizon)
    scheme = SchemeId(args.scheme)
    kind = args.controller or _default_controller(scheme)
    controller = build_controller(kind, args.dt_max, args.rho)
    if args.num_paths < 1:
        raise ConfigError(f"--num-paths must be at least 1, got {args.num_paths}")
    os.makedirs(args.out, exist_ok=True)
    written = []
    for m in range(args.num_paths):
        grid = generate(args.seed, m, args.dt_ref, p.horizon)
        traj = run_trajectory(scheme, controller, p, grid)
        name = os.path.join(args.out, f"{scheme.value}_{m:04d}.csv")
        lines = ["t,x,step_kind,dt"]
        lines.append(f"{_fmt(traj.times[0])},{_fmt(traj.states[0])},init,0")
        for k, step_kind in enumerate(traj.step_kinds):
            dt = traj.times[k + 1] - traj.times[k]
            lines.append(
                f"{_fmt(traj.times[k + 1])},{_fmt(traj.states[k + 1])},"
                f"{step_kind.value},{_fmt(dt)}"
            )
        with open(name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        written.append(name)
    print(f"wrote {len(written)} trajectory file(s) to {args.out}")
    return 0


def _cmd_moments(args: argparse.Namespace) -> int:
    p = CirParams(kappa=args.kappa, theta=args.theta, sigma=args.sigma,
                  x0=args.x0, horizon=args.horizon)
    scheme = SchemeId(args.scheme)
    controller = None
    if scheme is not SchemeId.EXACT_SAMPLER:
        kind = args.controller or _default_controller(scheme)
        controller = build_controller(kind, args.dt_max, args.rho)
    check = moment_check(scheme, controller, p, args.num_paths,
                         seed=args.seed, dt_ref=args.dt_ref)
    verdict = "true" if check.passed else "false"
    print(
        f"scheme={check.scheme} num_paths={check.num_paths} "
        f"mean={_fmt(check.mean_terminal)} stderr={_fmt(check.stderr)} "
        f"bound={_fmt(check.bound)} pass={verdict}"
    )
    return 0


def _resolve_threads(args: argparse.Namespace) -> int:
    if args.threads is not None:
        threads = args.threads
    else:
        raw = os.environ.get("CIRLAB_THREADS", "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"CIRLAB_THREADS must be an integer, got {raw!r}")
    if threads < 1:
        raise ConfigError(f"thread count must be at least 1, got {threads}")
    return threads


def _cmd_rates(args: argparse.Namespace) -> int:
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config!r} is not valid JSON: {exc}")
        cfg = ExperimentConfig.from_dict(doc)
    else:
        cfg = preset(args.preset or "desk")
    if args.seed is not None:
        cfg.seed = args.seed
    threads = _resolve_threads(args)
    out = args.out if args.out is not None else (cfg.output_dir or "cirlab_out")
    warnings = cfg.validate()
    for note in warnings:
        print(f"warning: {note}", file=sys.stderr)
    result = run_campaign(cfg, threads=threads, out_dir=out)
    print(
        f"wrote {result.results_path} ({len(result.rows)} rows), "
        f"{result.rates_path} ({len(result.fits)} fits), "
        f"{result.manifest_path}"
    )
    return 0


def _regime_line(p: CirParams) -> str:
    tp = transform(p)
    regime = classify_regime(p)
    notes = []
    if p.sigma == math.sqrt(p.kappa * p.theta):
        notes.append("kappa*theta == sigma^2")
    if p.sigma == math.sqrt(2.0 * p.kappa * p.theta):
        notes.append("2*kappa*theta == sigma^2")
    if tp.alpha == 0.0:
        notes.append("alpha == 0")
    feller = "true" if regime.feller else "false"
    line = f"alpha={tp.alpha:.6g}, feller={feller}, regime={regime.kind.value}"
    if notes:
        line += f" (boundary: {'; '.join(notes)})"
    return line


def _cmd_regimes(args: argparse.Namespace) -> int:
    sigmas = list(args.sigma)
    if args.landmarks:
        probe = CirParams(kappa=args.kappa, theta=args.theta, sigma=sigmas[0])
        for lm in sigma_landmarks(probe):
            if not any(math.isclose(lm, s, rel_tol=1e-12) for s in sigmas):
                sigmas.append(lm)
    prefix_each = len(sigmas) > 1
    for sigma in sigmas:
        p = CirParams(kappa=args.kappa, theta=args.theta, sigma=sigma)
        line = _regime_line(p)
        if prefix_each:
            line = f"sigma={sigma:.6g}: {line}"
        print(line)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CirLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
