"""Render cirlab's CSV outputs as SVG figures.

Strictly a view layer: every plotted number is a CSV cell or a value carried
on the FigureSpec. Nothing is recomputed here, and the style block plus a
fixed ``svg.hashsalt`` make repeated renders of the same inputs
byte-identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

KINDS = ("sample_paths", "rate_vs_sigma", "convergence")

TRAJECTORY_COLUMNS = ("t", "x", "step_kind", "dt")
RESULTS_COLUMNS = (
    "scheme", "sigma", "dt_max", "l1", "l1_stderr", "l2", "l2_stderr",
    "avg_dt", "soft_zero_fraction", "num_paths", "status",
)
RATES_COLUMNS = ("scheme", "sigma", "norm", "slope", "slope_stderr", "intercept")

PLOTTABLE_STATUSES = {"ok", "ok_mostly_ode"}

# SVG element ids (searchable in the output, used by the tests).
SOFT_ZERO_GID = "soft-zero-steps"
LANDMARK_GID = "sigma-landmark"
CURVE_GID = "curve"

_RC = {
    "svg.hashsalt": "cir-figures",
    "figure.figsize": (6.4, 4.8),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "legend.fontsize": 8,
}


class FigureDataError(ValueError):
    """Input CSVs do not carry what the requested figure needs."""


@dataclass(frozen=True)
class FigureSpec:
    """What to draw, from which CSVs, to which file.

    ``landmarks`` are sigma values to mark with vertical lines on
    rate-vs-sigma axes. ``x_zero`` and ``guard_level`` are step-size levels
    to mark with horizontal lines on the sample-path step panel; they are
    annotations supplied by the caller, never derived here.
    """

    kind: str
    inputs: tuple[str, ...]
    output: str
    landmarks: tuple[float, ...] = ()
    x_zero: float | None = None
    guard_level: float | None = None
    norm: str = "l2"
    sigma: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise FigureDataError(
                f"unknown figure kind {self.kind!r}; expected one of {KINDS}"
            )
        if not self.inputs:
            raise FigureDataError("at least one input CSV is required")
        if self.norm not in ("l1", "l2"):
            raise FigureDataError(f"norm must be 'l1' or 'l2', got {self.norm!r}")


def _read_rows(path: str, required: tuple[str, ...]) -> list[dict[str, str]]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FigureDataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or ()
        missing = [c for c in required if c not in header]
        if missing:
            raise FigureDataError(
                f"{path}: missing column(s) {', '.join(missing)} "
                f"(header: {', '.join(header) or 'empty'})"
            )
        rows = list(reader)
    if not rows:
        raise FigureDataError(f"{path}: no data rows")
    return rows


def _column(rows: list[dict[str, str]], name: str) -> list[float]:
    return [float(r[name]) for r in rows]


def _save(fig, spec: FigureSpec) -> str:
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(out)


def plot_sample_paths(spec: FigureSpec) -> str:
    """Two panels per run: the state on top, step sizes (log scale) below.

    Steps taken by the deterministic soft-zero flow are overmarked with
    circles; the step panel carries horizontal lines at the configured
    ``x_zero`` and ``guard_level`` step-size levels when given.
    """
    with plt.rc_context(_RC):
        fig, (ax_x, ax_dt) = plt.subplots(
            2, 1, sharex=True, figsize=(6.4, 5.6), height_ratios=[2, 1]
        )
        for k, path in enumerate(spec.inputs):
            rows = _read_rows(path, TRAJECTORY_COLUMNS)
            t = _column(rows, "t")
            x = _column(rows, "x")
            dt = _column(rows, "dt")
            kinds = [r["step_kind"] for r in rows]
            label = Path(path).stem
            ax_x.plot(t, x, label=label, gid=f"{CURVE_GID}-state-{k}")
            steps = [(ti, di) for ti, di, ki in zip(t, dt, kinds) if ki != "init"]
            if steps:
                ax_dt.plot(
                    [s[0] for s in steps],
                    [s[1] for s in steps],
                    label=label,
                    gid=f"{CURVE_GID}-steps-{k}",
                )
            ode = [
                (ti, di)
                for ti, di, ki in zip(t, dt, kinds)
                if ki == "soft_zero_ode"
            ]
            if ode:
                ax_dt.scatter(
                    [s[0] for s in ode],
                    [s[1] for s in ode],
                    s=18,
                    facecolors="none",
                    edgecolors="black",
                    zorder=3,
                    gid=f"{SOFT_ZERO_GID}-{k}",
                    label="soft-zero step" if k == 0 else None,
                )
        if spec.x_zero is not None:
            ax_dt.axhline(
                spec.x_zero, color="gray", linestyle=":", gid="level-x-zero"
            )
        if spec.guard_level is not None:
            ax_dt.axhline(
                spec.guard_level, color="gray", linestyle="--", gid="level-guard"
            )
        ax_dt.set_yscale("log")
        ax_x.set_ylabel("X(t)")
        ax_dt.set_ylabel("step size")
        ax_dt.set_xlabel("t")
        ax_x.legend(loc="best")
        fig.align_ylabels()
        return _save(fig, spec)


def plot_rates(spec: FigureSpec) -> str:
    """Fitted slope against sigma, one curve per scheme, stderr error bars."""
    if len(spec.inputs) != 1:
        raise FigureDataError("rate_vs_sigma takes exactly one rates CSV")
    rows = [
        r
        for r in _read_rows(spec.inputs[0], RATES_COLUMNS)
        if r["norm"] == spec.norm
    ]
    if not rows:
        raise FigureDataError(
            f"{spec.inputs[0]}: no rows with norm={spec.norm!r}"
        )
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for scheme in sorted({r["scheme"] for r in rows}):
            group = sorted(
                (r for r in rows if r["scheme"] == scheme),
                key=lambda r: float(r["sigma"]),
            )
            container = ax.errorbar(
                [float(r["sigma"]) for r in group],
                [float(r["slope"]) for r in group],
                yerr=[float(r["slope_stderr"]) for r in group],
                marker="o",
                markersize=3,
                capsize=2,
                label=scheme,
            )
            container.lines[0].set_gid(f"{CURVE_GID}-rate-{scheme}")
        for k, lm in enumerate(spec.landmarks):
            ax.axvline(
                lm, color="gray", linestyle=":", zorder=0,
                gid=f"{LANDMARK_GID}-{k}",
            )
        ax.set_xlabel("sigma")
        ax.set_ylabel(f"fitted {spec.norm.upper()} rate")
        ax.legend(loc="best")
        return _save(fig, spec)


def plot_convergence(spec: FigureSpec) -> str:
    """Log-log strong error against dt_max with batch-means error bars.

    Plots rows whose status is ok-like; an optional sigma filter narrows a
    multi-sigma results file down to one panel's worth of curves.
    """
    if len(spec.inputs) != 1:
        raise FigureDataError("convergence takes exactly one results CSV")
    rows = [
        r
        for r in _read_rows(spec.inputs[0], RESULTS_COLUMNS)
        if r["status"] in PLOTTABLE_STATUSES
    ]
    if spec.sigma is not None:
        rows = [
            r
            for r in rows
            if math.isclose(float(r["sigma"]), spec.sigma, rel_tol=1e-9)
        ]
    if not rows:
        raise FigureDataError(
            f"{spec.inputs[0]}: no plottable rows"
            + (f" at sigma={spec.sigma!r}" if spec.sigma is not None else "")
        )
    err_col, stderr_col = spec.norm, f"{spec.norm}_stderr"
    sigmas = sorted({float(r["sigma"]) for r in rows})
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for scheme, sigma in sorted(
            {(r["scheme"], float(r["sigma"])) for r in rows}
        ):
            group = sorted(
                (
                    r
                    for r in rows
                    if r["scheme"] == scheme and float(r["sigma"]) == sigma
                ),
                key=lambda r: float(r["dt_max"]),
            )
            label = scheme if len(sigmas) == 1 else f"{scheme} (sigma={sigma:g})"
            container = ax.errorbar(
                [float(r["dt_max"]) for r in group],
                [float(r[err_col]) for r in group],
                yerr=[float(r[stderr_col]) for r in group],
                marker="o",
                markersize=3,
                capsize=2,
                label=label,
            )
            container.lines[0].set_gid(f"{CURVE_GID}-conv-{scheme}-{sigma:g}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("dt_max")
        ax.set_ylabel(f"{spec.norm.upper()} error")
        ax.legend(loc="best")
        return _save(fig, spec)


def render(spec: FigureSpec) -> str:
    """Dispatch on the figure kind; returns the written file path."""
    if spec.kind == "sample_paths":
        return plot_sample_paths(spec)
    if spec.kind == "rate_vs_sigma":
        return plot_rates(spec)
    return plot_convergence(spec)
