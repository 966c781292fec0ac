"""Figures over cirlab CSV outputs; a pure view layer, no numerics."""

from .figures import (
    FigureDataError,
    FigureSpec,
    KINDS,
    LANDMARK_GID,
    SOFT_ZERO_GID,
    plot_convergence,
    plot_rates,
    plot_sample_paths,
    render,
)

__all__ = [
    "FigureDataError",
    "FigureSpec",
    "KINDS",
    "LANDMARK_GID",
    "SOFT_ZERO_GID",
    "plot_convergence",
    "plot_rates",
    "plot_sample_paths",
    "render",
]
