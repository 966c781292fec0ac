"""Shared Brownian driver tabulated on a fixed fine grid.

Every scheme, coarse or adaptive, consumes increments of one and the same
Wiener path per ``(seed, path_index)`` through this module: a coarse step over
fine cells [i, j) sees exactly the sum of the fine increments, which is what
makes candidate/reference error differences measure discretization error
rather than sampling noise.

Streams come from the Philox counter-based generator keyed by
``(seed, path_index)``, so the numbers drawn for one path never depend on how
many paths exist, in which order they are generated, or which thread asks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

__all__ = ["WienerGrid", "generate", "snap_to_grid", "GRID_SNAP_RTOL"]

# Times within this fraction of dt_ref of an exact node snap to the node in
# either mode, so float jitter from k*dt_ref round-trips never shifts a cell.
GRID_SNAP_RTOL = 1e-9


@dataclass(frozen=True)
class WienerGrid:
    """One Brownian path stored as N(0, dt_ref) increments on a fine grid."""

    seed: int
    path_index: int
    dt_ref: float
    horizon: float
    increments: np.ndarray

    @property
    def num_cells(self) -> int:
        return int(self.increments.shape[0])

    def increment(self, i: int, j: int) -> float:
        """Brownian increment over fine cells [i, j), by direct summation."""
        if not (isinstance(i, (int, np.integer)) and isinstance(j, (int, np.integer))):
            raise DomainError(f"cell indices must be integers, got {i!r}, {j!r}")
        if not (0 <= i <= j <= self.num_cells):
            raise DomainError(
                f"cell window [{i}, {j}) outside 0 <= i <= j <= {self.num_cells}"
            )
        if j == i:
            return 0.0
        if j == i + 1:
            return float(self.increments[i])
        return float(np.sum(self.increments[i:j]))


def generate(seed: int, path_index: int, dt_ref: float, horizon: float) -> WienerGrid:
    """Tabulate the Wiener path for one (seed, path_index) stream.

    The horizon must be an exact multiple of dt_ref (within float jitter);
    partial terminal cells are deliberately not supported.
    """
    if not (isinstance(seed, (int, np.integer)) and 0 <= seed < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if not (isinstance(path_index, (int, np.integer)) and 0 <= path_index < 2**64):
        raise ConfigError(f"path_index must be an unsigned 64-bit integer, got {path_index!r}")
    if not (math.isfinite(dt_ref) and dt_ref > 0.0):
        raise ConfigError(f"dt_ref must be positive, got {dt_ref!r}")
    if not (math.isfinite(horizon) and horizon > 0.0):
        raise ConfigError(f"horizon must be positive, got {horizon!r}")
    n_ref = int(round(horizon / dt_ref))
    if n_ref < 1 or abs(n_ref * dt_ref - horizon) > GRID_SNAP_RTOL * dt_ref:
        raise ConfigError(
            f"horizon {horizon!r} is not an exact multiple of dt_ref {dt_ref!r}"
        )
    key = np.array([seed, path_index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    increments = rng.normal(0.0, math.sqrt(dt_ref), size=n_ref)
    increments.flags.writeable = False
    return WienerGrid(
        seed=int(seed),
        path_index=int(path_index),
        dt_ref=dt_ref,
        horizon=horizon,
        increments=increments,
    )


def snap_to_grid(t_target: float, dt_ref: float, mode: str, n_max: int | None = None) -> int:
    """Snap a time or duration to a fine-grid cell count with floor/ceil semantics.

    Values within GRID_SNAP_RTOL*dt_ref of an exact node snap to that node in
    either mode. With ``n_max`` given, the result never exceeds it.
    """
    if mode not in ("floor", "ceil"):
        raise ConfigError(f"mode must be 'floor' or 'ceil', got {mode!r}")
    if dt_ref <= 0.0:
        raise ConfigError(f"dt_ref must be positive, got {dt_ref!r}")
    if not math.isfinite(t_target) or t_target < 0.0:
        raise DomainError(f"cannot snap negative or non-finite time {t_target!r}")
    quotient = t_target / dt_ref
    nearest = round(quotient)
    if abs(t_target - nearest * dt_ref) <= GRID_SNAP_RTOL * dt_ref:
        index = int(nearest)
    elif mode == "floor":
        index = int(math.floor(quotient))
    else:
        index = int(math.ceil(quotient))
    if n_max is not None:
        index = min(index, n_max)
    return max(index, 0)
