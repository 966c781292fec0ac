"""Mesh controllers: fixed steps, the adaptive guard for negative transformed
drift, the soft-zero region, and the smooth heuristic shrink.

A controller is a pure function of the current state: ``propose(x, p, tp)``
returns the next step length together with the step's kind (stochastic, or a
deterministic soft-zero flow). Snapping proposals onto the shared Wiener grid
is the trajectory driver's job, not the controller's; controllers reason in
continuous time.

The guard rule ``dt = min(0.95 * x / (2*|alpha|), dt_max)`` keeps the
splitting radicand ``x + 2*alpha*dt`` at or above ``0.05 * x`` when alpha < 0.
The soft-zero region [0, x_zero) with ``x_zero = theta*(1 - e^{-kappa*dt_max})/rho``
replaces stochastic stepping near the origin with the exact mean-reversion
flow, whose exit time onto x_zero is available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

from .errors import ConfigError, DomainError
from .model import CirParams, TransformedParams

__all__ = [
    "StepKind",
    "StepProposal",
    "SoftZeroConfig",
    "next_dt_alpha_guard",
    "next_dt_soft_zero",
    "next_dt_heuristic",
    "Fixed",
    "AlphaGuard",
    "SoftZeroHybrid",
    "Heuristic",
    "MeshController",
    "CONTROLLER_KINDS",
    "build_controller",
]


class StepKind(Enum):
    STOCHASTIC = "stochastic"
    SOFT_ZERO_ODE = "soft_zero_ode"


@dataclass(frozen=True)
class StepProposal:
    dt: float
    kind: StepKind


@dataclass(frozen=True)
class SoftZeroConfig:
    """Soft-zero region [0, x_zero) for one mesh resolution."""

    rho: float
    x_zero: float

    @classmethod
    def for_mesh(cls, p: CirParams, dt_max: float, rho: float = 2.0) -> "SoftZeroConfig":
        if not (math.isfinite(rho) and rho > 1.0):
            raise ConfigError(f"rho must exceed 1, got {rho!r}")
        if not (math.isfinite(dt_max) and dt_max > 0.0):
            raise ConfigError(f"dt_max must be positive, got {dt_max!r}")
        x_zero = p.theta * (1.0 - math.exp(-p.kappa * dt_max)) / rho
        return cls(rho=rho, x_zero=x_zero)


def next_dt_alpha_guard(x: float, alpha: float, dt_max: float) -> float:
    """Largest step with radicand x + 2*alpha*dt >= 0.05*x, capped at dt_max.

    Only defined for alpha < 0. The state must be strictly positive: at the
    origin the guard has no admissible step, which is exactly the failure mode
    the soft-zero region exists to remove.
    """
    if not (math.isfinite(dt_max) and dt_max > 0.0):
        raise ConfigError(f"dt_max must be positive, got {dt_max!r}")
    if alpha >= 0.0:
        raise DomainError(f"guard is only defined for alpha < 0, got {alpha!r}")
    if x <= 0.0:
        raise DomainError(
            f"guard requires x > 0, got {x!r}: state reached the origin with the "
            "soft-zero region disabled"
        )
    return min(0.95 * x / (2.0 * abs(alpha)), dt_max)


def next_dt_soft_zero(x: float, p: CirParams, cfg: SoftZeroConfig) -> float:
    """Exact time for the flow u' = kappa*(theta - u) to carry x up to x_zero.

    Solving e^{-kappa*dt}*(x - theta) + theta = x_zero for dt gives
    dt = -log((x_zero - theta)/(x - theta)) / kappa. Requires 0 <= x < x_zero
    (and x_zero < theta, which rho > 1 guarantees structurally).
    """
    if not cfg.x_zero < p.theta:
        raise DomainError(
            f"x_zero {cfg.x_zero!r} must lie below theta {p.theta!r}"
        )
    if not 0.0 <= x < cfg.x_zero:
        raise DomainError(
            f"soft-zero step requires 0 <= x < x_zero ({cfg.x_zero!r}), got {x!r}"
        )
    return -math.log((cfg.x_zero - p.theta) / (x - p.theta)) / p.kappa


def next_dt_heuristic(x: float, dt_max: float) -> float:
    """Smooth step shrink near the origin: dt_max / (1 + 3*e^{-150*x}).

    Ranges over [dt_max/4, dt_max): exactly dt_max/4 at x = 0, approaching
    dt_max as the state leaves the origin region.
    """
    if not (math.isfinite(dt_max) and dt_max > 0.0):
        raise ConfigError(f"dt_max must be positive, got {dt_max!r}")
    if x < 0.0:
        raise DomainError(f"state must be nonnegative, got {x!r}")
    return dt_max / (1.0 + 3.0 * math.exp(-150.0 * x))


@dataclass(frozen=True)
class Fixed:
    """Constant step size; the workhorse mesh for the alpha >= 0 regimes."""

    dt: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")

    @property
    def dt_max(self) -> float:
        return self.dt

    def propose(self, x: float, p: CirParams, tp: TransformedParams) -> StepProposal:
        return StepProposal(self.dt, StepKind.STOCHASTIC)


@dataclass(frozen=True)
class AlphaGuard:
    """Adaptive guard alone, without the soft-zero region (diagnostic mode).

    Shrinks steps as the state approaches the origin and aborts, via the
    guard's domain error, once the state decays to where no positive step is
    admissible. For alpha >= 0 it degenerates to a fixed mesh at dt_max.
    """

    dt_max: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt_max) and self.dt_max > 0.0):
            raise ConfigError(f"dt_max must be positive, got {self.dt_max!r}")

    def propose(self, x: float, p: CirParams, tp: TransformedParams) -> StepProposal:
        if tp.alpha < 0.0:
            return StepProposal(next_dt_alpha_guard(x, tp.alpha, self.dt_max), StepKind.STOCHASTIC)
        return StepProposal(self.dt_max, StepKind.STOCHASTIC)


@dataclass(frozen=True)
class SoftZeroHybrid:
    """Soft-zero region below x_zero, adaptive guard above it while alpha < 0.

    Routing: x < x_zero takes one deterministic flow step that exits the
    region; otherwise the guard rule applies when alpha < 0, and a plain
    dt_max step when alpha >= 0.
    """

    dt_max: float
    rho: float = 2.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt_max) and self.dt_max > 0.0):
            raise ConfigError(f"dt_max must be positive, got {self.dt_max!r}")
        if not (math.isfinite(self.rho) and self.rho > 1.0):
            raise ConfigError(f"rho must exceed 1, got {self.rho!r}")

    def soft_zero(self, p: CirParams) -> SoftZeroConfig:
        return SoftZeroConfig.for_mesh(p, self.dt_max, self.rho)

    def propose(self, x: float, p: CirParams, tp: TransformedParams) -> StepProposal:
        cfg = self.soft_zero(p)
        if x < cfg.x_zero:
            return StepProposal(next_dt_soft_zero(x, p, cfg), StepKind.SOFT_ZERO_ODE)
        if tp.alpha < 0.0:
            return StepProposal(next_dt_alpha_guard(x, tp.alpha, self.dt_max), StepKind.STOCHASTIC)
        return StepProposal(self.dt_max, StepKind.STOCHASTIC)


@dataclass(frozen=True)
class Heuristic:
    """Smooth shrink rule; no hard positivity guarantee, kept for comparison."""

    dt_max: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt_max) and self.dt_max > 0.0):
            raise ConfigError(f"dt_max must be positive, got {self.dt_max!r}")

    def propose(self, x: float, p: CirParams, tp: TransformedParams) -> StepProposal:
        return StepProposal(next_dt_heuristic(x, self.dt_max), StepKind.STOCHASTIC)


MeshController = Union[Fixed, AlphaGuard, SoftZeroHybrid, Heuristic]

CONTROLLER_KINDS = ("fixed", "alpha_guard", "soft_zero", "heuristic")


def build_controller(kind: str, dt_max: float, rho: float = 2.0) -> MeshController:
    """Instantiate a controller from its config token."""
    if kind == "fixed":
        return Fixed(dt_max)
    if kind == "alpha_guard":
        return AlphaGuard(dt_max)
    if kind == "soft_zero":
        return SoftZeroHybrid(dt_max, rho)
    if kind == "heuristic":
        return Heuristic(dt_max)
    raise ConfigError(f"unknown controller kind {kind!r}; expected one of {CONTROLLER_KINDS}")
