"""One-step maps for the CIR process and the trajectory driver.

Conventions shared by every map: the first argument is the current state
(original variable x, or the square-root variable y for the schemes that
integrate the transformed process), ``dt`` is the realized step length after
grid snapping, ``dW`` the Brownian increment over that step. State and noise
may be scalars or numpy arrays of equal shape; ``dt`` is always a scalar, so
transcendental factors are evaluated once per step and a batch of paths on a
shared mesh advances through exactly the same arithmetic as a single path.

Scheme catalogue:

* ``split_lie_step``: exact flow of the transformed drift for dt, Brownian
  kick, then mean-reversion decay, composed left to right. In the original
  variable: ``e^{-2*beta*dt} * (sqrt(x + 2*alpha*dt) + gamma*dW)^2``.
* ``split_strang_step``: symmetrized composition; in the original variable
  ``e^{-2*beta*dt} * (sqrt(x + alpha*dt) + gamma*dW)^2 + alpha*dt``.
* ``milstein_trunc_step``: truncated Milstein map in x; all square-root
  arguments and the reported state are clamped nonnegative. Serves as the
  reference scheme on the fine grid.
* ``fully_trunc_euler_step``: Euler on an unclamped auxiliary state whose
  drift/diffusion read the clamped value; the reported state is the positive
  part.
* ``drift_implicit_step``: positive root of the implicit square-root Euler
  update in y; requires alpha > 0 and beta*dt < 1.
* ``projected_euler_step``: explicit Euler in y with the state projected onto
  [N^{-1/4}, inf) before each step, N the total step count of the fixed mesh.
* ``soft_zero_ode_step``: exact mean-reversion flow, used inside the soft-zero
  region where stochastic stepping is switched off.
* exact sampler: not a discretization; draws the next state from the exact
  transition law (see ``model.exact_conditional_sample``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError, InadmissibleSchemeError
from .mesh import AlphaGuard, Fixed, MeshController, SoftZeroHybrid, StepKind
from .model import (
    CirParams,
    TransformedParams,
    conditional_mean,
    exact_conditional_sample,
    transform,
)
from .wiener import WienerGrid, snap_to_grid

__all__ = [
    "SchemeId",
    "SPLITTING_FAMILY",
    "LAMPERTI_STATE",
    "Trajectory",
    "split_lie_step",
    "split_strang_step",
    "milstein_trunc_step",
    "fully_trunc_euler_step",
    "drift_implicit_step",
    "projected_euler_step",
    "soft_zero_ode_step",
    "initial_state",
    "state_to_x",
    "apply_stochastic",
    "check_admissible",
    "sampler_stream",
    "run_trajectory",
]


class SchemeId(Enum):
    SPLIT_LIE = "split_lie"
    SPLIT_STRANG = "split_strang"
    SPLIT_SOFT_ZERO = "split_soft_zero"
    MILSTEIN_TRUNC = "milstein_trunc"
    FULLY_TRUNC_EULER = "fully_trunc_euler"
    DRIFT_IMPLICIT = "drift_implicit"
    PROJECTED_EULER = "projected_euler"
    EXACT_SAMPLER = "exact_sampler"


SPLITTING_FAMILY = frozenset(
    {SchemeId.SPLIT_LIE, SchemeId.SPLIT_STRANG, SchemeId.SPLIT_SOFT_ZERO}
)

# Schemes whose internal state is y = sqrt(x); reported states are squared.
LAMPERTI_STATE = frozenset({SchemeId.DRIFT_IMPLICIT, SchemeId.PROJECTED_EULER})

# Distinguishes the exact-sampler stream from the Wiener stream of the same
# (seed, path_index) key; any fixed 64-bit constant works.
_SAMPLER_SALT = np.uint64(0x9E3779B97F4A7C15)


def split_lie_step(x, dt: float, dW, tp: TransformedParams):
    """Lie composition: drift-root flow, noise kick, mean-reversion decay.

    The radicand x + 2*alpha*dt must stay nonnegative. For alpha < 0 that is
    the mesh controller's contract; a violation aborts the run rather than
    being clamped, because clamping would silently change the scheme.
    """
    radicand = x + (2.0 * tp.alpha) * dt
    if np.any(radicand < 0.0):
        raise DomainError(
            f"splitting radicand x + 2*alpha*dt went negative (alpha={tp.alpha!r}, "
            f"dt={dt!r}); the mesh controller admitted too large a step"
        )
    kicked = np.sqrt(radicand) + tp.gamma * dW
    return math.exp(-2.0 * tp.beta * dt) * kicked * kicked


def split_strang_step(x, dt: float, dW, tp: TransformedParams):
    """Strang composition: half drift flow, kick and decay, half drift flow."""
    radicand = x + tp.alpha * dt
    if np.any(radicand < 0.0):
        raise DomainError(
            f"splitting radicand x + alpha*dt went negative (alpha={tp.alpha!r}, "
            f"dt={dt!r}); the mesh controller admitted too large a step"
        )
    kicked = np.sqrt(radicand) + tp.gamma * dW
    return math.exp(-2.0 * tp.beta * dt) * kicked * kicked + tp.alpha * dt


def milstein_trunc_step(x, dt: float, dW, p: CirParams):
    """Truncated Milstein map; square roots and output clamped nonnegative."""
    half_sigma = 0.5 * p.sigma
    s2 = p.sigma * p.sigma
    root = np.sqrt(np.maximum(s2 * dt / 4.0, x)) + half_sigma * dW
    r1 = np.maximum(half_sigma * math.sqrt(dt), root)
    proposal = r1 * r1 + dt * (p.kappa * (p.theta - x) - s2 / 4.0)
    return np.maximum(proposal, 0.0)


def fully_trunc_euler_step(x_tilde, dt: float, dW, p: CirParams):
    """Advance the unclamped auxiliary state; report its positive part.

    Returns ``(next_x_tilde, next_x)``: the auxiliary state may be negative
    and must be carried between steps, while drift and diffusion only ever
    read the clamped value.
    """
    clamped = np.maximum(x_tilde, 0.0)
    next_aux = x_tilde + dt * p.kappa * (p.theta - clamped) + p.sigma * np.sqrt(clamped) * dW
    return next_aux, np.maximum(next_aux, 0.0)


def drift_implicit_step(y, dt: float, dW, tp: TransformedParams):
    """Positive root of the implicit square-root Euler update in y.

    Solving y' = y + (alpha/y' - beta*y')*dt + gamma*dW for y' gives

        y' = (y + gamma*dW) / (2*(1 + beta*dt))
             + sqrt(((y + gamma*dW) / (2*(1 + beta*dt)))^2 + alpha*dt/(1 + beta*dt)).

    The beta*dt < 1 precondition is kept for interface stability even though
    the (1 + beta*dt) denominators never vanish.
    """
    if tp.alpha <= 0.0:
        raise DomainError(f"drift-implicit step requires alpha > 0, got {tp.alpha!r}")
    if tp.beta * dt >= 1.0:
        raise DomainError(
            f"drift-implicit step requires beta*dt < 1, got beta*dt={tp.beta * dt!r}"
        )
    if np.any(np.asarray(y) < 0.0):
        raise DomainError("drift-implicit step requires y >= 0")
    denom = 1.0 + tp.beta * dt
    shifted = (y + tp.gamma * dW) / (2.0 * denom)
    return shifted + np.sqrt(shifted * shifted + tp.alpha * dt / denom)


def projected_euler_step(y, dt: float, dW, tp: TransformedParams, n_steps: int):
    """Explicit Euler in y from the state projected onto [N^{-1/4}, inf)."""
    if not (isinstance(n_steps, (int, np.integer)) and n_steps >= 1):
        raise ConfigError(f"n_steps must be a positive integer, got {n_steps!r}")
    floor = float(n_steps) ** -0.25
    projected = np.maximum(floor, y)
    return projected + (tp.alpha / projected - tp.beta * projected) * dt + tp.gamma * dW


def soft_zero_ode_step(x, dt: float, p: CirParams):
    """Exact mean-reversion flow for duration dt, used below x_zero.

    This is the same closed form as the conditional mean: the soft-zero step
    deliberately replaces the stochastic update by the evolution of the mean.
    """
    if dt < 0.0:
        raise DomainError(f"dt must be non-negative, got {dt!r}")
    if np.any(np.asarray(x) < 0.0) or np.any(np.asarray(x) >= p.theta):
        raise DomainError(f"soft-zero flow requires 0 <= x < theta, got {x!r}")
    return conditional_mean(p, x, dt)


# ---------------------------------------------------------------------------
# State plumbing shared by the scalar driver and the lockstep batch engine.
# ---------------------------------------------------------------------------

def initial_state(scheme: SchemeId, p: CirParams):
    """Internal starting state for a scheme (y = sqrt(x0) for Lamperti-state)."""
    if scheme in LAMPERTI_STATE:
        return math.sqrt(p.x0)
    return p.x0


def state_to_x(scheme: SchemeId, state):
    """Reported original-variable value of an internal state."""
    if scheme in LAMPERTI_STATE:
        return state * state
    if scheme is SchemeId.FULLY_TRUNC_EULER:
        return np.maximum(state, 0.0)
    return state


def apply_stochastic(
    scheme: SchemeId,
    state,
    dt: float,
    dW,
    p: CirParams,
    tp: TransformedParams,
    n_steps_total: int | None = None,
    rng: np.random.Generator | None = None,
):
    """One stochastic update of a scheme's internal state.

    ``n_steps_total`` is required for the projected Euler scheme (its
    projection floor depends on the mesh size); ``rng`` only for the exact
    sampler.
    """
    if scheme is SchemeId.SPLIT_LIE or scheme is SchemeId.SPLIT_SOFT_ZERO:
        return split_lie_step(state, dt, dW, tp)
    if scheme is SchemeId.SPLIT_STRANG:
        return split_strang_step(state, dt, dW, tp)
    if scheme is SchemeId.MILSTEIN_TRUNC:
        return milstein_trunc_step(state, dt, dW, p)
    if scheme is SchemeId.FULLY_TRUNC_EULER:
        next_aux, _ = fully_trunc_euler_step(state, dt, dW, p)
        return next_aux
    if scheme is SchemeId.DRIFT_IMPLICIT:
        return drift_implicit_step(state, dt, dW, tp)
    if scheme is SchemeId.PROJECTED_EULER:
        if n_steps_total is None:
            raise ConfigError("projected Euler needs the total step count of its mesh")
        return projected_euler_step(state, dt, dW, tp, n_steps_total)
    if scheme is SchemeId.EXACT_SAMPLER:
        if rng is None:
            raise ConfigError("exact sampler needs a dedicated random stream")
        return exact_conditional_sample(p, state, dt, rng)
    raise ConfigError(f"unknown scheme {scheme!r}")


def check_admissible(scheme: SchemeId, controller: MeshController, tp: TransformedParams) -> None:
    """Reject scheme/controller/parameter combinations outside validity.

    The soft-zero hybrid controller and the SplitSoftZero scheme imply each
    other. Plain Lie/Strang splitting requires alpha >= 0 except in the
    guard-only diagnostic pairing, which is allowed to run and expected to
    abort if the state decays too far. Drift-implicit requires alpha > 0
    strictly; projected Euler requires a fixed mesh.
    """
    if scheme is SchemeId.SPLIT_SOFT_ZERO and not isinstance(controller, SoftZeroHybrid):
        raise InadmissibleSchemeError(
            "split_soft_zero requires the soft_zero mesh controller"
        )
    if isinstance(controller, SoftZeroHybrid) and scheme is not SchemeId.SPLIT_SOFT_ZERO:
        raise InadmissibleSchemeError(
            f"the soft_zero controller only drives split_soft_zero, not {scheme.value}"
        )
    if scheme in (SchemeId.SPLIT_LIE, SchemeId.SPLIT_STRANG) and tp.alpha < 0.0:
        if not isinstance(controller, AlphaGuard):
            raise InadmissibleSchemeError(
                f"{scheme.value} requires alpha >= 0 (got {tp.alpha!r}); use "
                "split_soft_zero, or the alpha_guard controller for diagnostics"
            )
    if scheme is SchemeId.DRIFT_IMPLICIT and tp.alpha <= 0.0:
        raise InadmissibleSchemeError(
            f"drift_implicit requires alpha > 0, got {tp.alpha!r}"
        )
    if scheme is SchemeId.PROJECTED_EULER and not isinstance(controller, Fixed):
        raise InadmissibleSchemeError("projected_euler runs on fixed meshes only")


def sampler_stream(grid: WienerGrid) -> np.random.Generator:
    """Random stream for exact-sampler draws along a path.

    Keyed by the grid's (seed, path_index) through a fixed salt, so it is
    deterministic per path and distinct from the Wiener stream itself (the
    exact sampler does not consume Brownian increments).
    """
    key = np.array(
        [np.uint64(grid.seed) ^ _SAMPLER_SALT, np.uint64(grid.path_index)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class Trajectory:
    """A realized path on the shared fine grid.

    ``times`` has one more entry than ``step_kinds``; ``states[k]`` is the
    reported original-variable state at ``times[k]``; ``grid_indices[k]`` is
    the fine cell index of that node. The final time equals the horizon
    exactly.
    """

    scheme: SchemeId
    times: np.ndarray
    states: np.ndarray
    step_kinds: tuple[StepKind, ...]
    grid_indices: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.step_kinds)

    @property
    def terminal_state(self) -> float:
        return float(self.states[-1])

    @property
    def mean_dt(self) -> float:
        return float(self.times[-1] - self.times[0]) / self.num_steps

    @property
    def soft_zero_fraction(self) -> float:
        if not self.step_kinds:
            return 0.0
        ode = sum(1 for kind in self.step_kinds if kind is StepKind.SOFT_ZERO_ODE)
        return ode / len(self.step_kinds)


def _fixed_mesh_steps(controller: Fixed, grid: WienerGrid) -> tuple[int, int]:
    """(cells per step, total steps incl. a truncated last one) of a fixed mesh."""
    cells = max(1, snap_to_grid(controller.dt, grid.dt_ref, "floor", n_max=grid.num_cells))
    total = -(-grid.num_cells // cells)
    return cells, total


def run_trajectory(
    scheme: SchemeId,
    controller: MeshController,
    p: CirParams,
    grid: WienerGrid,
    max_steps: int | None = None,
) -> Trajectory:
    """Drive one path of ``scheme`` over ``grid`` under ``controller``.

    Stochastic proposals snap down to the fine grid (minimum one cell); the
    soft-zero flow snaps up, so its exit lands at or above x_zero. The last
    step is truncated to land exactly on the horizon. Soft-zero steps advance
    the Wiener clock without consuming noise: increments of the skipped cells
    are never reused. Aborts once the step count exceeds ``max_steps``
    (default: the number of fine cells, an upper bound by construction since
    every step consumes at least one cell).
    """
    tp = transform(p)
    check_admissible(scheme, controller, tp)
    n_ref = grid.num_cells
    dt_ref = grid.dt_ref
    if max_steps is None:
        max_steps = n_ref

    n_steps_total: int | None = None
    if scheme is SchemeId.PROJECTED_EULER:
        _, n_steps_total = _fixed_mesh_steps(controller, grid)
    rng = sampler_stream(grid) if scheme is SchemeId.EXACT_SAMPLER else None

    state = initial_state(scheme, p)
    times = [0.0]
    states = [float(state_to_x(scheme, state))]
    kinds: list[StepKind] = []
    indices = [0]

    i = 0
    while i < n_ref:
        proposal = controller.propose(states[-1], p, tp)
        mode = "ceil" if proposal.kind is StepKind.SOFT_ZERO_ODE else "floor"
        cells = max(1, snap_to_grid(proposal.dt, dt_ref, mode, n_max=n_ref - i))
        dt = cells * dt_ref
        if proposal.kind is StepKind.SOFT_ZERO_ODE:
            state = soft_zero_ode_step(state, dt, p)
        else:
            # The exact sampler keeps the shared clock but draws from its own
            # salted stream, so the grid increments stay untouched.
            dW = 0.0 if rng is not None else grid.increment(i, i + cells)
            state = apply_stochastic(
                scheme, state, dt, dW, p, tp, n_steps_total=n_steps_total, rng=rng
            )
        i += cells
        kinds.append(proposal.kind)
        times.append(p.horizon if i == n_ref else i * dt_ref)
        states.append(float(state_to_x(scheme, state)))
        indices.append(i)
        if len(kinds) > max_steps:
            raise DomainError(
                f"trajectory exceeded the step ceiling of {max_steps} steps"
            )
    return Trajectory(
        scheme=scheme,
        times=np.asarray(times),
        states=np.asarray(states),
        step_kinds=tuple(kinds),
        grid_indices=np.asarray(indices, dtype=np.int64),
    )
