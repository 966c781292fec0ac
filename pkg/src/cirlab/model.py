"""CIR model parameters, regime classification, and the exact transition law.

The process is the mean-reverting square-root diffusion

    dX = kappa * (theta - X) dt + sigma * sqrt(X) dW,    X(0) = x0 >= 0.

Working in the square-root variable Y = sqrt(X) makes the noise additive:

    dY = (alpha / Y - beta * Y) dt + gamma dW,
    alpha = (4*kappa*theta - sigma^2) / 8,   beta = kappa / 2,   gamma = sigma / 2.

Everything downstream keys off the sign structure of these constants:

* ``StrongInverse`` (kappa*theta > sigma^2, strict): inverse moments of Y are
  controlled; the most regular setting.
* ``NonnegAlpha`` (alpha >= 0): the transformed drift never points toward the
  origin, so splitting steps stay real without mesh adaptivity.
* ``NegAlpha`` (alpha < 0): the drift can pull Y toward zero; the adaptive
  guard and the soft-zero region exist for this regime.

The ``feller`` flag records whether 2*kappa*theta > sigma^2 (origin
unattainable for the exact process). It is informational; admissibility of the
schemes is decided by the regime kind, not by this flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "CirParams",
    "TransformedParams",
    "RegimeKind",
    "Regime",
    "transform",
    "classify_regime",
    "conditional_mean",
    "exact_conditional_sample",
    "sigma_landmarks",
]


@dataclass(frozen=True)
class CirParams:
    """Parameters of the CIR process plus initial state and time horizon."""

    kappa: float
    theta: float
    sigma: float
    x0: float = 0.0
    horizon: float = 1.0

    def __post_init__(self) -> None:
        for name in ("kappa", "theta", "sigma", "horizon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigError(f"{name} must be positive and finite, got {value!r}")
        if not (math.isfinite(self.x0) and self.x0 >= 0.0):
            raise ConfigError(f"x0 must be nonnegative and finite, got {self.x0!r}")

    def with_sigma(self, sigma: float) -> "CirParams":
        """Copy of these parameters with a different volatility."""
        return replace(self, sigma=sigma)


@dataclass(frozen=True)
class TransformedParams:
    """Drift and noise constants of the square-root transformed process."""

    alpha: float
    beta: float
    gamma: float


class RegimeKind(Enum):
    STRONG_INVERSE = "StrongInverse"
    NONNEG_ALPHA = "NonnegAlpha"
    NEG_ALPHA = "NegAlpha"


@dataclass(frozen=True)
class Regime:
    kind: RegimeKind
    feller: bool


def transform(p: CirParams) -> TransformedParams:
    """Map CIR parameters to the transformed constants (alpha, beta, gamma).

    alpha is evaluated in difference-of-squares form: with sigma exactly equal
    (as a float) to 2*sqrt(kappa*theta), the naive expression
    (4*kappa*theta - sigma^2)/8 leaves a ~1e-18 residue whose sign is an
    accident of rounding, which would flip the regime classification at the
    alpha = 0 boundary. The factored form returns exactly 0.0 there.
    """
    root = 2.0 * math.sqrt(p.kappa * p.theta)
    alpha = (root - p.sigma) * (root + p.sigma) / 8.0
    return TransformedParams(alpha=alpha, beta=p.kappa / 2.0, gamma=p.sigma / 2.0)


def classify_regime(p: CirParams) -> Regime:
    """Classify parameters into their drift regime.

    Boundary conventions: kappa*theta == sigma^2 is NOT StrongInverse (the
    inequality is strict), while alpha == 0 IS NonnegAlpha (non-strict).
    """
    kt = p.kappa * p.theta
    s2 = p.sigma * p.sigma
    feller = 2.0 * kt > s2
    if kt > s2:
        kind = RegimeKind.STRONG_INVERSE
    elif transform(p).alpha >= 0.0:
        kind = RegimeKind.NONNEG_ALPHA
    else:
        kind = RegimeKind.NEG_ALPHA
    return Regime(kind=kind, feller=feller)


def conditional_mean(p: CirParams, x, dt: float):
    """E[X(t + dt) | X(t) = x]: exponential relaxation of x toward theta.

    Also the exact flow of the deterministic mean-reversion ODE
    u' = kappa*(theta - u), which is what the soft-zero step integrates.
    Accepts scalar or array ``x``.
    """
    if dt < 0.0:
        raise DomainError(f"dt must be nonnegative, got {dt!r}")
    decay = math.exp(-p.kappa * dt)
    return decay * x + p.theta * (1.0 - decay)


def exact_conditional_sample(p: CirParams, x, dt: float, rng: np.random.Generator, size=None):
    """Draw from the exact transition law of X over a step of length dt.

    The transition is a scaled noncentral chi-square: with

        c   = sigma^2 * (1 - e^{-kappa*dt}) / (4*kappa)
        d   = 4*kappa*theta / sigma^2
        lam = x * e^{-kappa*dt} / c

    the draw is c * Gamma(d/2 + K, scale=2) with K ~ Poisson(lam/2). This is
    the exact Poisson mixture representation, valid for non-integer d and for
    lam = 0 (where it degenerates to a plain Gamma).

    ``x`` may be a scalar or an array; ``size`` follows numpy conventions for
    drawing several variates from a scalar start.
    """
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt!r}")
    if np.any(np.asarray(x) < 0.0):
        raise DomainError("starting state must be nonnegative")
    decay = math.exp(-p.kappa * dt)
    c = p.sigma * p.sigma * (1.0 - decay) / (4.0 * p.kappa)
    d = 4.0 * p.kappa * p.theta / (p.sigma * p.sigma)
    lam = x * decay / c
    mixing = rng.poisson(lam / 2.0, size=size)
    return c * rng.gamma(d / 2.0 + mixing, 2.0)


def sigma_landmarks(p: CirParams) -> tuple[float, float, float, float]:
    """Volatility values, in increasing order, where the model changes
    character for fixed ``kappa * theta``:

    - ``sqrt(2*kappa*theta/3)``: largest sigma for which the strongest
      inverse-moment guarantees hold with a full unit of slack;
    - ``sqrt(kappa*theta)``: upper edge of the strong-inverse regime;
    - ``sqrt(2*kappa*theta)``: the Feller boundary (origin unreachable
      strictly below it);
    - ``2*sqrt(kappa*theta)``: where the transformed drift coefficient
      ``alpha`` changes sign.
    """
    kt = p.kappa * p.theta
    return (
        math.sqrt(2.0 * kt / 3.0),
        math.sqrt(kt),
        math.sqrt(2.0 * kt),
        2.0 * math.sqrt(kt),
    )
