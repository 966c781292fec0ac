"""cirlab: a strong-convergence laboratory for the CIR square-root diffusion.

The package couples a splitting scheme for the Lamperti-transformed process
(and its soft-zero adaptive extension) with four classical schemes over one
shared Brownian path engine, and measures pathwise errors, moment bounds,
and convergence rates under a deterministic seeding discipline.
"""

__version__ = "0.1.0"

from .errors import (
    CirLabError,
    ConfigError,
    DomainError,
    InadmissibleSchemeError,
)
from .model import (
    CirParams,
    Regime,
    RegimeKind,
    TransformedParams,
    classify_regime,
    conditional_mean,
    exact_conditional_sample,
    sigma_landmarks,
    transform,
)
from .wiener import WienerGrid, generate, snap_to_grid
from .mesh import (
    AlphaGuard,
    CONTROLLER_KINDS,
    Fixed,
    Heuristic,
    MeshController,
    SoftZeroConfig,
    SoftZeroHybrid,
    StepKind,
    StepProposal,
    build_controller,
    next_dt_alpha_guard,
    next_dt_heuristic,
    next_dt_soft_zero,
)
from .schemes import (
    SchemeId,
    Trajectory,
    apply_stochastic,
    check_admissible,
    drift_implicit_step,
    fully_trunc_euler_step,
    initial_state,
    milstein_trunc_step,
    projected_euler_step,
    run_trajectory,
    sampler_stream,
    soft_zero_ode_step,
    split_lie_step,
    split_strang_step,
    state_to_x,
)
from .experiment import (
    CampaignResult,
    DESK_LADDER,
    ErrorRow,
    ExperimentConfig,
    MomentCheck,
    PAPER_LADDER,
    RateFit,
    RATES_HEADER,
    RESULTS_HEADER,
    StrongErrorResult,
    fit_rate,
    moment_check,
    preset,
    run_campaign,
    strong_error,
    write_rates_csv,
    write_results_csv,
)

__all__ = [
    "__version__",
    "CirLabError", "ConfigError", "DomainError", "InadmissibleSchemeError",
    "CirParams", "TransformedParams", "Regime", "RegimeKind",
    "classify_regime", "conditional_mean", "exact_conditional_sample",
    "sigma_landmarks", "transform",
    "WienerGrid", "generate", "snap_to_grid",
    "AlphaGuard", "CONTROLLER_KINDS", "Fixed", "Heuristic", "MeshController",
    "SoftZeroConfig", "SoftZeroHybrid", "StepKind", "StepProposal",
    "build_controller", "next_dt_alpha_guard", "next_dt_heuristic",
    "next_dt_soft_zero",
    "SchemeId", "Trajectory", "apply_stochastic", "check_admissible",
    "drift_implicit_step", "fully_trunc_euler_step", "initial_state",
    "milstein_trunc_step", "projected_euler_step", "run_trajectory",
    "sampler_stream", "soft_zero_ode_step", "split_lie_step",
    "split_strang_step", "state_to_x",
    "CampaignResult", "DESK_LADDER", "ErrorRow", "ExperimentConfig",
    "MomentCheck", "PAPER_LADDER", "RateFit", "RATES_HEADER",
    "RESULTS_HEADER", "StrongErrorResult", "fit_rate", "moment_check",
    "preset", "run_campaign", "strong_error", "write_rates_csv",
    "write_results_csv",
]
