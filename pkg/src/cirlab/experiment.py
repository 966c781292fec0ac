"""Strong-error estimation, rate fitting, moment checks, and campaign sweeps.

Errors are measured by coupling: candidate and reference are driven by the
SAME Wiener grid, so their difference at the horizon estimates the pathwise
(strong) error. The reference is the truncated Milstein scheme on the fine
grid; an optional mode swaps in the exact transition sampler, which does not
consume the grid and therefore only supports distribution-level reads of the
resulting numbers.

Determinism contract: for a given seed and config, every output byte is
independent of the thread count. Paths are processed in fixed-size chunks
whose size depends only on the grid resolution; every per-path quantity lands
in a path-indexed slot of a preallocated array, and all statistics are numpy
reductions over those arrays. Threads only decide which worker fills which
slots.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import CirLabError, ConfigError, DomainError, InadmissibleSchemeError
from .mesh import (
    CONTROLLER_KINDS,
    Fixed,
    MeshController,
    StepKind,
    build_controller,
)
from .model import (
    CirParams,
    exact_conditional_sample,
    sigma_landmarks,
    transform,
    TransformedParams,
)
from .schemes import (
    SchemeId,
    apply_stochastic,
    check_admissible,
    initial_state,
    run_trajectory,
    sampler_stream,
    state_to_x,
)
from .wiener import WienerGrid, generate, snap_to_grid

__all__ = [
    "ErrorRow",
    "RateFit",
    "StrongErrorResult",
    "MomentCheck",
    "ExperimentConfig",
    "CampaignResult",
    "DESK_LADDER",
    "PAPER_LADDER",
    "preset",
    "strong_error",
    "fit_rate",
    "moment_check",
    "run_campaign",
    "write_results_csv",
    "write_rates_csv",
    "RESULTS_HEADER",
    "RATES_HEADER",
]

RESULTS_HEADER = "scheme,sigma,dt_max,l1,l1_stderr,l2,l2_stderr,avg_dt,soft_zero_fraction,num_paths,status"
RATES_HEADER = "scheme,sigma,norm,slope,slope_stderr,intercept"

ERROR_MODES = ("terminal", "max_nodes")
REFERENCES = ("milstein", "exact")

DESK_LADDER = (0.1, 0.01, 0.005, 0.001, 0.0005)
PAPER_LADDER = (0.1, 0.01, 0.005, 0.001, 0.0005, 0.0001)

# Fraction of ODE steps beyond which a row is flagged as almost deterministic.
MOSTLY_ODE_THRESHOLD = 0.9

# Stream tag for the vectorized moment-check draw of the exact sampler (kept
# far away from the path indices used as Wiener-grid keys).
_MOMENT_STREAM = np.uint64(0xA5A5A5A5A5A5A5A5)


@dataclass(frozen=True)
class ErrorRow:
    """One (scheme, sigma, dt_max) cell of the error table."""

    scheme: str
    sigma: float
    dt_max: float
    l1: float
    l1_stderr: float
    l2: float
    l2_stderr: float
    avg_dt: float
    soft_zero_fraction: float
    num_paths: int
    status: str


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log10(error) against log10(dt_max)."""

    scheme: str
    sigma: float
    norm: str
    slope: float
    slope_stderr: float
    intercept: float


@dataclass(frozen=True)
class StrongErrorResult:
    """A single error-table cell plus its per-path diagnostics."""

    row: ErrorRow
    per_path: np.ndarray
    steps: np.ndarray
    ode_steps: np.ndarray


@dataclass(frozen=True)
class MomentCheck:
    """Sample mean of X at the horizon against the x0 + kappa*theta*T bound."""

    scheme: str
    num_paths: int
    mean_terminal: float
    stderr: float
    bound: float
    passed: bool


def _default_controllers() -> dict[str, str]:
    return {}


@dataclass
class ExperimentConfig:
    """Everything a campaign needs; mirrors the JSON config document."""

    params: CirParams
    sigma_list: tuple[float, ...]
    schemes: tuple[SchemeId, ...]
    controllers: dict[str, str] = field(default_factory=_default_controllers)
    dt_ladder: tuple[float, ...] = DESK_LADDER
    dt_ref: float = 1e-4
    num_paths: int = 1000
    num_batches: int = 20
    seed: int = 0
    rho: float = 2.0
    output_dir: str | None = None
    error_mode: str = "terminal"
    reference: str = "milstein"
    include_landmarks: bool = False
    match_adaptive_mean_step: bool = False

    def controller_kind(self, scheme: SchemeId) -> str:
        default = "soft_zero" if scheme is SchemeId.SPLIT_SOFT_ZERO else "fixed"
        return self.controllers.get(scheme.value, default)

    def effective_sigmas(self) -> tuple[float, ...]:
        """Configured sigma values, plus regime landmarks when requested."""
        sigmas = list(self.sigma_list)
        if self.include_landmarks:
            for lm in sigma_landmarks(self.params):
                if not any(math.isclose(lm, s, rel_tol=1e-12) for s in sigmas):
                    sigmas.append(lm)
        return tuple(sigmas)

    def validate(self) -> list[str]:
        """Raise ConfigError on violated invariants; return advisory warnings."""
        p = self.params
        if not self.sigma_list:
            raise ConfigError("sigma_list must not be empty")
        for s in self.sigma_list:
            if not (math.isfinite(s) and s > 0.0):
                raise ConfigError(f"sigma values must be positive, got {s!r}")
        if not self.schemes:
            raise ConfigError("schemes must not be empty")
        if len(set(self.schemes)) != len(self.schemes):
            raise ConfigError("schemes must be distinct")
        for token in self.controllers:
            if token not in {s.value for s in self.schemes}:
                raise ConfigError(f"controller override for unknown scheme {token!r}")
        for kind in self.controllers.values():
            if kind not in CONTROLLER_KINDS:
                raise ConfigError(
                    f"unknown controller kind {kind!r}; expected one of {CONTROLLER_KINDS}"
                )
        if self.num_paths <= 0:
            raise ConfigError(f"num_paths must be positive, got {self.num_paths}")
        if self.num_batches < 2:
            raise ConfigError(f"num_batches must be at least 2, got {self.num_batches}")
        if self.num_paths % self.num_batches != 0:
            raise ConfigError(
                f"num_paths ({self.num_paths}) must be divisible by "
                f"num_batches ({self.num_batches})"
            )
        if not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed must fit in an unsigned 64-bit int, got {self.seed}")
        if not (math.isfinite(self.rho) and self.rho > 1.0):
            raise ConfigError(f"rho must exceed 1, got {self.rho!r}")
        if not (math.isfinite(self.dt_ref) and self.dt_ref > 0.0):
            raise ConfigError(f"dt_ref must be positive, got {self.dt_ref!r}")
        n_ref = round(p.horizon / self.dt_ref)
        if n_ref < 1 or abs(n_ref * self.dt_ref - p.horizon) > 1e-9 * self.dt_ref:
            raise ConfigError(
                f"horizon {p.horizon!r} is not an integer multiple of dt_ref {self.dt_ref!r}"
            )
        if not self.dt_ladder:
            raise ConfigError("dt_ladder must not be empty")
        if len(set(self.dt_ladder)) != len(self.dt_ladder):
            raise ConfigError("dt_ladder entries must be distinct")
        cap = min(1.0, 1.0 / p.kappa)
        for dt in self.dt_ladder:
            if not (math.isfinite(dt) and dt > 0.0):
                raise ConfigError(f"dt_ladder values must be positive, got {dt!r}")
            n = round(dt / self.dt_ref)
            if n < 1 or abs(n * self.dt_ref - dt) > 1e-9 * self.dt_ref:
                raise ConfigError(
                    f"dt_ladder value {dt!r} is not an integer multiple of dt_ref"
                )
            if dt > cap:
                raise ConfigError(
                    f"dt_ladder value {dt!r} exceeds min(1, 1/kappa) = {cap!r}"
                )
        if self.error_mode not in ERROR_MODES:
            raise ConfigError(
                f"error_mode must be one of {ERROR_MODES}, got {self.error_mode!r}"
            )
        if self.reference not in REFERENCES:
            raise ConfigError(
                f"reference must be one of {REFERENCES}, got {self.reference!r}"
            )
        if self.reference == "exact" and self.error_mode == "max_nodes":
            raise ConfigError(
                "the exact-sampler reference produces terminal draws only; "
                "max_nodes error mode requires the milstein reference"
            )

        warnings: list[str] = []
        # The sharper mean-square theory needs a strictly smaller cap; it is
        # advisory because the moment bound alone only needs min(1, 1/kappa).
        k = p.kappa
        strict_cap = min(1.0, 1.0 / (2.0 * k), 1.0 / (4.0 * k * abs(1.0 - k) + p.theta * k * k))
        offenders = [dt for dt in self.dt_ladder if dt >= strict_cap]
        if offenders:
            warnings.append(
                f"dt_ladder values {offenders} are not strictly below the "
                f"mean-square step cap min(1, 1/(2*kappa), "
                f"1/(4*kappa*|1-kappa| + theta*kappa^2)) = {strict_cap!r}; "
                "rate guarantees may not apply to those rows"
            )
        return warnings

    def to_dict(self) -> dict[str, Any]:
        return {
            "params": {
                "kappa": self.params.kappa,
                "theta": self.params.theta,
                "sigma": self.params.sigma,
                "x0": self.params.x0,
                "horizon": self.params.horizon,
            },
            "sigma_list": list(self.sigma_list),
            "schemes": [s.value for s in self.schemes],
            "controllers": dict(self.controllers),
            "dt_ladder": list(self.dt_ladder),
            "dt_ref": self.dt_ref,
            "num_paths": self.num_paths,
            "num_batches": self.num_batches,
            "seed": self.seed,
            "rho": self.rho,
            "output_dir": self.output_dir,
            "error_mode": self.error_mode,
            "reference": self.reference,
            "include_landmarks": self.include_landmarks,
            "match_adaptive_mean_step": self.match_adaptive_mean_step,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        known = {
            "params", "sigma_list", "schemes", "controllers", "dt_ladder",
            "dt_ref", "num_paths", "num_batches", "seed", "rho", "output_dir",
            "error_mode", "reference", "include_landmarks",
            "match_adaptive_mean_step",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("params", "sigma_list", "schemes"):
            if key not in doc:
                raise ConfigError(f"config key {key!r} is required")
        raw_params = doc["params"]
        if not isinstance(raw_params, dict):
            raise ConfigError("params must be an object")
        param_keys = {"kappa", "theta", "sigma", "x0", "horizon"}
        unknown = set(raw_params) - param_keys
        if unknown:
            raise ConfigError(f"unknown params keys: {sorted(unknown)}")
        sigma_list = tuple(float(s) for s in doc["sigma_list"])
        if not sigma_list:
            raise ConfigError("sigma_list must not be empty")
        try:
            params = CirParams(
                kappa=float(raw_params["kappa"]),
                theta=float(raw_params["theta"]),
                sigma=float(raw_params.get("sigma", sigma_list[0])),
                x0=float(raw_params.get("x0", 0.0)),
                horizon=float(raw_params.get("horizon", 1.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"params key {exc.args[0]!r} is required") from None
        tokens = {s.value: s for s in SchemeId}
        schemes = []
        for token in doc["schemes"]:
            if token not in tokens:
                raise ConfigError(
                    f"unknown scheme {token!r}; expected one of {sorted(tokens)}"
                )
            schemes.append(tokens[token])
        controllers = doc.get("controllers", {})
        if not isinstance(controllers, dict):
            raise ConfigError("controllers must be an object of scheme -> kind")
        cfg = cls(
            params=params,
            sigma_list=sigma_list,
            schemes=tuple(schemes),
            controllers={str(k): str(v) for k, v in controllers.items()},
            dt_ladder=tuple(float(dt) for dt in doc.get("dt_ladder", DESK_LADDER)),
            dt_ref=float(doc.get("dt_ref", 1e-4)),
            num_paths=int(doc.get("num_paths", 1000)),
            num_batches=int(doc.get("num_batches", 20)),
            seed=int(doc.get("seed", 0)),
            rho=float(doc.get("rho", 2.0)),
            output_dir=doc.get("output_dir"),
            error_mode=str(doc.get("error_mode", "terminal")),
            reference=str(doc.get("reference", "milstein")),
            include_landmarks=bool(doc.get("include_landmarks", False)),
            match_adaptive_mean_step=bool(doc.get("match_adaptive_mean_step", False)),
        )
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def preset(name: str, seed: int = 0) -> ExperimentConfig:
    """Campaign configurations at the two supported resolutions.

    ``desk`` keeps a full sweep in the minutes range (dt_ref = 1e-4);
    ``paper`` is the full-resolution run (dt_ref = 1e-5, one more ladder
    rung), reproducible but slow.
    """
    base = CirParams(kappa=2.0, theta=0.02, sigma=0.1, x0=0.0, horizon=1.0)
    schemes = (
        SchemeId.SPLIT_LIE,
        SchemeId.SPLIT_SOFT_ZERO,
        SchemeId.MILSTEIN_TRUNC,
        SchemeId.FULLY_TRUNC_EULER,
        SchemeId.DRIFT_IMPLICIT,
        SchemeId.PROJECTED_EULER,
    )
    sigmas = (0.1, 0.2, 0.3, 0.4, 0.6, 0.8)
    if name == "desk":
        return ExperimentConfig(
            params=base, sigma_list=sigmas, schemes=schemes,
            dt_ladder=DESK_LADDER, dt_ref=1e-4, seed=seed,
        )
    if name == "paper":
        return ExperimentConfig(
            params=base, sigma_list=sigmas, schemes=schemes,
            dt_ladder=PAPER_LADDER, dt_ref=1e-5, seed=seed,
        )
    raise ConfigError(f"unknown preset {name!r}; expected 'desk' or 'paper'")


# --------------------------------------------------------------------------
# Lockstep engine: all paths of one fixed-mesh cell advance together. The
# step maps are scalar/array polymorphic and dt is a Python float, so each
# array statement performs, per path, the same IEEE operations as the scalar
# driver in schemes.run_trajectory.
# --------------------------------------------------------------------------


@dataclass
class _LockstepResult:
    terminal: np.ndarray
    num_steps: int
    nodes: np.ndarray | None
    node_indices: np.ndarray | None


def _lockstep_run(
    scheme: SchemeId,
    p: CirParams,
    tp: TransformedParams,
    cells: int,
    inc: np.ndarray,
    dt_ref: float,
    keep_nodes: bool = False,
) -> _LockstepResult:
    n_paths, n_ref = inc.shape
    n_total = -(-n_ref // cells)
    state = np.full(n_paths, initial_state(scheme, p), dtype=np.float64)
    nodes = None
    idx = None
    if keep_nodes:
        nodes = np.empty((n_paths, n_total + 1), dtype=np.float64)
        idx = np.empty(n_total + 1, dtype=np.int64)
        nodes[:, 0] = state_to_x(scheme, state)
        idx[0] = 0
    i = 0
    k = 0
    while i < n_ref:
        j = min(i + cells, n_ref)
        # Row-sliced sums reduce the same contiguous memory as the scalar
        # driver's per-path sum, so the increments agree bit for bit.
        dW = inc[:, i] if j == i + 1 else np.sum(inc[:, i:j], axis=1)
        state = apply_stochastic(
            scheme, state, (j - i) * dt_ref, dW, p, tp, n_steps_total=n_total
        )
        i = j
        k += 1
        if keep_nodes:
            nodes[:, k] = state_to_x(scheme, state)
            idx[k] = i
    terminal = np.asarray(state_to_x(scheme, state), dtype=np.float64)
    return _LockstepResult(terminal, n_total, nodes, idx)


def _chunk_size(n_ref: int) -> int:
    """Paths per work unit; a function of the grid only, never of threads."""
    return max(16, min(128, -(-2_000_000 // n_ref)))


@dataclass
class _CellPlan:
    scheme: SchemeId
    dt_max: float
    controller: MeshController | None
    reason: str | None

    @property
    def key(self) -> tuple[str, float]:
        return (self.scheme.value, self.dt_max)


@dataclass
class _CellData:
    errors: np.ndarray
    steps: np.ndarray
    ode_steps: np.ndarray
    failures: list[tuple[int, CirLabError]]


def _build_plan(
    cfg: ExperimentConfig, scheme: SchemeId, dt_max: float, tp: TransformedParams
) -> _CellPlan:
    if scheme is SchemeId.EXACT_SAMPLER:
        return _CellPlan(
            scheme, dt_max, None,
            "exact sampler draws are not pathwise-coupled to the Wiener grid",
        )
    try:
        controller = build_controller(cfg.controller_kind(scheme), dt_max, cfg.rho)
        check_admissible(scheme, controller, tp)
    except (ConfigError, InadmissibleSchemeError) as exc:
        return _CellPlan(scheme, dt_max, None, str(exc))
    return _CellPlan(scheme, dt_max, controller, None)


def _run_cells(
    p: CirParams,
    tp: TransformedParams,
    plans: Sequence[_CellPlan],
    dt_ref: float,
    num_paths: int,
    seed: int,
    error_mode: str,
    reference: str,
    threads: int,
) -> dict[tuple[str, float], _CellData]:
    n_ref = round(p.horizon / dt_ref)
    runnable = [pl for pl in plans if pl.controller is not None]
    data = {
        pl.key: _CellData(
            errors=np.full(num_paths, np.nan),
            steps=np.zeros(num_paths, dtype=np.int64),
            ode_steps=np.zeros(num_paths, dtype=np.int64),
            failures=[],
        )
        for pl in runnable
    }
    if not runnable:
        return data
    keep_nodes = error_mode == "max_nodes"
    chunk = _chunk_size(n_ref)
    bounds = [(lo, min(lo + chunk, num_paths)) for lo in range(0, num_paths, chunk)]

    def work(span: tuple[int, int]) -> None:
        lo, hi = span
        grids = [generate(seed, m, dt_ref, p.horizon) for m in range(lo, hi)]
        inc = np.stack([g.increments for g in grids])
        ref_nodes = None
        if reference == "milstein":
            ref = _lockstep_run(
                SchemeId.MILSTEIN_TRUNC, p, tp, 1, inc, dt_ref, keep_nodes=keep_nodes
            )
            ref_term = ref.terminal
            ref_nodes = ref.nodes
        else:
            ref_term = np.empty(hi - lo)
            for k, g in enumerate(grids):
                ref_term[k] = float(
                    exact_conditional_sample(p, p.x0, p.horizon, sampler_stream(g))
                )
        for pl in runnable:
            cell = data[pl.key]
            try:
                if isinstance(pl.controller, Fixed):
                    cells = max(
                        1, snap_to_grid(pl.controller.dt, dt_ref, "floor", n_max=n_ref)
                    )
                    res = _lockstep_run(
                        pl.scheme, p, tp, cells, inc, dt_ref, keep_nodes=keep_nodes
                    )
                    if keep_nodes:
                        err = np.abs(res.nodes - ref_nodes[:, res.node_indices]).max(axis=1)
                    else:
                        err = np.abs(res.terminal - ref_term)
                    cell.errors[lo:hi] = err
                    cell.steps[lo:hi] = res.num_steps
                else:
                    for m in range(lo, hi):
                        traj = run_trajectory(pl.scheme, pl.controller, p, grids[m - lo])
                        if keep_nodes:
                            e = float(
                                np.max(
                                    np.abs(
                                        traj.states
                                        - ref_nodes[m - lo, traj.grid_indices]
                                    )
                                )
                            )
                        else:
                            e = abs(traj.terminal_state - float(ref_term[m - lo]))
                        cell.errors[m] = e
                        cell.steps[m] = traj.num_steps
                        cell.ode_steps[m] = sum(
                            1 for kind in traj.step_kinds
                            if kind is StepKind.SOFT_ZERO_ODE
                        )
            except CirLabError as exc:
                cell.failures.append((lo, exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, bounds))
    else:
        for span in bounds:
            work(span)
    for cell in data.values():
        cell.failures.sort(key=lambda item: item[0])
    return data


def _aggregate_row(
    plan: _CellPlan,
    sigma: float,
    cell: _CellData,
    horizon: float,
    num_batches: int,
) -> ErrorRow:
    errors = cell.errors
    num_paths = errors.size
    l1 = float(np.mean(errors))
    l2 = float(np.sqrt(np.mean(np.square(errors))))
    batch_l1 = errors.reshape(num_batches, -1).mean(axis=1)
    batch_l2 = np.sqrt(np.square(errors).reshape(num_batches, -1).mean(axis=1))
    l1_stderr = float(np.std(batch_l1, ddof=1) / math.sqrt(num_batches))
    l2_stderr = float(np.std(batch_l2, ddof=1) / math.sqrt(num_batches))
    avg_dt = float(np.mean(horizon / cell.steps))
    soft_zero_fraction = float(cell.ode_steps.sum() / cell.steps.sum())
    status = "ok_mostly_ode" if soft_zero_fraction > MOSTLY_ODE_THRESHOLD else "ok"
    return ErrorRow(
        scheme=plan.scheme.value,
        sigma=sigma,
        dt_max=plan.dt_max,
        l1=l1,
        l1_stderr=l1_stderr,
        l2=l2,
        l2_stderr=l2_stderr,
        avg_dt=avg_dt,
        soft_zero_fraction=soft_zero_fraction,
        num_paths=num_paths,
        status=status,
    )


def _failed_row(plan: _CellPlan, sigma: float, status: str) -> ErrorRow:
    nan = float("nan")
    return ErrorRow(
        scheme=plan.scheme.value,
        sigma=sigma,
        dt_max=plan.dt_max,
        l1=nan, l1_stderr=nan, l2=nan, l2_stderr=nan,
        avg_dt=nan, soft_zero_fraction=nan,
        num_paths=0,
        status=status,
    )


def strong_error(
    scheme: SchemeId,
    controller: MeshController,
    p: CirParams,
    dt_max: float | None = None,
    num_paths: int = 1000,
    dt_ref: float = 1e-4,
    seed: int = 0,
    num_batches: int = 20,
    error_mode: str = "terminal",
    reference: str = "milstein",
    threads: int = 1,
) -> StrongErrorResult:
    """Coupled strong error of one scheme/mesh cell against the reference.

    Candidate and reference run on the same Wiener grid per path; the error
    is |X_cand - X_ref| at the horizon (or the max over the candidate's nodes
    with ``error_mode="max_nodes"``). Admissibility and runtime domain errors
    propagate to the caller; the campaign wrapper is the layer that converts
    them into row statuses.
    """
    if dt_max is None:
        dt_max = controller.dt_max
    if num_batches < 2 or num_paths % num_batches != 0:
        raise ConfigError(
            f"num_paths ({num_paths}) must be a positive multiple of "
            f"num_batches ({num_batches} >= 2)"
        )
    if error_mode not in ERROR_MODES:
        raise ConfigError(f"error_mode must be one of {ERROR_MODES}, got {error_mode!r}")
    if reference not in REFERENCES:
        raise ConfigError(f"reference must be one of {REFERENCES}, got {reference!r}")
    if reference == "exact" and error_mode == "max_nodes":
        raise ConfigError(
            "the exact-sampler reference produces terminal draws only; "
            "max_nodes error mode requires the milstein reference"
        )
    tp = transform(p)
    check_admissible(scheme, controller, tp)
    plan = _CellPlan(scheme, float(dt_max), controller, None)
    data = _run_cells(
        p, tp, [plan], dt_ref, num_paths, seed, error_mode, reference, threads
    )
    cell = data[plan.key]
    if cell.failures:
        raise cell.failures[0][1]
    row = _aggregate_row(plan, p.sigma, cell, p.horizon, num_batches)
    return StrongErrorResult(
        row=row, per_path=cell.errors, steps=cell.steps, ode_steps=cell.ode_steps
    )


def fit_rate(rows: Sequence[ErrorRow], norm: str = "l2") -> RateFit:
    """Log10-log10 least squares over the rows of one (scheme, sigma) group.

    Rows are sorted by dt_max before fitting, so any input permutation yields
    the identical fit. With exactly two points the residual-based slope
    stderr is 0 by convention.
    """
    if norm not in ("l1", "l2"):
        raise ConfigError(f"norm must be 'l1' or 'l2', got {norm!r}")
    if not rows:
        raise ConfigError("no rows to fit")
    schemes = {r.scheme for r in rows}
    sigmas = {r.sigma for r in rows}
    if len(schemes) != 1 or len(sigmas) != 1:
        raise ConfigError(
            f"fit_rate expects rows of a single (scheme, sigma) group, got "
            f"schemes={sorted(schemes)} sigmas={sorted(sigmas)}"
        )
    values = [(r.dt_max, r.l1 if norm == "l1" else r.l2) for r in rows]
    for dt, err in values:
        if not (math.isfinite(err) and err > 0.0):
            raise DomainError(
                f"cannot fit a rate through error {err!r} at dt_max={dt!r}; "
                "zero or negative errors signal degenerate coupling"
            )
    if len({dt for dt, _ in values}) < 2:
        raise DomainError("rate fitting needs at least 2 distinct dt_max values")
    values.sort()
    x = np.log10(np.array([dt for dt, _ in values]))
    y = np.log10(np.array([err for _, err in values]))
    n = x.size
    xm = float(np.mean(x))
    ym = float(np.mean(y))
    sxx = float(np.sum(np.square(x - xm)))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = ym - slope * xm
    if n == 2:
        slope_stderr = 0.0
    else:
        resid = y - (intercept + slope * x)
        slope_stderr = math.sqrt(float(np.sum(np.square(resid))) / (n - 2) / sxx)
    return RateFit(
        scheme=rows[0].scheme,
        sigma=rows[0].sigma,
        norm=norm,
        slope=slope,
        slope_stderr=slope_stderr,
        intercept=intercept,
    )


def moment_check(
    scheme: SchemeId,
    controller: MeshController | None,
    p: CirParams,
    num_paths: int,
    seed: int = 0,
    dt_ref: float | None = None,
) -> MomentCheck:
    """Mean of X at the horizon versus the bound x0 + kappa*theta*horizon.

    Applies to the splitting family (whose means the bound provably caps)
    and to the exact sampler (whose mean is below the bound analytically).
    The check passes when the sample mean is at most bound + 3*stderr.
    """
    allowed = {
        SchemeId.SPLIT_LIE,
        SchemeId.SPLIT_STRANG,
        SchemeId.SPLIT_SOFT_ZERO,
        SchemeId.EXACT_SAMPLER,
    }
    if scheme not in allowed:
        raise InadmissibleSchemeError(
            f"the moment bound covers the splitting family and the exact "
            f"sampler, not {scheme.value}"
        )
    if num_paths < 2:
        raise ConfigError(f"num_paths must be at least 2, got {num_paths}")
    bound = p.x0 + p.kappa * p.theta * p.horizon
    if scheme is SchemeId.EXACT_SAMPLER:
        key = np.array([np.uint64(seed), _MOMENT_STREAM], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        terminals = np.asarray(
            exact_conditional_sample(p, p.x0, p.horizon, rng, size=num_paths)
        )
    else:
        if controller is None:
            raise ConfigError("a mesh controller is required for the splitting family")
        tp = transform(p)
        check_admissible(scheme, controller, tp)
        if isinstance(controller, Fixed):
            step = controller.dt if dt_ref is None else dt_ref
            n_ref = round(p.horizon / step)
            if n_ref < 1 or abs(n_ref * step - p.horizon) > 1e-9 * step:
                raise ConfigError(
                    f"horizon {p.horizon!r} is not an integer multiple of {step!r}"
                )
            cells = max(1, snap_to_grid(controller.dt, step, "floor", n_max=n_ref))
            terminals = np.empty(num_paths)
            chunk = _chunk_size(n_ref)
            for lo in range(0, num_paths, chunk):
                hi = min(lo + chunk, num_paths)
                inc = np.stack(
                    [generate(seed, m, step, p.horizon).increments for m in range(lo, hi)]
                )
                terminals[lo:hi] = _lockstep_run(scheme, p, tp, cells, inc, step).terminal
        else:
            if dt_ref is None:
                raise ConfigError(
                    "adaptive controllers need an explicit dt_ref for the "
                    "shared Wiener grid"
                )
            terminals = np.empty(num_paths)
            for m in range(num_paths):
                grid = generate(seed, m, dt_ref, p.horizon)
                terminals[m] = run_trajectory(scheme, controller, p, grid).terminal_state
    mean = float(np.mean(terminals))
    stderr = float(np.std(terminals, ddof=1) / math.sqrt(num_paths))
    return MomentCheck(
        scheme=scheme.value,
        num_paths=num_paths,
        mean_terminal=mean,
        stderr=stderr,
        bound=bound,
        passed=mean <= bound + 3.0 * stderr,
    )


@dataclass(frozen=True)
class CampaignResult:
    rows: tuple[ErrorRow, ...]
    fits: tuple[RateFit, ...]
    manifest: dict[str, Any]
    results_path: str | None = None
    rates_path: str | None = None
    manifest_path: str | None = None


def _status_for(exc: CirLabError) -> str:
    if isinstance(exc, InadmissibleSchemeError):
        return "inadmissible"
    if isinstance(exc, ConfigError):
        return "error:config"
    return "error:domain"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def run_campaign(
    cfg: ExperimentConfig,
    threads: int = 1,
    out_dir: str | None = None,
) -> CampaignResult:
    """Sweep schemes x sigmas x dt ladder; aggregate, fit, and serialize.

    Inadmissible or failing cells become rows with a status code and the
    campaign continues. When ``out_dir`` (or the config's output_dir) is set,
    writes results.csv, rates.csv, and manifest.json there. Output bytes
    depend on the config and seed only, never on ``threads``; manifest
    timestamps are the one exception.
    """
    warnings = cfg.validate()
    if threads < 1:
        raise ConfigError(f"threads must be at least 1, got {threads}")
    started_at = _utc_now()
    rows: list[ErrorRow] = []
    annotations: list[dict[str, Any]] = []
    for sigma in cfg.effective_sigmas():
        p = cfg.params.with_sigma(sigma)
        tp = transform(p)
        plans = [
            _build_plan(cfg, scheme, dt_max, tp)
            for scheme in cfg.schemes
            for dt_max in cfg.dt_ladder
        ]
        if cfg.match_adaptive_mean_step:
            plans = _match_mean_steps(cfg, p, tp, plans, threads, annotations)
        data = _run_cells(
            p, tp, plans, cfg.dt_ref, cfg.num_paths, cfg.seed,
            cfg.error_mode, cfg.reference, threads,
        )
        for pl in plans:
            if pl.controller is None:
                rows.append(_failed_row(pl, sigma, "inadmissible"))
                annotations.append({
                    "scheme": pl.scheme.value, "sigma": sigma, "dt_max": pl.dt_max,
                    "note": pl.reason,
                })
                continue
            cell = data[pl.key]
            if cell.failures:
                exc = cell.failures[0][1]
                rows.append(_failed_row(pl, sigma, _status_for(exc)))
                annotations.append({
                    "scheme": pl.scheme.value, "sigma": sigma, "dt_max": pl.dt_max,
                    "note": str(exc),
                })
                continue
            row = _aggregate_row(pl, sigma, cell, p.horizon, cfg.num_batches)
            rows.append(row)
            if row.status == "ok_mostly_ode":
                annotations.append({
                    "scheme": pl.scheme.value, "sigma": sigma, "dt_max": pl.dt_max,
                    "note": (
                        f"soft_zero_fraction={row.soft_zero_fraction:.3f}: the "
                        "trajectories were almost entirely deterministic flow"
                    ),
                })

    fits: list[RateFit] = []
    groups: dict[tuple[str, float], list[ErrorRow]] = {}
    for row in rows:
        groups.setdefault((row.scheme, row.sigma), []).append(row)
    for (scheme, sigma), group in groups.items():
        usable = [r for r in group if r.status.startswith("ok")]
        mostly_ode = [r for r in usable if r.status == "ok_mostly_ode"]
        for norm in ("l1", "l2"):
            try:
                fits.append(fit_rate(usable, norm))
            except CirLabError as exc:
                annotations.append({
                    "scheme": scheme, "sigma": sigma, "norm": norm,
                    "note": f"rate fit skipped: {exc}",
                })
                continue
            if mostly_ode:
                annotations.append({
                    "scheme": scheme, "sigma": sigma, "norm": norm,
                    "note": (
                        f"rate fit includes {len(mostly_ode)} row(s) with "
                        f"soft_zero_fraction > {MOSTLY_ODE_THRESHOLD}"
                    ),
                })

    finished_at = _utc_now()
    from . import __version__

    manifest: dict[str, Any] = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "started_at": started_at,
        "finished_at": finished_at,
        "versions": {"cirlab": __version__, "numpy": np.__version__},
        "warnings": warnings,
        "annotations": annotations,
        "num_rows": len(rows),
        "num_fits": len(fits),
    }

    target = out_dir if out_dir is not None else cfg.output_dir
    results_path = rates_path = manifest_path = None
    if target is not None:
        os.makedirs(target, exist_ok=True)
        results_path = os.path.join(target, "results.csv")
        rates_path = os.path.join(target, "rates.csv")
        manifest_path = os.path.join(target, "manifest.json")
        write_results_csv(rows, results_path)
        write_rates_csv(fits, rates_path)
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return CampaignResult(
        rows=tuple(rows),
        fits=tuple(fits),
        manifest=manifest,
        results_path=results_path,
        rates_path=rates_path,
        manifest_path=manifest_path,
    )


def _match_mean_steps(
    cfg: ExperimentConfig,
    p: CirParams,
    tp: TransformedParams,
    plans: list[_CellPlan],
    threads: int,
    annotations: list[dict[str, Any]],
) -> list[_CellPlan]:
    """Re-aim fixed-mesh cells at the adaptive method's mean realized step.

    For each ladder value, the first adaptive cell's mean step (over paths)
    replaces dt for every fixed-mesh cell at that rung, snapped down to the
    fine grid. Ladder rungs without a usable adaptive cell keep their
    original fixed step.
    """
    adaptive = [
        pl for pl in plans
        if pl.controller is not None and not isinstance(pl.controller, Fixed)
    ]
    if not adaptive:
        return plans
    data = _run_cells(
        p, tp, adaptive, cfg.dt_ref, cfg.num_paths, cfg.seed,
        cfg.error_mode, cfg.reference, threads,
    )
    mean_step: dict[float, float] = {}
    for pl in adaptive:
        if pl.dt_max in mean_step:
            continue
        cell = data[pl.key]
        if cell.failures:
            continue
        mean_step[pl.dt_max] = float(np.mean(p.horizon / cell.steps))
    out: list[_CellPlan] = []
    for pl in plans:
        if pl.controller is None or not isinstance(pl.controller, Fixed):
            out.append(pl)
            continue
        target = mean_step.get(pl.dt_max)
        if target is None:
            out.append(pl)
            continue
        n_ref = round(p.horizon / cfg.dt_ref)
        cells = max(1, snap_to_grid(target, cfg.dt_ref, "floor", n_max=n_ref))
        matched = Fixed(cells * cfg.dt_ref)
        annotations.append({
            "scheme": pl.scheme.value, "sigma": p.sigma, "dt_max": pl.dt_max,
            "note": f"fixed step re-aimed at adaptive mean step {matched.dt!r}",
        })
        out.append(_CellPlan(pl.scheme, pl.dt_max, matched, None))
    return out


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_results_csv(rows: Iterable[ErrorRow], path: str) -> None:
    lines = [RESULTS_HEADER]
    for r in rows:
        lines.append(
            ",".join([
                r.scheme, _fmt(r.sigma), _fmt(r.dt_max),
                _fmt(r.l1), _fmt(r.l1_stderr), _fmt(r.l2), _fmt(r.l2_stderr),
                _fmt(r.avg_dt), _fmt(r.soft_zero_fraction),
                str(r.num_paths), r.status,
            ])
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_rates_csv(fits: Iterable[RateFit], path: str) -> None:
    lines = [RATES_HEADER]
    for f in fits:
        lines.append(
            ",".join([
                f.scheme, _fmt(f.sigma), f.norm,
                _fmt(f.slope), _fmt(f.slope_stderr), _fmt(f.intercept),
            ])
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
