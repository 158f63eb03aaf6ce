"""Outer parameter estimation, hyperparameter selection and diagnostics.

The tracking estimator minimizes theta -> optimal tracking cost, where each
cost evaluation is itself an exact inner solve (Riccati pass, iterated when
the dynamics are state-dependent). The outer landscape is cheap to evaluate
but not differentiable in any convenient closed form, so the optimizer is a
derivative-free simplex (Nelder-Mead) run from a handful of starts, with box
bounds handled by log/logit reparameterization so the simplex itself is
unconstrained.

Also here: the classic nonlinear least-squares baseline (same optimizer
machinery, objective = squared data misfit of the unperturbed ODE solution),
forward cross-validation for choosing (k_n, lambda), the observability
diagnostic, and result serialization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import product
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import ConfigError, EstimationFailed, NumericalError
from .grids import ObservationSet, TrackingGrid, build_grid
from .integrate import rk4_at_times, rk4_linear_at_times
from .lqr import (
    LinearizedSystem,
    TrackingSolution,
    profiled_tracking_cost,
    riccati_backward,
    tracking_cost,
)
from .models import PseudoLinearModel, SemiParamSpec, extend_semiparametric, semiparam_weight_matrix
from .sdre import SdreConfig, default_reference_state, sdre_track, sdre_track_profiled

_RCOND_MIN = 1e-12


# ---------------------------------------------------------------------------
# bound handling
# ---------------------------------------------------------------------------

class BoxTransform:
    """Componentwise bijection from a box onto all of R^p.

    Two finite bounds -> scaled logit, lower bound only -> shifted log,
    upper bound only -> reflected log, unbounded -> identity. The optimizer
    works in the unconstrained image, so every iterate maps back strictly
    inside the box and bound constraints never need explicit handling.
    """

    _FREE, _LOWER, _UPPER, _BOX = 0, 1, 2, 3

    def __init__(self, lower: np.ndarray, upper: np.ndarray):
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be two equal-length vectors")
        if np.any(lo >= hi):
            raise ValueError("lower bounds must be strictly below upper bounds")
        self.lo = lo
        self.hi = hi
        fin_lo = np.isfinite(lo)
        fin_hi = np.isfinite(hi)
        kind = np.full(lo.shape, self._FREE, dtype=int)
        kind[fin_lo & ~fin_hi] = self._LOWER
        kind[~fin_lo & fin_hi] = self._UPPER
        kind[fin_lo & fin_hi] = self._BOX
        self.kind = kind

    def clip_interior(self, x: np.ndarray) -> np.ndarray:
        """Pull values strictly inside the box so the forward map is finite."""
        x = np.asarray(x, dtype=float).copy()
        k = self.kind
        lower = k == self._LOWER
        upper = k == self._UPPER
        box = k == self._BOX
        pad_l = 1e-8 * np.maximum(1.0, np.abs(np.where(lower, self.lo, 0.0)))
        x[lower] = np.maximum(x[lower], (self.lo + pad_l)[lower])
        pad_u = 1e-8 * np.maximum(1.0, np.abs(np.where(upper, self.hi, 0.0)))
        x[upper] = np.minimum(x[upper], (self.hi - pad_u)[upper])
        if np.any(box):
            span = self.hi - self.lo
            x[box] = np.clip(
                x[box], (self.lo + 1e-9 * span)[box], (self.hi - 1e-9 * span)[box]
            )
        return x

    def to_unconstrained(self, x: np.ndarray) -> np.ndarray:
        x = self.clip_interior(x)
        s = np.asarray(x, dtype=float).copy()
        k = self.kind
        m = k == self._LOWER
        s[m] = np.log(x[m] - self.lo[m])
        m = k == self._UPPER
        s[m] = np.log(self.hi[m] - x[m])
        m = k == self._BOX
        if np.any(m):
            z = (x[m] - self.lo[m]) / (self.hi[m] - self.lo[m])
            s[m] = np.log(z) - np.log1p(-z)
        return s

    def to_native(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        x = s.copy()
        k = self.kind
        m = k == self._LOWER
        x[m] = self.lo[m] + np.exp(s[m])
        m = k == self._UPPER
        x[m] = self.hi[m] - np.exp(s[m])
        m = k == self._BOX
        if np.any(m):
            x[m] = self.lo[m] + (self.hi[m] - self.lo[m]) * expit(s[m])
        return x


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimationResult:
    """Fitted parameters plus the tracking solution at the optimum.

    The control trace in `solution` is the model-error signal: for a
    well-specified model at the true parameters it is ~0; persistent
    structure in it is the residual diagnostic. For the least-squares
    baseline the control trace is empty and `trajectory` holds the ODE
    solution at the observation times.
    """

    theta_hat: np.ndarray
    x0_hat: np.ndarray
    cost: float
    solution: TrackingSolution
    k_n: int | None
    lam: float | None
    optimizer_evals: int
    converged: bool
    method: str

    @property
    def hyper(self) -> tuple[int | None, float | None]:
        return (self.k_n, self.lam)


# ---------------------------------------------------------------------------
# shared simplex machinery
# ---------------------------------------------------------------------------

def _build_starts(
    theta_init: np.ndarray,
    transform: BoxTransform,
    n_starts: int,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Default multi-start set: init, scaled init, bounds midpoint, extras."""
    p = theta_init.shape[0]
    starts = [theta_init]
    if n_starts >= 2:
        starts.append(theta_init * rng.uniform(0.5, 1.5, size=p))
    if n_starts >= 3:
        box = (transform.kind == BoxTransform._BOX)
        mid = np.where(box, 0.5 * (transform.lo + transform.hi), theta_init)
        starts.append(mid)
    while len(starts) < n_starts:
        starts.append(theta_init * rng.uniform(0.5, 1.5, size=p))
    starts = [transform.clip_interior(s) for s in starts]
    unique: list[np.ndarray] = []
    for s in starts:
        if not any(np.array_equal(s, t) for t in unique):
            unique.append(s)
    return unique


class _SimplexOutcome(NamedTuple):
    s_best: np.ndarray
    cost: float
    evals: int
    success: bool


def _minimize_multistart(
    objective: Callable[[np.ndarray], float],
    starts_s: list[np.ndarray],
    max_evals: int,
) -> _SimplexOutcome:
    """Nelder-Mead from each start; keep the best finite optimum.

    Convergence is on simplex diameter (1e-6 relative to the start's scale);
    the function-value tolerance is disabled so flat plateaus of +inf do not
    stop the search early. Raises EstimationFailed when every start ends on
    a non-finite value.
    """
    best: _SimplexOutcome | None = None
    total = 0
    for s0 in starts_s:
        xatol = 1e-6 * max(1.0, float(np.max(np.abs(s0))))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            res = minimize(
                objective,
                s0,
                method="Nelder-Mead",
                options={
                    "xatol": xatol,
                    "fatol": np.inf,
                    "maxfev": max_evals,
                    "maxiter": max_evals,
                },
            )
        total += int(res.nfev)
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.cost:
            best = _SimplexOutcome(np.asarray(res.x), float(res.fun), 0, bool(res.success))
    if best is None:
        raise EstimationFailed(
            f"all {len(starts_s)} optimizer starts ended with non-finite cost"
        )
    return best._replace(evals=total)


def _guarded(fn: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], float]:
    """Turn numerical failures into +inf so the simplex can route around them."""

    def wrapped(s: np.ndarray) -> float:
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                value = fn(s)
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError):
            return np.inf
        return value if np.isfinite(value) else np.inf

    return wrapped


def _validate_theta_init(model: PseudoLinearModel, theta_init) -> np.ndarray:
    if theta_init is None:
        raise ConfigError("theta_init is required (no default initialization)")
    theta_init = np.asarray(theta_init, dtype=float)
    if theta_init.shape != (model.param_dim,):
        raise ConfigError(
            f"theta_init has shape {theta_init.shape}, expected ({model.param_dim},)"
        )
    lo, hi = model.param_bounds
    if np.any(theta_init < lo) or np.any(theta_init > hi):
        raise ConfigError("theta_init violates the model's parameter bounds")
    return theta_init


def _default_x0_init(model: PseudoLinearModel, obs: ObservationSet) -> np.ndarray:
    return np.linalg.pinv(model.obs_matrix) @ obs.values[0]


# ---------------------------------------------------------------------------
# tracking estimator
# ---------------------------------------------------------------------------

def estimate_tracking(
    model: PseudoLinearModel,
    obs: ObservationSet,
    k_n: int,
    lam: float | None,
    *,
    theta_init=None,
    horizon: float | None = None,
    profile_x0: bool = True,
    x0_init=None,
    weight_matrix=None,
    sdre_config: SdreConfig | None = None,
    n_starts: int = 3,
    max_evals: int = 2000,
    seed: int = 0,
    optimize: bool = True,
) -> EstimationResult:
    """Fit theta by minimizing the optimal tracking cost.

    With profile_x0=True (the default) the initial state is concentrated out
    in closed form inside every cost evaluation and only theta is searched;
    with profile_x0=False the initial state is appended to the optimization
    vector (unbounded coordinates, initialized from the first observation
    and shared across starts).

    The control weight is lam * identity unless an explicit weight_matrix is
    supplied (the time-varying-parameter extension uses a two-block one).
    """
    theta_init = _validate_theta_init(model, theta_init)
    if horizon is None:
        horizon = float(obs.times[-1])
    if weight_matrix is None:
        if lam is None or lam <= 0:
            raise ConfigError("lam must be a positive control-weight scale")
        weight = lam * np.eye(model.control_dim)
    else:
        weight = np.asarray(weight_matrix, dtype=float)
    if n_starts < 1:
        raise ConfigError("n_starts must be >= 1")
    grid = build_grid(obs, k_n, horizon)
    cfg = sdre_config if sdre_config is not None else SdreConfig()
    lo, hi = model.param_bounds
    p = model.param_dim
    d = model.state_dim

    if profile_x0:
        transform = BoxTransform(lo, hi)
    else:
        # joint vector (theta, x0): x0 coordinates are unconstrained
        transform = BoxTransform(
            np.concatenate([lo, np.full(d, -np.inf)]),
            np.concatenate([hi, np.full(d, np.inf)]),
        )
        if x0_init is None:
            x0_init = _default_x0_init(model, obs)
        x0_init = np.asarray(x0_init, dtype=float)
        if x0_init.shape != (d,):
            raise ConfigError(f"x0_init has shape {x0_init.shape}, expected ({d},)")

    m = grid.n_intervals
    times = grid.points[:m]
    zero_ref = np.zeros((m, d))

    def tracking_objective(s: np.ndarray) -> float:
        native = transform.to_native(s)
        theta = native[:p]
        x0 = None if profile_x0 else native[p:]
        if model.is_linear:
            # A does not depend on the trajectory: one backward pass is exact
            A_seq = model.system_matrices(zero_ref, times, theta)
            sys = LinearizedSystem(A_seq, model.control_matrix, model.obs_matrix, weight)
            rpass = riccati_backward(sys, grid)
            if profile_x0:
                value, _ = profiled_tracking_cost(grid, rpass)
                return value
            return tracking_cost(grid, rpass, x0)
        if profile_x0:
            return sdre_track_profiled(model, theta, grid, weight, cfg).cost
        return sdre_track(model, theta, x0, grid, weight, cfg).cost

    objective = _guarded(tracking_objective)

    if optimize:
        rng = np.random.default_rng(seed)
        theta_starts = _build_starts(theta_init, BoxTransform(lo, hi), n_starts, rng)
        if profile_x0:
            starts_s = [transform.to_unconstrained(t) for t in theta_starts]
        else:
            starts_s = [
                transform.to_unconstrained(np.concatenate([t, x0_init]))
                for t in theta_starts
            ]
        outcome = _minimize_multistart(objective, starts_s, max_evals)
        native = transform.to_native(outcome.s_best)
        evals = outcome.evals
        nm_ok = outcome.success
    else:
        native = np.concatenate([theta_init, x0_init]) if not profile_x0 else theta_init
        native = transform.clip_interior(native)
        evals = 1
        nm_ok = True

    theta_hat = native[:p]
    try:
        if profile_x0:
            sol = sdre_track_profiled(model, theta_hat, grid, weight, cfg)
            x0_hat = sol.x0_used
            method = "tracking-profiled"
        else:
            x0_hat = native[p:]
            sol = sdre_track(model, theta_hat, x0_hat, grid, weight, cfg)
            method = "tracking-joint"
    except NumericalError as exc:
        raise EstimationFailed(
            f"final tracking solve failed at the selected parameters: {exc}"
        ) from exc
    return EstimationResult(
        theta_hat=theta_hat,
        x0_hat=np.asarray(x0_hat, dtype=float),
        cost=float(sol.cost),
        solution=sol,
        k_n=k_n,
        lam=lam,
        optimizer_evals=evals,
        converged=bool(nm_ok and sol.converged),
        method=method,
    )


# ---------------------------------------------------------------------------
# nonlinear least-squares baseline
# ---------------------------------------------------------------------------

def _ode_solution_at(
    model: PseudoLinearModel,
    theta: np.ndarray,
    x0: np.ndarray,
    times: np.ndarray,
    step: float,
) -> np.ndarray:
    """Unperturbed model solution at the given times, starting at t = 0."""
    if times[0] > 0.0:
        full = np.concatenate([[0.0], times])
        skip = 1
    else:
        full = times
        skip = 0
    if model.is_linear and model.autonomous:
        A = model.system_matrix(x0, 0.0, theta)
        states = rk4_linear_at_times(A, x0, full, step)
    else:
        def field(x, t):
            return model.system_matrix(x, t, theta) @ x

        states = rk4_at_times(field, x0, full, step)
    return states[skip:]


def nls_estimate(
    model: PseudoLinearModel,
    obs: ObservationSet,
    theta_init=None,
    *,
    horizon: float | None = None,
    x0_init=None,
    integrator_step: float | None = None,
    n_starts: int = 3,
    max_evals: int = 2000,
    seed: int = 0,
    optimize: bool = True,
) -> EstimationResult:
    """Classic least squares: fit (theta, x0) to the unperturbed ODE solution.

    Same simplex/multi-start machinery as the tracking estimator; the model
    is solved by fixed-step RK4 (default step horizon/500). The returned
    solution has an empty control trace and holds the fitted trajectory at
    the observation times.
    """
    theta_init = _validate_theta_init(model, theta_init)
    if horizon is None:
        horizon = float(obs.times[-1])
    if integrator_step is None:
        integrator_step = horizon / 500.0
    if x0_init is None:
        x0_init = _default_x0_init(model, obs)
    x0_init = np.asarray(x0_init, dtype=float)
    d = model.state_dim
    p = model.param_dim
    lo, hi = model.param_bounds
    transform = BoxTransform(
        np.concatenate([lo, np.full(d, -np.inf)]),
        np.concatenate([hi, np.full(d, np.inf)]),
    )
    y = obs.values
    t_obs = obs.times

    def nls_objective(s: np.ndarray) -> float:
        native = transform.to_native(s)
        theta, x0 = native[:p], native[p:]
        states = _ode_solution_at(model, theta, x0, t_obs, integrator_step)
        resid = y - states @ model.obs_matrix.T
        return float(np.sum(resid * resid))

    objective = _guarded(nls_objective)

    if optimize:
        rng = np.random.default_rng(seed)
        theta_starts = _build_starts(theta_init, BoxTransform(lo, hi), n_starts, rng)
        starts_s = [
            transform.to_unconstrained(np.concatenate([t, x0_init]))
            for t in theta_starts
        ]
        outcome = _minimize_multistart(objective, starts_s, max_evals)
        native = transform.to_native(outcome.s_best)
        evals = outcome.evals
        nm_ok = outcome.success
    else:
        native = transform.clip_interior(np.concatenate([theta_init, x0_init]))
        evals = 1
        nm_ok = True

    theta_hat, x0_hat = native[:p], native[p:]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        states = _ode_solution_at(model, theta_hat, x0_hat, t_obs, integrator_step)
        resid = y - states @ model.obs_matrix.T
        cost = float(np.sum(resid * resid))
    if not np.isfinite(cost):
        raise EstimationFailed("least-squares solution is non-finite at the optimum")
    sol = TrackingSolution(
        control=np.zeros((0, model.control_dim)),
        trajectory=states,
        cost=float(cost),
        x0_used=x0_hat,
        iterations=1,
        converged=True,
    )
    return EstimationResult(
        theta_hat=theta_hat,
        x0_hat=x0_hat,
        cost=float(cost),
        solution=sol,
        k_n=None,
        lam=None,
        optimizer_evals=evals,
        converged=bool(nm_ok),
        method="nls",
    )


# ---------------------------------------------------------------------------
# forward cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperGrid:
    """Candidate (k_n, lambda) grid plus the number of validation segments."""

    k_n_values: tuple[int, ...]
    lambda_values: tuple[float, ...]
    n_segments: int = 2

    def __post_init__(self):
        kns = tuple(int(k) for k in self.k_n_values)
        lams = tuple(float(v) for v in self.lambda_values)
        if not kns or not lams:
            raise ConfigError("hyperparameter grid must be non-empty")
        if any(k < 1 for k in kns):
            raise ConfigError("k_n values must be positive integers")
        if any(v <= 0 for v in lams):
            raise ConfigError("lambda values must be positive")
        if self.n_segments < 2:
            raise ConfigError("forward validation needs at least 2 segments")
        object.__setattr__(self, "k_n_values", kns)
        object.__setattr__(self, "lambda_values", lams)


def ep_score(
    model: PseudoLinearModel,
    theta: np.ndarray,
    trajectory: np.ndarray,
    grid: TrackingGrid,
    n_segments: int = 2,
    step: float | None = None,
) -> float:
    """Forward prediction error of a fitted tracking solution.

    The horizon is split into n_segments equal parts (boundaries snapped to
    grid nodes). In each segment the *unperturbed* model is integrated by
    RK4 from the optimal perturbed trajectory's value at the left boundary,
    and squared prediction residuals are accumulated at the observations in
    that segment. Observations sitting exactly on a boundary are scored in
    the earlier segment; the very first segment also scores an observation
    at t = 0, so it partially re-scores training fit — that is the formula
    taken literally, and it cancels when comparing hyperparameters.

    Returns +inf when the forecast leaves the finite range.
    """
    m = grid.n_intervals
    if trajectory.shape[0] != m + 1:
        raise ValueError("trajectory does not match the grid")
    if n_segments < 1:
        raise ConfigError("n_segments must be >= 1")
    if step is None:
        step = float(np.min(grid.deltas))
    pts = grid.points
    horizon = pts[-1]
    bounds_idx = [
        int(np.argmin(np.abs(pts - h * horizon / n_segments)))
        for h in range(n_segments + 1)
    ]
    C = model.obs_matrix
    lin = model.is_linear and model.autonomous
    A = model.system_matrix(trajectory[0], 0.0, theta) if lin else None

    def field(x, t):
        return model.system_matrix(x, t, theta) @ x

    total = 0.0
    for h in range(n_segments):
        a_idx, b_idx = bounds_idx[h], bounds_idx[h + 1]
        lo_cmp = (lambda i: i >= a_idx) if h == 0 else (lambda i: i > a_idx)
        targets = [i for i in grid.obs_indices if lo_cmp(i) and i <= b_idx]
        if not targets:
            continue
        t_start = pts[a_idx]
        x_start = trajectory[a_idx]
        t_rel = pts[targets] - t_start  # relative forecast times
        if t_rel[0] == 0.0:  # a target sits on the restart node itself
            full_t, drop = t_rel, 0
        else:
            full_t, drop = np.concatenate([[0.0], t_rel]), 1
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            try:
                if lin:
                    states = rk4_linear_at_times(A, x_start, full_t, step)[drop:]
                else:
                    def shifted(x, t, _t0=t_start):
                        return field(x, t + _t0)

                    states = rk4_at_times(shifted, x_start, full_t, step)[drop:]
            except FloatingPointError:
                return np.inf
        if not np.all(np.isfinite(states)):
            return np.inf
        resid = grid.ydata[targets] - states @ C.T
        total += float(np.sum(resid * resid))
    return total if np.isfinite(total) else np.inf


class SelectionOutcome(NamedTuple):
    """Winner of the hyperparameter search plus the full score table."""

    hyper: tuple[int, float]
    table: list[tuple[int, float, float]]
    best_result: EstimationResult


def select_hyperparams(
    model: PseudoLinearModel,
    obs: ObservationSet,
    hyper_grid: HyperGrid,
    theta_init=None,
    *,
    horizon: float | None = None,
    profile_x0: bool = True,
    sdre_config: SdreConfig | None = None,
    n_starts: int = 3,
    max_evals: int = 2000,
    seed: int = 0,
) -> SelectionOutcome:
    """Fit every (k_n, lambda) cell and score it by forward validation.

    Failed cells carry a score of +inf; ties are broken toward smaller
    lambda, then smaller k_n (prefer the least model relaxation that the
    data cannot distinguish). The forecast integrator step is fixed to the
    smallest mesh width of the finest candidate grid so all cells are
    scored on equal footing.
    """
    if horizon is None:
        horizon = float(obs.times[-1])
    finest = build_grid(obs, max(hyper_grid.k_n_values), horizon)
    ep_step = float(np.min(finest.deltas))

    table: list[tuple[int, float, float]] = []
    fits: dict[tuple[int, float], EstimationResult] = {}
    for k_n, lam in product(hyper_grid.k_n_values, hyper_grid.lambda_values):
        try:
            result = estimate_tracking(
                model, obs, k_n, lam,
                theta_init=theta_init, horizon=horizon, profile_x0=profile_x0,
                sdre_config=sdre_config, n_starts=n_starts,
                max_evals=max_evals, seed=seed,
            )
            grid = build_grid(obs, k_n, horizon)
            score = ep_score(
                model, result.theta_hat, result.solution.trajectory, grid,
                hyper_grid.n_segments, ep_step,
            )
            fits[(k_n, lam)] = result
        except (EstimationFailed, NumericalError):
            score = np.inf
        table.append((k_n, lam, float(score)))

    finite = [row for row in table if np.isfinite(row[2])]
    if not finite:
        raise EstimationFailed("every hyperparameter cell failed to estimate")
    k_best, lam_best, _ = min(finite, key=lambda row: (row[2], row[1], row[0]))
    return SelectionOutcome((k_best, lam_best), table, fits[(k_best, lam_best)])


# ---------------------------------------------------------------------------
# observability diagnostic
# ---------------------------------------------------------------------------

class ObservabilityReport(NamedTuple):
    gram: np.ndarray
    invertible: bool
    rcond: float


def observability_check(
    model: PseudoLinearModel,
    theta,
    grid: TrackingGrid,
    reference_trajectory=None,
) -> ObservabilityReport:
    """Gram-matrix test for whether the data can pin down the initial state.

    Assembles O = C'C + sum_i P_i' C'C P_i with P_i the ordered product of
    the Euler transition factors (I + dt_j A_j) along the reference
    trajectory, i running over interior grid nodes. O invertible (rcond of
    the symmetric eigenvalues above 1e-12) is equivalent to the initial-state
    profiling being well posed in the noiseless limit.

    The reference may be a full (m+1, d) trajectory, a single state (used as
    a constant reference), or omitted (least-squares preimage of the first
    observation).
    """
    theta = np.asarray(theta, dtype=float)
    m = grid.n_intervals
    d = model.state_dim
    if reference_trajectory is None:
        ref = np.broadcast_to(default_reference_state(model, grid), (m, d))
    else:
        ref = np.asarray(reference_trajectory, dtype=float)
        if ref.ndim == 1:
            ref = np.broadcast_to(ref, (m, d))
        elif ref.shape[0] >= m:
            ref = ref[:m]
        else:
            raise ValueError(
                f"reference trajectory has {ref.shape[0]} states for {m} intervals"
            )
    A_seq = model.system_matrices(ref, grid.points[:m], theta)
    C = model.obs_matrix
    CtC = C.T @ C
    O = CtC.copy()
    Phi = np.eye(d)
    for i in range(1, m):
        Phi = (np.eye(d) + grid.deltas[i - 1] * A_seq[i - 1]) @ Phi
        O += Phi.T @ CtC @ Phi
    eig = np.linalg.eigvalsh(0.5 * (O + O.T))
    lam_max = float(eig[-1])
    rcond = 0.0 if lam_max <= 0 else max(float(eig[0]), 0.0) / lam_max
    return ObservabilityReport(O, bool(rcond > _RCOND_MIN), rcond)


# ---------------------------------------------------------------------------
# time-varying parameter estimation
# ---------------------------------------------------------------------------

def estimate_semiparametric(
    spec: SemiParamSpec,
    obs: ObservationSet,
    k_n: int,
    theta_init=None,
    *,
    horizon: float | None = None,
    sdre_config: SdreConfig | None = None,
    n_starts: int = 3,
    max_evals: int = 2000,
    seed: int = 0,
    optimize: bool = True,
) -> tuple[EstimationResult, np.ndarray, TrackingGrid]:
    """Estimate finite-dimensional parameters plus a time-varying coefficient.

    The coefficient rides along as extra states of the augmented model (its
    value and derivative), so the inner solve recovers its path while theta
    is optimized as usual, with the two-block control weight from the spec.
    Returns (result, coefficient path on the grid nodes, grid); the path has
    one row per grid node and one column per functional dimension.
    """
    model = extend_semiparametric(spec)
    weight = semiparam_weight_matrix(spec)
    if horizon is None:
        horizon = float(obs.times[-1])
    result = estimate_tracking(
        model, obs, k_n, spec.lambda1,
        theta_init=theta_init, horizon=horizon, profile_x0=True,
        weight_matrix=weight, sdre_config=sdre_config, n_starts=n_starts,
        max_evals=max_evals, seed=seed, optimize=optimize,
    )
    d, d_f = model.semiparam_dims
    a_path = result.solution.trajectory[:, d:d + d_f]
    grid = build_grid(obs, k_n, horizon)
    return result, a_path, grid


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def sig12(x: float) -> float:
    """Round to 12 significant digits (the file-output precision contract)."""
    return float(f"{float(x):.12g}")


def _round_nested(obj):
    if isinstance(obj, float):
        return sig12(obj)
    if isinstance(obj, (list, tuple)):
        return [_round_nested(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _round_nested(v) for k, v in obj.items()}
    return obj


def result_to_dict(result: EstimationResult) -> dict:
    """JSON-ready view of an estimation result (12 significant digits)."""
    return _round_nested(
        {
            "method": result.method,
            "theta": result.theta_hat.tolist(),
            "x0": result.x0_hat.tolist(),
            "cost": result.cost,
            "hyper": {"k_n": result.k_n, "lambda": result.lam},
            "optimizer_evals": result.optimizer_evals,
            "converged": result.converged,
            "iterations": result.solution.iterations,
            "control_trace": result.solution.control.tolist(),
        }
    )


def write_result_json(path, result: EstimationResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_dict(result), fh, indent=2)
        fh.write("\n")


def write_control_trace_csv(path, times, control) -> None:
    """Control trace as CSV: t, u1..u_{d_u} (one row per grid interval)."""
    control = np.asarray(control, dtype=float)
    times = np.asarray(times, dtype=float)
    if control.ndim != 2 or times.shape[0] != control.shape[0]:
        raise ValueError("need one time per control row")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"u{i + 1}" for i in range(control.shape[1])])
        for t, row in zip(times, control):
            writer.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])


def write_ep_table_csv(path, table) -> None:
    """Hyperparameter score table as CSV: k_n, lambda, EP."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_n", "lambda", "EP"])
        for k_n, lam, score in table:
            writer.writerow([int(k_n), f"{lam:.12g}", f"{score:.12g}"])
