"""Iterated relinearization for state-dependent tracking problems.

For nonlinear pseudo-linear dynamics xdot = A(x, t) x the tracking problem
is not a single LQ solve: the system matrices depend on the trajectory. The
classic fix is to freeze A along the previous iterate's trajectory, solve
the resulting time-varying LQ problem exactly, and repeat until the
trajectory and cost stop moving. For genuinely linear models the second
iterate reproduces the first exactly, so the loop converges in two passes
with no special casing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .grids import TrackingGrid
from .lqr import (
    LinearizedSystem,
    forward_optimal,
    profiled_tracking_cost,
    riccati_backward,
    solution_with,
)
from .models import PseudoLinearModel

_DIVERGE_FACTOR = 1e6


@dataclass(frozen=True)
class SdreConfig:
    """Knobs for the relinearization loop.

    eps1/eps2 are *relative* tolerances: the trajectory test compares the
    squared change against eps1 * (1 + squared size of the new iterate), the
    cost test compares |S_l - S_{l-1}| against eps2 * (1 + |S_{l-1}|). Both
    must hold, and no exit is allowed before the second iteration. x0_ref
    optionally overrides the constant reference state used to seed the first
    linearization.
    """

    eps1: float = 1e-6
    eps2: float = 1e-8
    l_max: int = 25
    x0_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.l_max < 1:
            raise ValueError(f"l_max must be >= 1, got {self.l_max}")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("tolerances must be positive")


def default_reference_state(model: PseudoLinearModel, grid: TrackingGrid) -> np.ndarray:
    """Least-squares preimage of the first observation under C.

    Used to seed the linearization when no initial state is supplied (the
    profiled variant). For C with orthonormal-selection rows this is the
    observation padded with zeros.
    """
    first = grid.obs_indices[0]
    return np.linalg.pinv(model.obs_matrix) @ grid.ydata[first]


def _check_divergence(traj: np.ndarray, grid: TrackingGrid, iteration: int) -> None:
    obs = grid.ydata[grid.obs_indices]
    cap = _DIVERGE_FACTOR * max(1.0, float(np.max(np.abs(obs))) if obs.size else 1.0)
    mx = float(np.max(np.abs(traj)))
    if not np.isfinite(mx) or mx > cap:
        raise DivergenceError(
            f"relinearization diverged at iteration {iteration}: "
            f"trajectory magnitude {mx:.3e} exceeds {cap:.3e}",
            iteration=iteration,
        )


def _sdre_loop(
    model: PseudoLinearModel,
    theta: np.ndarray,
    grid: TrackingGrid,
    weight: np.ndarray,
    config: SdreConfig,
    x0: np.ndarray | None,
):
    """Shared engine. x0=None profiles the initial state each iteration."""
    m = grid.n_intervals
    times = grid.points[:m]
    if x0 is not None:
        ref0 = np.asarray(x0, dtype=float)
    elif config.x0_ref is not None:
        ref0 = np.asarray(config.x0_ref, dtype=float)
    else:
        ref0 = default_reference_state(model, grid)
    if ref0.shape != (model.state_dim,):
        raise ValueError(
            f"reference state has shape {ref0.shape}, expected ({model.state_dim},)"
        )

    ref_states = np.broadcast_to(ref0, (m, model.state_dim))
    prev_traj = None
    prev_cost = None
    best = None
    for it in range(1, config.l_max + 1):
        A_seq = model.system_matrices(ref_states, times, theta)
        sys = LinearizedSystem(A_seq, model.control_matrix, model.obs_matrix, weight)
        rpass = riccati_backward(sys, grid)
        if x0 is None:
            cost, x0_it = profiled_tracking_cost(grid, rpass)
            sol = forward_optimal(sys, grid, rpass, x0_it)
            sol = solution_with(sol, cost=cost)
        else:
            sol = forward_optimal(sys, grid, rpass, x0)
        _check_divergence(sol.trajectory, grid, it)
        if best is None or sol.cost < best.cost:
            best = solution_with(sol, iterations=it, converged=False)
        if it >= 2:
            dtraj = float(np.sum((sol.trajectory - prev_traj) ** 2))
            size = float(np.sum(sol.trajectory**2))
            ok_traj = dtraj < config.eps1 * (1.0 + size)
            ok_cost = abs(sol.cost - prev_cost) < config.eps2 * (1.0 + abs(prev_cost))
            if ok_traj and ok_cost:
                return solution_with(sol, iterations=it, converged=True)
        prev_traj = sol.trajectory
        prev_cost = sol.cost
        ref_states = sol.trajectory[:m]
    # iteration budget exhausted: hand back the best iterate seen, flagged
    return solution_with(best, iterations=config.l_max, converged=False)


def sdre_track(
    model: PseudoLinearModel,
    theta: np.ndarray,
    x0: np.ndarray,
    grid: TrackingGrid,
    weight: np.ndarray,
    config: SdreConfig | None = None,
):
    """Tracking solve with a fixed initial state."""
    theta = np.asarray(theta, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if config is None:
        config = SdreConfig()
    return _sdre_loop(model, theta, grid, np.asarray(weight, dtype=float), config, x0)


def sdre_track_profiled(
    model: PseudoLinearModel,
    theta: np.ndarray,
    grid: TrackingGrid,
    weight: np.ndarray,
    config: SdreConfig | None = None,
):
    """Tracking solve that also minimizes over the initial state.

    Each iteration profiles x0 in closed form from the current linearization
    (x0 = -R_0^{-1} h_0), and the reported cost is the profiled one.
    """
    theta = np.asarray(theta, dtype=float)
    if config is None:
        config = SdreConfig()
    return _sdre_loop(model, theta, grid, np.asarray(weight, dtype=float), config, None)
