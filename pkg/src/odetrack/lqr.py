"""Discrete linear-quadratic tracking on an observation grid.

Given a sequence of system matrices A_j along the grid, a control channel B,
an observation map C and a control weight U, the tracking problem is

    min_u  sum_j dt_j ( w_j ||C x_j - y_j||^2 + u_j' U u_j )  + terminal term
    s.t.   x_{j+1} = (I + dt_j A_j) x_j + dt_j B u_j

The optimum is computed by a backward Riccati-type recursion on (R_j, h_j)
plus a scalar data term, after which the cost is available in closed form
for any initial state — including the profiled initial state that minimizes
it. The forward pass reconstructs the optimal control and trajectory.

A dense least-squares solver over the stacked control vector doubles as a
ground-truth oracle for small instances; it shares no code with the
recursion on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve

from .errors import DivergenceError, SingularInitialCost
from .grids import TrackingGrid

_SYM_RTOL = 1e-12
_RCOND_MIN = 1e-12


@dataclass(frozen=True)
class LinearizedSystem:
    """Time-varying linear dynamics frozen along some reference trajectory.

    A_seq has one matrix per grid interval (j = 0..m-1). U must be symmetric
    positive definite; B may be rank deficient here (the model layer enforces
    full column rank for real models, but zero-control systems are useful in
    tests).
    """

    A_seq: np.ndarray  # (m, d, d)
    B: np.ndarray      # (d, d_u)
    C: np.ndarray      # (d', d)
    U: np.ndarray      # (d_u, d_u)

    def __post_init__(self):
        A_seq = np.asarray(self.A_seq, dtype=float)
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        U = np.asarray(self.U, dtype=float)
        if A_seq.ndim != 3 or A_seq.shape[1] != A_seq.shape[2]:
            raise ValueError(f"A_seq must be (m, d, d), got {A_seq.shape}")
        d = A_seq.shape[1]
        if B.ndim != 2 or B.shape[0] != d:
            raise ValueError(f"B must be (d, d_u) with d={d}, got {B.shape}")
        if C.ndim != 2 or C.shape[1] != d:
            raise ValueError(f"C must be (d', d) with d={d}, got {C.shape}")
        du = B.shape[1]
        if U.shape != (du, du):
            raise ValueError(f"U must be ({du}, {du}), got {U.shape}")
        scale = np.max(np.abs(U)) or 1.0
        if np.max(np.abs(U - U.T)) > _SYM_RTOL * scale:
            raise ValueError("control weight U must be symmetric")
        try:
            np.linalg.cholesky(U)
        except np.linalg.LinAlgError:
            raise ValueError("control weight U must be positive definite") from None
        object.__setattr__(self, "A_seq", A_seq)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "U", U)

    @property
    def state_dim(self) -> int:
        return self.A_seq.shape[1]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class RiccatiPass:
    """Everything the backward recursion produces.

    R_seq[j], h_seq[j] define the cost-to-go from grid node j:
    cost = x' R_j x + 2 h_j' x + (data terms). alpha0 is the accumulated
    scalar data term at j = 0, so the full-horizon cost is available in
    closed form without a forward pass. chol_seq[j] caches the lower
    Cholesky factor of U + dt_j B' R_{j+1} B for reuse by the forward pass.
    """

    R_seq: np.ndarray    # (m+1, d, d), symmetric PSD
    h_seq: np.ndarray    # (m+1, d)
    alpha0: float
    chol_seq: np.ndarray  # (m, d_u, d_u)


@dataclass(frozen=True)
class TrackingSolution:
    """Optimal perturbation and perturbed trajectory for one tracking solve."""

    control: np.ndarray     # (m, d_u)
    trajectory: np.ndarray  # (m+1, d)
    cost: float
    x0_used: np.ndarray
    iterations: int = 1
    converged: bool = True


def riccati_backward(sys: LinearizedSystem, grid: TrackingGrid) -> RiccatiPass:
    """Run the backward recursion for the discrete tracking problem.

    The terminal condition applies the trailing mesh width (and the terminal
    observation weight, so grids extending past the last observation carry
    no terminal penalty):

        R_m = dt_m w_m C'C,  h_m = -dt_m w_m C'y_m

    and each step folds in one interval:

        R_j = M_j' R_{j+1} M_j + dt_j w_j C'C
              - dt_j (M_j' R_{j+1} B) G_j (B' R_{j+1} M_j)
        h_j = M_j'(h_{j+1} - dt_j R_{j+1} B G_j B' h_{j+1}) - dt_j w_j C'y_j

    with M_j = I + dt_j A_j and G_j = (U + dt_j B' R_{j+1} B)^{-1}, applied
    through Cholesky solves (the inverse is never formed). R is
    re-symmetrized every step.
    """
    A_seq, B, C, U = sys.A_seq, sys.B, sys.C, sys.U
    m = grid.n_intervals
    if A_seq.shape[0] != m:
        raise ValueError(f"A_seq has {A_seq.shape[0]} matrices for {m} intervals")
    d = sys.state_dim
    du = sys.control_dim
    dt = grid.deltas
    w = grid.weights
    Y = grid.ydata
    if Y.shape[1] != C.shape[0]:
        raise ValueError("grid data dimension does not match C")

    CtC = C.T @ C
    Cty = Y @ C  # row j holds C' y_j
    yy = np.einsum("ij,ij->i", Y, Y)
    b_is_eye = du == d and np.array_equal(B, np.eye(d))

    dt_m = grid.terminal_delta
    wm = w[m]
    R = (dt_m * wm) * CtC
    h = -(dt_m * wm) * Cty[m]
    alpha = dt_m * wm * yy[m]

    R_seq = np.empty((m + 1, d, d))
    h_seq = np.empty((m + 1, d))
    chol_seq = np.empty((m, du, du))
    R_seq[m] = R
    h_seq[m] = h
    eye = np.eye(d)

    rhs = np.empty((du, d + 1))
    for j in range(m - 1, -1, -1):
        dj = dt[j]
        M = eye + dj * A_seq[j]
        if b_is_eye:
            RB = R
            F = U + dj * R
            Bh = h
        else:
            RB = R @ B
            F = U + dj * (B.T @ RB)
            Bh = B.T @ h
        try:
            L = np.linalg.cholesky(0.5 * (F + F.T))
        except np.linalg.LinAlgError:
            raise DivergenceError(
                f"control-weight system lost positive definiteness at step {j}"
            ) from None
        chol_seq[j] = L
        E = RB.T @ M  # B' R_{j+1} M_j
        rhs[:, :d] = E
        rhs[:, d] = Bh
        sol = cho_solve((L, True), rhs, check_finite=False)
        X1 = sol[:, :d]   # G B' R M
        X2 = sol[:, d]    # G B' h
        Rn = M.T @ (R @ M) - dj * (E.T @ X1)
        wj = w[j]
        if wj:
            Rn += (dj * wj) * CtC
        Rn = 0.5 * (Rn + Rn.T)
        alpha += dj * wj * yy[j] - dj * (Bh @ X2)
        h = M.T @ (h - dj * (RB @ X2))
        if wj:
            h -= (dj * wj) * Cty[j]
        R_seq[j] = Rn
        h_seq[j] = h
        R = Rn
    return RiccatiPass(R_seq, h_seq, float(alpha), chol_seq)


def forward_optimal(
    sys: LinearizedSystem,
    grid: TrackingGrid,
    rpass: RiccatiPass,
    x0: np.ndarray,
) -> TrackingSolution:
    """Reconstruct the optimal control and trajectory from a backward pass.

    u_j = -G_j B'(R_{j+1} M_j x_j + h_{j+1}), then the state follows the
    controlled Euler dynamics. The returned cost is the closed-form value
    (it agrees with direct_cost of the returned control to rounding).
    """
    A_seq, B = sys.A_seq, sys.B
    m = grid.n_intervals
    dt = grid.deltas
    d = sys.state_dim
    du = sys.control_dim
    b_is_eye = du == d and np.array_equal(B, np.eye(d))

    X = np.empty((m + 1, d))
    Uc = np.empty((m, du))
    x = np.asarray(x0, dtype=float).copy()
    X[0] = x
    R_seq, h_seq, chol_seq = rpass.R_seq, rpass.h_seq, rpass.chol_seq
    for j in range(m):
        dj = dt[j]
        v = x + dj * (A_seq[j] @ x)  # M_j x
        g = R_seq[j + 1] @ v + h_seq[j + 1]
        if not b_is_eye:
            g = B.T @ g
        u = -cho_solve((chol_seq[j], True), g, check_finite=False)
        x = v + dj * (B @ u) if not b_is_eye else v + dj * u
        Uc[j] = u
        X[j + 1] = x
    cost = tracking_cost(grid, rpass, X[0])
    return TrackingSolution(Uc, X, cost, np.asarray(x0, dtype=float).copy())


def tracking_cost(grid: TrackingGrid, rpass: RiccatiPass, x0: np.ndarray) -> float:
    """Closed-form optimal tracking cost started from a given initial state."""
    x0 = np.asarray(x0, dtype=float)
    R0 = rpass.R_seq[0]
    h0 = rpass.h_seq[0]
    return float(x0 @ (R0 @ x0) + 2.0 * (h0 @ x0) + rpass.alpha0)


def initial_state_rcond(rpass: RiccatiPass) -> float:
    """Reciprocal condition number of R_0 (symmetric eigenvalue ratio)."""
    eig = np.linalg.eigvalsh(rpass.R_seq[0])
    lam_max = float(eig[-1])
    if lam_max <= 0.0:
        return 0.0
    return max(float(eig[0]), 0.0) / lam_max


def profiled_tracking_cost(
    grid: TrackingGrid, rpass: RiccatiPass
) -> tuple[float, np.ndarray]:
    """Minimize the closed-form cost over the initial state as well.

    Returns (cost, x0_hat) with x0_hat = -R_0^{-1} h_0. Raises
    SingularInitialCost when R_0 is numerically singular (rcond below
    1e-12) — typically a sign the system is not observable enough to pin
    the unobserved components of the initial state.
    """
    rcond = initial_state_rcond(rpass)
    if rcond < _RCOND_MIN:
        raise SingularInitialCost(
            "initial-state profiling failed: R_0 is numerically singular "
            f"(rcond {rcond:.3e} < {_RCOND_MIN:g}); the data does not identify "
            "the initial state — run an observability check on this system",
            rcond=rcond,
        )
    R0 = rpass.R_seq[0]
    h0 = rpass.h_seq[0]
    L = np.linalg.cholesky(R0)
    x0_hat = -cho_solve((L, True), h0, check_finite=False)
    value = float(rpass.alpha0 + h0 @ x0_hat)
    return value, x0_hat


def direct_cost(
    sys: LinearizedSystem,
    grid: TrackingGrid,
    control: np.ndarray,
    x0: np.ndarray,
) -> float:
    """Evaluate the tracking objective by simulating the controlled system.

    Deliberately independent of the recursion: Euler-forward under the given
    control, then the weighted residual/effort sum (terminal term under the
    same trailing-width convention as riccati_backward).
    """
    A_seq, B, C, U = sys.A_seq, sys.B, sys.C, sys.U
    m = grid.n_intervals
    dt = grid.deltas
    w = grid.weights
    Y = grid.ydata
    control = np.asarray(control, dtype=float)
    if control.shape != (m, sys.control_dim):
        raise ValueError(f"control must be (m, d_u) = {(m, sys.control_dim)}")

    x = np.asarray(x0, dtype=float).copy()
    total = 0.0
    for j in range(m):
        if w[j]:
            r = C @ x - Y[j]
            total += dt[j] * w[j] * float(r @ r)
        u = control[j]
        total += dt[j] * float(u @ (U @ u))
        x = x + dt[j] * (A_seq[j] @ x) + dt[j] * (B @ u)
    if w[m]:
        r = C @ x - Y[m]
        total += grid.terminal_delta * w[m] * float(r @ r)
    return total


_ORACLE_MAX_VARS = 64


def brute_force_control(
    sys: LinearizedSystem,
    grid: TrackingGrid,
    x0: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Ground-truth solver: dense least squares over the stacked control.

    Builds the exact map from the stacked control vector to every state,
    assembles all weighted residual rows and control-effort rows, and solves
    the normal equations. Only for small instances (m * d_u <= 64); this is
    the oracle the fast recursion is checked against, so it shares none of
    its machinery.
    """
    m = grid.n_intervals
    d = sys.state_dim
    du = sys.control_dim
    nvar = m * du
    if nvar > _ORACLE_MAX_VARS:
        raise ValueError(
            f"instance too large for the dense oracle: m*d_u = {nvar} > {_ORACLE_MAX_VARS}"
        )
    data = grid.ydata
    dt = grid.deltas
    w = grid.weights
    C = sys.C
    B = sys.B
    U = sys.U

    # affine map x_j = base_j + T_j z for the stacked control z
    base = np.empty((m + 1, d))
    T = np.zeros((m + 1, d, nvar))
    base[0] = np.asarray(x0, dtype=float)
    for j in range(m):
        M = np.eye(d) + dt[j] * sys.A_seq[j]
        base[j + 1] = M @ base[j]
        T[j + 1] = M @ T[j]
        T[j + 1][:, j * du:(j + 1) * du] += dt[j] * B

    Lu = np.linalg.cholesky(U)
    rows = []
    rhs = []
    for j in range(m + 1):
        dj = dt[j] if j < m else grid.terminal_delta
        if w[j]:
            scale = np.sqrt(dj * w[j])
            rows.append(scale * (C @ T[j]))
            rhs.append(scale * (data[j] - C @ base[j]))
    for j in range(m):
        block = np.zeros((du, nvar))
        block[:, j * du:(j + 1) * du] = np.sqrt(dt[j]) * Lu.T
        rows.append(block)
        rhs.append(np.zeros(du))
    S = np.vstack(rows)
    r = np.concatenate(rhs)
    H = S.T @ S
    g = S.T @ r
    z = np.linalg.solve(H, g)
    resid = S @ z - r
    return z.reshape(m, du), float(resid @ resid)


def solution_with(sol: TrackingSolution, **changes) -> TrackingSolution:
    """dataclasses.replace wrapper so callers don't import dataclasses."""
    return replace(sol, **changes)
