"""Fixed-step integrators shared by the simulation and estimation layers.

Nothing adaptive here on purpose: reproducibility of the benchmark runs
matters more than squeezing accuracy out of a step controller, and the
estimation math (discrete costs, forecast scoring) is defined on fixed
grids anyway.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Field = Callable[[np.ndarray, float], np.ndarray]


def _rk4_step(field: Field, x: np.ndarray, t: float, h: float) -> np.ndarray:
    k1 = field(x, t)
    k2 = field(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = field(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = field(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _segment_steps(a: float, b: float, step: float) -> int:
    span = b - a
    if span <= 0:
        raise ValueError("times must be strictly increasing")
    return max(1, int(np.ceil(span / step - 1e-12)))


def rk4_at_times(
    field: Field, x0: np.ndarray, times: np.ndarray, step: float
) -> np.ndarray:
    """Integrate xdot = field(x, t) landing exactly on each requested time.

    x0 is the state at times[0]. Each gap is split into equal substeps no
    longer than `step`. Returns the states at `times`, shape (len, d).
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((len(times), len(x)))
    out[0] = x
    for i in range(len(times) - 1):
        a, b = times[i], times[i + 1]
        nsteps = _segment_steps(a, b, step)
        h = (b - a) / nsteps
        t = a
        for _ in range(nsteps):
            x = _rk4_step(field, x, t, h)
            t += h
        out[i + 1] = x
    return out


def rk4_transition(A: np.ndarray, h: float) -> np.ndarray:
    """One-step map of classical RK4 applied to xdot = A x with step h.

    For a linear autonomous field the four stages collapse to the degree-4
    Taylor polynomial of exp(hA); using it directly gives the same states
    as stepping RK4, at matrix-vector cost.
    """
    hA = h * A
    P = np.eye(A.shape[0]) + hA
    hA2 = hA @ hA
    P += hA2 / 2.0
    P += (hA2 @ hA) / 6.0
    P += (hA2 @ hA2) / 24.0
    return P


def rk4_linear_at_times(
    A: np.ndarray, x0: np.ndarray, times: np.ndarray, step: float
) -> np.ndarray:
    """RK4-equivalent propagation for a constant system matrix."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((len(times), len(x)))
    out[0] = x
    cache: dict[float, np.ndarray] = {}
    for i in range(len(times) - 1):
        a, b = times[i], times[i + 1]
        nsteps = _segment_steps(a, b, step)
        h = (b - a) / nsteps
        P = cache.get(h)
        if P is None:
            P = rk4_transition(A, h)
            cache[h] = P
        for _ in range(nsteps):
            x = P @ x
        out[i + 1] = x
    return out


def euler_pseudolinear(
    system_matrix: Callable[[np.ndarray, float, np.ndarray], np.ndarray],
    theta: np.ndarray,
    x0: np.ndarray,
    points: np.ndarray,
) -> np.ndarray:
    """Euler recursion x_{j+1} = (I + dt_j A(x_j, t_j)) x_j on a given grid.

    This is exactly the discrete-time system the tracking cost is built on,
    so data generated this way is fitted perfectly (zero cost) at the true
    parameters.
    """
    points = np.asarray(points, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((len(points), len(x)))
    out[0] = x
    for j in range(len(points) - 1):
        dt = points[j + 1] - points[j]
        x = x + dt * (system_matrix(x, points[j], theta) @ x)
        out[j + 1] = x
    return out


def refine_times(times: np.ndarray, step: float) -> np.ndarray:
    """All substep times rk4_at_times would visit, anchors included."""
    times = np.asarray(times, dtype=float)
    fine = [times[0]]
    for i in range(len(times) - 1):
        a, b = times[i], times[i + 1]
        nsteps = _segment_steps(a, b, step)
        for k in range(1, nsteps):
            fine.append(a + (b - a) * (k / nsteps))
        fine.append(b)
    return np.asarray(fine)
