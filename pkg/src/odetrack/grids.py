"""Observation sets and the discretization grid used by the tracking solver.

The solver works on a refinement of the observation times: between two
consecutive anchor points (observation times, plus the interval endpoints
0 and T when no observation sits there) we insert k_n - 1 uniformly spaced
interior points. Grid nodes that carry an observation get weight 1, all
others weight 0, and the data vector is extended with zeros at unweighted
nodes so the recursions never need to special-case missing data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError


@dataclass(frozen=True)
class ObservationSet:
    """Noisy observations y_i in R^{d'} at strictly increasing times t_i >= 0."""

    times: np.ndarray   # shape (n+1,)
    values: np.ndarray  # shape (n+1, d')

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.ndim != 2 or len(times) != len(values):
            raise ValueError(
                f"times {times.shape} and values {values.shape} do not line up"
            )
        if len(times) == 0:
            raise DataFormatError("empty observation set")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise DataFormatError("observations contain NaN or infinite entries")
        if times[0] < 0:
            raise DataFormatError(f"first observation time {times[0]} is negative")
        if np.any(np.diff(times) <= 0):
            raise DataFormatError("observation times must be strictly increasing")

    @property
    def n_obs(self) -> int:
        return len(self.times)

    @property
    def obs_dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TrackingGrid:
    """Discretization grid t^d_0 < ... < t^d_m with observation bookkeeping.

    Attributes
    ----------
    points : (m+1,) grid times, observation times appear exactly (bitwise).
    deltas : (m,) mesh widths, all positive; never assumed constant.
    weights : (m+1,) 0/1 indicator of "this node carries an observation".
    ydata : (m+1, d') observation values at weighted nodes, zeros elsewhere.
    obs_indices : (n+1,) grid index of each observation, in time order.
    """

    points: np.ndarray
    weights: np.ndarray
    ydata: np.ndarray
    obs_indices: np.ndarray
    deltas: np.ndarray = field(init=False)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        deltas = np.diff(points)
        if np.any(deltas <= 0):
            raise ValueError("grid points must be strictly increasing")
        if len(self.weights) != len(points) or len(self.ydata) != len(points):
            raise ValueError("weights/ydata length must match grid points")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "ydata", np.asarray(self.ydata, dtype=float))
        object.__setattr__(
            self, "obs_indices", np.asarray(self.obs_indices, dtype=int)
        )

    @property
    def n_intervals(self) -> int:
        return len(self.points) - 1

    @property
    def terminal_delta(self) -> float:
        """Mesh width attached to the terminal node (copies the last width)."""
        return float(self.deltas[-1])


def build_grid(obs: ObservationSet, k_n: int, horizon: float) -> TrackingGrid:
    """Refine the observation times into the solver grid.

    Anchors are the observation times plus 0 and `horizon` when no
    observation sits there; each anchor interval is split into k_n
    uniform subintervals. Observation times are kept bit-exact so that
    weighted nodes coincide with the data.
    """
    if k_n < 1:
        raise ValueError(f"k_n must be >= 1, got {k_n}")
    horizon = float(horizon)
    t = obs.times
    if t[-1] > horizon:
        raise DataFormatError(
            f"observation at t={t[-1]} lies beyond the horizon {horizon}"
        )

    anchors = list(t)
    if anchors[0] > 0.0:
        anchors.insert(0, 0.0)
    if anchors[-1] < horizon:
        anchors.append(horizon)

    points = []
    for a, b in zip(anchors[:-1], anchors[1:]):
        width = b - a
        points.append(a)
        for k in range(1, k_n):
            points.append(a + width * (k / k_n))
    points.append(anchors[-1])
    points = np.asarray(points, dtype=float)

    # observation nodes: anchors are preserved exactly, so positions of the
    # observation times inside `points` can be located by equality
    m1 = len(points)
    weights = np.zeros(m1)
    ydata = np.zeros((m1, obs.obs_dim))
    obs_indices = np.searchsorted(points, t)
    if not np.array_equal(points[obs_indices], t):
        raise AssertionError("internal: observation times lost during refinement")
    weights[obs_indices] = 1.0
    ydata[obs_indices] = obs.values
    return TrackingGrid(points, weights, ydata, obs_indices)


# ---------------------------------------------------------------------------
# CSV round trip. Header `t,y1,...,yd'`; floats are written with Python's
# shortest round-trip repr so that load(save(obs)) is bit-exact.
# ---------------------------------------------------------------------------

def save_observations(obs: ObservationSet, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"y{i + 1}" for i in range(obs.obs_dim)])
        for ti, yi in zip(obs.times, obs.values):
            writer.writerow([repr(float(ti))] + [repr(float(v)) for v in yi])


def load_observations(path: str | Path) -> ObservationSet:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: observation file not found")
    times = []
    values = []
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "t":
            raise DataFormatError(f"{path}: expected header starting with 't'")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} fields, got {len(row)}"
                )
            try:
                nums = [float(v) for v in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            times.append(nums[0])
            values.append(nums[1:])
    if not times:
        raise DataFormatError(f"{path}: no observation rows")
    return ObservationSet(np.asarray(times), np.asarray(values))
