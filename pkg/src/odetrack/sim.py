"""Synthetic data generation: clean ODE sampling and misspecified variants.

Clean data is the fixed-step RK4 solution of the raw vector field sampled at
the observation times, plus i.i.d. Gaussian observation noise drawn *after*
the whole path (so the path itself is independent of sigma). Misspecified
data replaces the path with one of three corruptions while keeping the same
observation-noise convention:

* multiplicative-white — the drift is perturbed by c_t * x with c_t held
  constant over each Euler step and redrawn N(0, sigma_c^2) every step;
* hypoelliptic — Euler-Maruyama with diffusion on a single designated
  component (the recovery variable of the neuron model), none elsewhere;
* full-system — the data comes from a larger deterministic model (the
  11-species community) and is projected onto the states the fitted model
  keeps.

Degenerate noise parameters (variance 0) delegate to the clean simulator so
the same seed produces bit-identical observations — the documented contract
for "turning off" a misspecification.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError
from .grids import ObservationSet
from .integrate import refine_times, rk4_at_times
from .models import (
    FULL_TO_RESTRICTED,
    ModelCatalogEntry,
    apply_impulse,
    full_glv_field,
    glv_full_demo_constants,
    load_glv_constants,
)

FULL_GLV_LABELS = tuple(range(1, 12))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiplicativeNoise:
    """Drift perturbation c_t * x, c_t ~ N(0, sigma_c2) per Euler step."""

    sigma_c2: float

    def __post_init__(self):
        if self.sigma_c2 < 0:
            raise ConfigError("sigma_c2 must be >= 0")


@dataclass(frozen=True)
class HypoellipticNoise:
    """Diffusion sqrt(sigma_r2) dW on one state component only."""

    sigma_r2: float
    component: int = 1  # the recovery variable in the neuron model

    def __post_init__(self):
        if self.sigma_r2 < 0:
            raise ConfigError("sigma_r2 must be >= 0")


@dataclass(frozen=True)
class FullSystemTruth:
    """Generate from the full community model; None uses the packaged demo."""

    constants_path: str | Path | None = None


Misspec = MultiplicativeNoise | HypoellipticNoise | FullSystemTruth


@dataclass(frozen=True)
class SimConfig:
    """One simulated data set: sampling design, noise level, provenance."""

    n_obs: int
    sigma: float
    seed: object = 0  # int or numpy SeedSequence
    misspec: Misspec | None = None
    integrator_step: float | None = None  # default horizon / 2000
    include_t0: bool = True

    def __post_init__(self):
        if self.n_obs < 2:
            raise ConfigError("n_obs must be >= 2")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")


def obs_times(horizon: float, n_obs: int, include_t0: bool = True) -> np.ndarray:
    """Equally spaced observation times on [0, horizon].

    n_obs counts the observations when t = 0 is included (the default);
    dropping t = 0 removes that first row and keeps the remaining times
    unchanged.
    """
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    times = np.linspace(0.0, horizon, n_obs)
    return times if include_t0 else times[1:]


def _resolve_step(cfg: SimConfig, horizon: float) -> float:
    step = cfg.integrator_step
    if step is None:
        step = horizon / 2000.0
    if step <= 0:
        raise ConfigError("integrator_step must be positive")
    return step


def _check_finite(states: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(states)):
        raise DivergenceError(f"{what} produced non-finite states")


def _sample_with_noise(
    states: np.ndarray,
    times: np.ndarray,
    obs_matrix: np.ndarray | None,
    sigma: float,
    rng: np.random.Generator,
) -> ObservationSet:
    values = states if obs_matrix is None else states @ np.asarray(obs_matrix).T
    if sigma > 0:
        values = values + rng.normal(0.0, sigma, size=values.shape)
    return ObservationSet(times=times, values=np.asarray(values, dtype=float))


# ---------------------------------------------------------------------------
# clean simulation
# ---------------------------------------------------------------------------

def simulate_ode(
    raw_field,
    theta,
    x0,
    times,
    cfg: SimConfig,
    obs_matrix=None,
) -> ObservationSet:
    """RK4 path of xdot = raw_field(x, t, theta) sampled at `times` + noise.

    x0 is the state at t = 0; `times` need not start at 0. sigma = 0 returns
    exact samples. The generator is seeded from cfg.seed, so identical
    configurations give identical observations.
    """
    times = np.asarray(times, dtype=float)
    theta = np.asarray(theta, dtype=float)
    step = _resolve_step(cfg, float(times[-1]))

    def field(x, t):
        return raw_field(x, t, theta)

    full = times if times[0] == 0.0 else np.concatenate([[0.0], times])
    skip = 0 if times[0] == 0.0 else 1
    with np.errstate(over="ignore", invalid="ignore"):
        states = rk4_at_times(field, np.asarray(x0, dtype=float), full, step)[skip:]
    _check_finite(states, "ODE integration")
    rng = np.random.default_rng(cfg.seed)
    return _sample_with_noise(states, times, obs_matrix, cfg.sigma, rng)


def simulate_entry(entry: ModelCatalogEntry, cfg: SimConfig, subject: int = 0) -> ObservationSet:
    """Simulate a catalog entry's standard experiment (clean or misspecified).

    Applies the entry's impulse susceptibility to the subject's initial
    state (the antibiotic perturbation of the community model) before
    integrating, and observes through the model's C.
    """
    if cfg.misspec is not None:
        return simulate_misspecified(entry, cfg, subject)
    x0 = apply_impulse(entry.initial_states()[subject], entry.impulse_susceptibility)
    times = obs_times(entry.horizon, cfg.n_obs, cfg.include_t0)
    return simulate_ode(
        entry.raw_field, entry.true_theta, x0, times, cfg, entry.model.obs_matrix
    )


# ---------------------------------------------------------------------------
# misspecified simulation
# ---------------------------------------------------------------------------

def em_multiplicative_path(
    field, x0, fine_times: np.ndarray, sigma_c2: float, rng: np.random.Generator
) -> np.ndarray:
    """Euler path with the drift perturbed by a fresh c_k * x each step.

    fine_times is the full step grid; one scalar c_k ~ N(0, sigma_c2) is
    drawn per step (a single batched draw, so the consumed RNG stream is
    exactly len(fine_times) - 1 normals) and perturbs every component.
    """
    fine_times = np.asarray(fine_times, dtype=float)
    nsteps = len(fine_times) - 1
    c = rng.normal(0.0, np.sqrt(sigma_c2), size=nsteps)
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((nsteps + 1, len(x)))
    out[0] = x
    for k in range(nsteps):
        h = fine_times[k + 1] - fine_times[k]
        x = x + h * (field(x, fine_times[k]) + c[k] * x)
        out[k + 1] = x
    return out


def em_hypoelliptic_path(
    field,
    x0,
    fine_times: np.ndarray,
    sigma_r2: float,
    component: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Euler-Maruyama with diffusion only on one component.

    Exactly one standard normal per step is consumed (for the designated
    component); the other components receive no direct noise — their
    randomness arrives only through the coupling, which is the hypoelliptic
    structure the experiments rely on.
    """
    fine_times = np.asarray(fine_times, dtype=float)
    nsteps = len(fine_times) - 1
    xi = rng.standard_normal(nsteps)
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((nsteps + 1, len(x)))
    out[0] = x
    sig = np.sqrt(sigma_r2)
    for k in range(nsteps):
        h = fine_times[k + 1] - fine_times[k]
        x = x + h * field(x, fine_times[k])
        x[component] = x[component] + sig * np.sqrt(h) * xi[k]
        out[k + 1] = x
    return out


def _sample_fine_path(
    entry: ModelCatalogEntry,
    cfg: SimConfig,
    times: np.ndarray,
    stepper,
) -> ObservationSet:
    """Run an SDE stepper on the refined grid and sample the obs times."""
    step = _resolve_step(cfg, entry.horizon)
    anchors = times if times[0] == 0.0 else np.concatenate([[0.0], times])
    fine = refine_times(anchors, step)
    rng = np.random.default_rng(cfg.seed)
    with np.errstate(over="ignore", invalid="ignore"):
        path = stepper(fine, rng)
    _check_finite(path, "stochastic simulation")
    idx = np.searchsorted(fine, times)
    states = path[idx]
    return _sample_with_noise(states, times, entry.model.obs_matrix, cfg.sigma, rng)


def simulate_misspecified(
    entry: ModelCatalogEntry, cfg: SimConfig, subject: int = 0
) -> ObservationSet:
    """Generate data whose truth deviates from the fitted model's ODE."""
    mis = cfg.misspec
    if mis is None:
        raise ConfigError("cfg.misspec is not set; use simulate_ode")
    times = obs_times(entry.horizon, cfg.n_obs, cfg.include_t0)
    theta = np.asarray(entry.true_theta, dtype=float)

    if isinstance(mis, MultiplicativeNoise):
        if mis.sigma_c2 == 0.0:
            return simulate_entry(entry, replace(cfg, misspec=None), subject)
        x0 = apply_impulse(entry.initial_states()[subject], entry.impulse_susceptibility)

        def stepper(fine, rng, _x0=x0):
            def field(x, t):
                return entry.raw_field(x, t, theta)

            return em_multiplicative_path(field, _x0, fine, mis.sigma_c2, rng)

        return _sample_fine_path(entry, cfg, times, stepper)

    if isinstance(mis, HypoellipticNoise):
        if mis.sigma_r2 == 0.0:
            return simulate_entry(entry, replace(cfg, misspec=None), subject)
        if not 0 <= mis.component < entry.model.state_dim:
            raise ConfigError(
                f"diffusion component {mis.component} outside the state space"
            )
        x0 = apply_impulse(entry.initial_states()[subject], entry.impulse_susceptibility)

        def stepper(fine, rng, _x0=x0):
            def field(x, t):
                return entry.raw_field(x, t, theta)

            return em_hypoelliptic_path(
                field, _x0, fine, mis.sigma_r2, mis.component, rng
            )

        return _sample_fine_path(entry, cfg, times, stepper)

    if isinstance(mis, FullSystemTruth):
        return _simulate_full_glv(entry, cfg, mis, times, subject)

    raise ConfigError(f"unknown misspecification {mis!r}")


def _simulate_full_glv(
    entry: ModelCatalogEntry,
    cfg: SimConfig,
    mis: FullSystemTruth,
    times: np.ndarray,
    subject: int,
) -> ObservationSet:
    """Deterministic full-community truth projected onto the kept species."""
    path = mis.constants_path if mis.constants_path is not None else glv_full_demo_constants()
    n_full = len(FULL_GLV_LABELS)
    constants = load_glv_constants(path, FULL_GLV_LABELS, estimated=None)
    field = full_glv_field(constants)
    x0_full = apply_impulse(constants.x0_subjects[subject], constants.susceptibility)
    step = _resolve_step(cfg, entry.horizon)
    full = times if times[0] == 0.0 else np.concatenate([[0.0], times])
    skip = 0 if times[0] == 0.0 else 1
    with np.errstate(over="ignore", invalid="ignore"):
        states_full = rk4_at_times(field, x0_full, full, step)[skip:]
    _check_finite(states_full, "full-community integration")
    if states_full.shape[1] != n_full:
        raise ConfigError("full-community constants do not describe 11 species")
    states = states_full[:, list(FULL_TO_RESTRICTED)]
    rng = np.random.default_rng(cfg.seed)
    return _sample_with_noise(states, times, entry.model.obs_matrix, cfg.sigma, rng)
