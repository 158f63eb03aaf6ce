"""Monte-Carlo benchmark harness and the experiment metrics.

One replicate = simulate a data set, run an estimator on it. The harness
derives one RNG stream per replicate from the master seed (spawned
SeedSequences, one for simulation and one for the optimizer), so a report
depends only on (configuration, seed) — never on how many workers ran it or
in which order they finished.

Metrics follow the normalized convention: estimates are divided
componentwise by the true values before any variance/MSE computation, so
per-component variance V_i, spectral-norm covariance |V|_2, and
MSE M_i = bias_i^2 + V_i are all scale-free. Sign recovery is evaluated on
the raw (un-normalized) values. Replicates that raise or return non-finite
estimates are excluded from the metrics and reported in the failure count;
more than 50% failures aborts the run.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import EstimationFailed, NumericalError
from .estimate import estimate_semiparametric, estimate_tracking, nls_estimate
from .grids import ObservationSet, TrackingGrid, build_grid
from .models import ModelCatalogEntry, SemiParamSpec
from .sim import SimConfig, obs_times, simulate_entry, simulate_ode

_trapz = getattr(np, "trapezoid", None) or np.trapz


# ---------------------------------------------------------------------------
# estimator selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator a benchmark cell runs, and with what settings.

    kind is one of:
      "tracking" — the control-based estimator (profile_x0 selects the
                   initial-state-profiled variant, the default);
      "nls"      — the least-squares baseline;
      "custom"   — `custom(entry, obs, seed) -> theta_hat` for oracle tests.

    theta_init = None initializes at the entry's reference parameters (the
    desk-scale convention committed in the experiment configs).
    """

    kind: str = "tracking"
    label: str = ""
    k_n: int | None = None
    lam: float | None = None
    profile_x0: bool = True
    theta_init: np.ndarray | None = None
    n_starts: int = 3
    max_evals: int = 2000
    custom: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("tracking", "nls", "custom"):
            raise ValueError(f"unknown estimator kind '{self.kind}'")
        if self.kind == "tracking" and (self.k_n is None or self.lam is None):
            raise ValueError("tracking estimator needs k_n and lam")
        if self.kind == "custom" and self.custom is None:
            raise ValueError("custom estimator needs a callable")
        if not self.label:
            object.__setattr__(self, "label", self.kind)


def constant_estimator(theta_value) -> Callable:
    """Custom estimator that ignores the data (for harness oracle tests)."""
    theta_value = np.asarray(theta_value, dtype=float)

    def fn(entry, obs, seed):
        return theta_value

    return fn


class _RepOutcome(NamedTuple):
    theta_hat: np.ndarray | None
    converged: bool
    error: str | None


def _run_estimator(entry, obs, spec: EstimatorSpec, est_seed):
    init = spec.theta_init if spec.theta_init is not None else entry.true_theta
    if spec.kind == "tracking":
        return estimate_tracking(
            entry.model, obs, spec.k_n, spec.lam,
            theta_init=init, horizon=entry.horizon, profile_x0=spec.profile_x0,
            n_starts=spec.n_starts, max_evals=spec.max_evals, seed=est_seed,
        )
    if spec.kind == "nls":
        return nls_estimate(
            entry.model, obs, theta_init=init, horizon=entry.horizon,
            n_starts=spec.n_starts, max_evals=spec.max_evals, seed=est_seed,
        )
    raise ValueError(spec.kind)


def _replicate_worker(args) -> _RepOutcome:
    entry, sim_cfg, spec, subject, sim_ss, est_ss = args
    try:
        obs = simulate_entry(entry, replace(sim_cfg, seed=sim_ss), subject)
        if spec.kind == "custom":
            theta_hat = np.asarray(spec.custom(entry, obs, est_ss), dtype=float)
            converged = True
        else:
            result = _run_estimator(entry, obs, spec, est_ss)
            theta_hat = result.theta_hat
            converged = result.converged
        if not np.all(np.isfinite(theta_hat)):
            return _RepOutcome(None, False, "non-finite estimate")
        return _RepOutcome(theta_hat, converged, None)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        return _RepOutcome(None, False, f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McReport:
    """Aggregated Monte-Carlo metrics for one estimator on one design."""

    label: str
    n_mc: int
    n_used: int
    failures: int
    theta_star: np.ndarray
    estimates: np.ndarray                # (n_used, p), raw scale
    per_component_variance: np.ndarray   # V_i of normalized estimates
    per_component_mse: np.ndarray        # M_i = bias_i^2 + V_i
    global_variance_norm: float          # |V|_2, spectral norm of normalized cov
    global_mse: float                    # sum bias_i^2 + |V|_2
    sign_recovery: float                 # mean fraction of recovered signs
    failure_messages: tuple[str, ...] = ()


def mc_metrics(estimates: np.ndarray, theta_star: np.ndarray) -> dict:
    """The normalized variance/MSE metrics and sign recovery."""
    estimates = np.asarray(estimates, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    if estimates.ndim != 2 or estimates.shape[1] != theta_star.shape[0]:
        raise ValueError("estimates must be (n, p) matching theta_star")
    if estimates.shape[0] < 2:
        raise ValueError("need at least 2 estimates for variance metrics")
    Z = estimates / theta_star
    mean = Z.mean(axis=0)
    V = Z.var(axis=0, ddof=1)
    cov = np.atleast_2d(np.cov(Z, rowvar=False, ddof=1))
    vnorm = float(np.max(np.abs(np.linalg.eigvalsh(cov))))
    bias2 = (1.0 - mean) ** 2
    M = bias2 + V
    signs = np.mean(np.sign(estimates) == np.sign(theta_star), axis=1)
    return {
        "per_component_variance": V,
        "per_component_mse": M,
        "global_variance_norm": vnorm,
        "global_mse": float(np.sum(bias2) + vnorm),
        "sign_recovery": float(np.mean(signs)),
    }


def run_monte_carlo(
    entry: ModelCatalogEntry,
    sim_cfg: SimConfig,
    est_spec: EstimatorSpec,
    n_mc: int,
    n_jobs: int = 1,
    subject: int = 0,
) -> McReport:
    """simulate -> estimate, n_mc times, with derived per-replicate seeds.

    Deterministic for a given (entry, sim_cfg, est_spec, n_mc, subject,
    master seed) regardless of n_jobs: the seed tree and the task order are
    fixed before any work starts, and results are merged in task order.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    master = np.random.SeedSequence(sim_cfg.seed)
    tasks = []
    for child in master.spawn(n_mc):
        sim_ss, est_ss = child.spawn(2)
        tasks.append((entry, sim_cfg, est_spec, subject, sim_ss, est_ss))

    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_replicate_worker, tasks))
    else:
        outcomes = [_replicate_worker(t) for t in tasks]

    kept = [o.theta_hat for o in outcomes if o.theta_hat is not None]
    messages = tuple(o.error for o in outcomes if o.error is not None)
    failures = n_mc - len(kept)
    if failures * 2 > n_mc:
        raise EstimationFailed(
            f"{failures}/{n_mc} replicates failed; first errors: "
            + "; ".join(messages[:3])
        )
    if len(kept) < 2:
        raise EstimationFailed("fewer than 2 replicates succeeded")
    estimates = np.vstack(kept)
    metrics = mc_metrics(estimates, entry.true_theta)
    return McReport(
        label=est_spec.label,
        n_mc=n_mc,
        n_used=len(kept),
        failures=failures,
        theta_star=np.asarray(entry.true_theta, dtype=float),
        estimates=estimates,
        failure_messages=messages,
        **metrics,
    )


# ---------------------------------------------------------------------------
# time-varying-coefficient experiment
# ---------------------------------------------------------------------------

def functional_variance_mse(
    paths: np.ndarray, reference: np.ndarray, times: np.ndarray
) -> tuple[float, float]:
    """Integrated pointwise variance and squared error of recovered curves.

    paths: (n_replicates, len(times)) or (n_replicates, len(times), d_f);
    reference: the true curve on the same time grid. Variance is the
    population (ddof = 0) pointwise variance across replicates, summed over
    functional components; both quantities are integrated by the trapezoid
    rule. Mismatched grids raise.
    """
    paths = np.asarray(paths, dtype=float)
    times = np.asarray(times, dtype=float)
    if paths.ndim == 2:
        paths = paths[:, :, None]
    reference = np.asarray(reference, dtype=float)
    if reference.ndim == 1:
        reference = reference[:, None]
    if paths.shape[0] < 2:
        raise ValueError("need at least 2 replicate curves")
    if paths.shape[1] != times.shape[0] or reference.shape != paths.shape[1:]:
        raise ValueError("curves, reference and times are on mismatched grids")
    var_t = paths.var(axis=0, ddof=0).sum(axis=1)
    sqerr_t = ((paths - reference) ** 2).mean(axis=0).sum(axis=1)
    return float(_trapz(var_t, times)), float(_trapz(sqerr_t, times))


def best_constant_mse(reference: np.ndarray, times: np.ndarray) -> float:
    """Integrated squared error of the best constant fit to a curve.

    The baseline a time-varying estimate has to beat: found by 1-d
    minimization of c -> integral (c - reference)^2 dt.
    """
    reference = np.asarray(reference, dtype=float).ravel()
    times = np.asarray(times, dtype=float)

    def loss(c):
        return float(_trapz((c - reference) ** 2, times))

    lo, hi = float(reference.min()), float(reference.max())
    if lo == hi:
        return 0.0
    res = minimize_scalar(loss, bounds=(lo, hi), method="bounded")
    return float(res.fun)


@dataclass(frozen=True)
class SemiparamReport:
    """Monte-Carlo outcome of the time-varying-coefficient experiment."""

    theta_report: McReport
    grid_times: np.ndarray
    curves: np.ndarray        # (n_used, len(grid_times), d_f)
    reference: np.ndarray     # true curve on grid_times
    functional_variance: float
    functional_mse: float


def _semiparam_worker(args) -> tuple[np.ndarray | None, np.ndarray | None, str | None]:
    (spec, raw_field, theta_true, x0_true, times, sim_cfg, k_n, theta_init,
     n_starts, max_evals, sdre_config, sim_ss, est_ss) = args
    try:
        obs = simulate_ode(
            raw_field, theta_true, x0_true, times,
            replace(sim_cfg, seed=sim_ss), spec.base_model.obs_matrix,
        )
        result, a_path, _ = estimate_semiparametric(
            spec, obs, k_n, theta_init=theta_init,
            horizon=float(times[-1]), sdre_config=sdre_config,
            n_starts=n_starts, max_evals=max_evals, seed=est_ss,
        )
        if not (np.all(np.isfinite(result.theta_hat)) and np.all(np.isfinite(a_path))):
            return None, None, "non-finite estimate"
        return result.theta_hat, a_path, None
    except (NumericalError, np.linalg.LinAlgError) as exc:
        return None, None, f"{type(exc).__name__}: {exc}"


def run_semiparam_benchmark(
    spec: SemiParamSpec,
    raw_field,
    theta_true,
    x0_true,
    reference_fn,
    horizon: float,
    sim_cfg: SimConfig,
    k_n: int,
    n_mc: int,
    theta_init=None,
    n_starts: int = 1,
    max_evals: int = 2000,
    sdre_config=None,
    n_jobs: int = 1,
) -> SemiparamReport:
    """Replicated recovery of (theta, time-varying coefficient).

    Data comes from `raw_field` (the truth with the drifting coefficient
    baked in); `reference_fn(t)` is the true coefficient path used for the
    functional metrics. Seeding and failure handling mirror run_monte_carlo.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    theta_true = np.asarray(theta_true, dtype=float)
    x0_true = np.asarray(x0_true, dtype=float)
    times = obs_times(horizon, sim_cfg.n_obs, sim_cfg.include_t0)
    init = theta_true if theta_init is None else np.asarray(theta_init, dtype=float)

    master = np.random.SeedSequence(sim_cfg.seed)
    tasks = []
    for child in master.spawn(n_mc):
        sim_ss, est_ss = child.spawn(2)
        tasks.append((
            spec, raw_field, theta_true, x0_true, times, sim_cfg, k_n, init,
            n_starts, max_evals, sdre_config, sim_ss, est_ss,
        ))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_semiparam_worker, tasks))
    else:
        outcomes = [_semiparam_worker(t) for t in tasks]

    thetas = [t for t, _, _ in outcomes if t is not None]
    curves = [c for _, c, _ in outcomes if c is not None]
    messages = tuple(e for _, _, e in outcomes if e is not None)
    failures = n_mc - len(thetas)
    if failures * 2 > n_mc:
        raise EstimationFailed(
            f"{failures}/{n_mc} replicates failed; first errors: "
            + "; ".join(messages[:3])
        )
    if len(thetas) < 2:
        raise EstimationFailed("fewer than 2 replicates succeeded")

    grid = build_grid_for_times(times, k_n, horizon)
    reference = np.array([reference_fn(t) for t in grid.points], dtype=float)
    curves_arr = np.stack(curves)
    v_f, m_f = functional_variance_mse(curves_arr, reference, grid.points)
    estimates = np.vstack(thetas)
    metrics = mc_metrics(estimates, theta_true)
    theta_report = McReport(
        label="tracking-semiparam",
        n_mc=n_mc,
        n_used=len(thetas),
        failures=failures,
        theta_star=theta_true,
        estimates=estimates,
        failure_messages=messages,
        **metrics,
    )
    return SemiparamReport(
        theta_report=theta_report,
        grid_times=grid.points.copy(),
        curves=curves_arr,
        reference=reference,
        functional_variance=v_f,
        functional_mse=m_f,
    )


def build_grid_for_times(times: np.ndarray, k_n: int, horizon: float) -> TrackingGrid:
    """Tracking grid for a set of observation times (values are not needed)."""
    dummy = ObservationSet(times=np.asarray(times, dtype=float),
                           values=np.zeros((len(times), 1)))
    return build_grid(dummy, k_n, horizon)


# ---------------------------------------------------------------------------
# report export
# ---------------------------------------------------------------------------

def write_mc_report_csv(path, reports: Sequence[McReport]) -> None:
    """One CSV row per estimator: V and M per component, then the globals."""
    import csv as _csv

    reports = list(reports)
    if not reports:
        raise ValueError("no reports to write")
    p = reports[0].theta_star.shape[0]
    if any(r.theta_star.shape[0] != p for r in reports):
        raise ValueError("reports mix models of different parameter dimension")
    header = (
        ["estimator", "n_mc", "n_used", "failures"]
        + [f"V{i + 1}" for i in range(p)]
        + [f"M{i + 1}" for i in range(p)]
        + ["V_norm", "M_global", "sign_recovery"]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for r in reports:
            row = [r.label, r.n_mc, r.n_used, r.failures]
            row += [f"{v:.12g}" for v in r.per_component_variance]
            row += [f"{v:.12g}" for v in r.per_component_mse]
            row += [
                f"{r.global_variance_norm:.12g}",
                f"{r.global_mse:.12g}",
                f"{r.sign_recovery:.12g}",
            ]
            writer.writerow(row)
