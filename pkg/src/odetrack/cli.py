"""Command-line front end.

Five subcommands: simulate (write an observation CSV), estimate (fit a model
to an observation CSV), bench (Monte-Carlo table for one design cell),
observability (rank diagnostic), semiparam (the time-varying-coefficient
experiment). Every command accepts --config pointing at an INI file whose
section named after the command supplies defaults; explicit flags win.

Exit codes: 0 success, 2 configuration/user error, 3 numerical failure.
All numeric file output is rounded to 12 significant digits.
"""

from __future__ import annotations

import configparser
import dataclasses
import sys
from pathlib import Path

import click
import numpy as np

from .bench import (
    EstimatorSpec,
    best_constant_mse,
    run_monte_carlo,
    run_semiparam_benchmark,
    write_mc_report_csv,
)
from .errors import ConfigError, NumericalError
from .estimate import (
    HyperGrid,
    estimate_tracking,
    nls_estimate,
    observability_check,
    select_hyperparams,
    write_result_json,
    write_control_trace_csv,
    write_ep_table_csv,
)
from .grids import build_grid, load_observations, save_observations
from .integrate import rk4_at_times
from .models import (
    apply_impulse,
    fhn_functional_spec,
    fhn_timevarying_field,
    get_catalog_entry,
    sinusoidal_a,
)
from .sdre import SdreConfig
from .sim import (
    FullSystemTruth,
    HypoellipticNoise,
    MultiplicativeNoise,
    SimConfig,
    simulate_entry,
)


# ---------------------------------------------------------------------------
# config file plumbing: INI sections named after commands; flags win
# ---------------------------------------------------------------------------

class _Options:
    """Merge view over command-line flags and one config-file section."""

    def __init__(self, config_path: str | None, section: str):
        self.section = section
        self.parser = None
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            parser = configparser.ConfigParser()
            try:
                parser.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            self.parser = parser

    def get(self, flag_value, key: str, cast=str, default=None, required=False):
        if flag_value is not None:
            return flag_value
        if self.parser is not None and self.parser.has_option(self.section, key):
            raw = self.parser.get(self.section, key)
            try:
                if cast is bool:
                    return raw.strip().lower() in ("1", "true", "yes", "on")
                return cast(raw)
            except ValueError as exc:
                raise ConfigError(f"config option {key} = {raw!r}: {exc}") from None
        if required:
            raise ConfigError(f"missing required option '{key}'")
        return default


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}: {exc}")


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}: {exc}")


def _parse_misspec(text: str | None):
    """Misspecification flag syntax: sigma_c2=V | sigma_r2=V | full-glv[=path]."""
    if text is None or text.strip().lower() in ("", "none"):
        return None
    text = text.strip()
    if text.startswith("sigma_c2="):
        return MultiplicativeNoise(float(text.split("=", 1)[1]))
    if text.startswith("sigma_r2="):
        return HypoellipticNoise(float(text.split("=", 1)[1]))
    if text == "full-glv":
        return FullSystemTruth(None)
    if text.startswith("full-glv="):
        return FullSystemTruth(text.split("=", 1)[1])
    raise ConfigError(
        f"unknown misspecification {text!r}; use sigma_c2=V, sigma_r2=V or full-glv[=path]"
    )


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def _fmt_vec(v) -> str:
    return "[" + ", ".join(_fmt(x) for x in np.asarray(v).ravel()) + "]"


# ---------------------------------------------------------------------------
# command group
# ---------------------------------------------------------------------------

@click.group(name="odetrack")
def cli():
    """Estimate ODE parameters by optimal-control tracking."""


_config_opt = click.option("--config", default=None, help="INI file with per-command defaults.")


@cli.command()
@click.option("--model", default=None, help="Catalog model name.")
@click.option("--constants", default=None, help="Constants CSV (community model).")
@click.option("--n", default=None, type=int, help="Number of observations (t=0 included).")
@click.option("--sigma", default=None, type=float, help="Observation noise std dev.")
@click.option("--seed", default=None, type=int, help="RNG seed.")
@click.option("--horizon", default=None, type=float, help="Override the catalog horizon.")
@click.option("--subject", default=None, type=int, help="Initial-condition row for multi-subject models.")
@click.option("--misspec", default=None, help="sigma_c2=V | sigma_r2=V | full-glv[=path].")
@click.option("--step", default=None, type=float, help="Integrator step (default horizon/2000).")
@click.option("--t0/--no-t0", "include_t0", default=None, help="Include t=0 in the design (default on).")
@click.option("--out", default=None, help="Output CSV path.")
@_config_opt
def simulate(model, constants, n, sigma, seed, horizon, subject, misspec, step, include_t0, out, config):
    """Generate observations for a catalog model and write them as CSV."""
    opt = _Options(config, "simulate")
    model = opt.get(model, "model", required=True)
    out = opt.get(out, "out", required=True)
    entry = get_catalog_entry(model, opt.get(constants, "constants"))
    horizon = opt.get(horizon, "horizon", float)
    if horizon is not None:
        entry = dataclasses.replace(entry, horizon=float(horizon))
    cfg = SimConfig(
        n_obs=opt.get(n, "n", int, 25),
        sigma=opt.get(sigma, "sigma", float, 0.0),
        seed=opt.get(seed, "seed", int, 0),
        misspec=_parse_misspec(opt.get(misspec, "misspec")),
        integrator_step=opt.get(step, "step", float),
        include_t0=opt.get(include_t0, "t0", bool, True),
    )
    obs = simulate_entry(entry, cfg, subject=opt.get(subject, "subject", int, 0))
    save_observations(obs, out)
    click.echo(f"wrote {obs.n_obs} observations to {out}")


@cli.command()
@click.option("--data", default=None, help="Observation CSV to fit.")
@click.option("--model", default=None, help="Catalog model name.")
@click.option("--constants", default=None, help="Constants CSV (community model).")
@click.option("--theta-init", default=None, help="Comma-separated initial parameters (default: catalog reference).")
@click.option("--kn", default=None, help="Grid refinement k_n; a comma list triggers selection.")
@click.option("--lam", default=None, help="Control weight lambda; a comma list triggers selection.")
@click.option("--segments", default=None, type=int, help="Validation segments for selection (default 2).")
@click.option("--profile-x0/--no-profile-x0", "profile_x0", default=None,
              help="Profile the initial state in closed form (default on).")
@click.option("--baseline", default=None, help="'nls' switches to the least-squares baseline.")
@click.option("--horizon", default=None, type=float, help="Grid horizon (default: last observation time).")
@click.option("--seed", default=None, type=int, help="Optimizer RNG seed.")
@click.option("--starts", default=None, type=int, help="Multi-start count (default 3).")
@click.option("--max-evals", default=None, type=int, help="Cost-evaluation budget per start.")
@click.option("--out", default=None, help="Result JSON path (control trace and EP table go next to it).")
@_config_opt
def estimate(data, model, constants, theta_init, kn, lam, segments, profile_x0,
             baseline, horizon, seed, starts, max_evals, out, config):
    """Fit a model to observations; write the result and diagnostics."""
    opt = _Options(config, "estimate")
    data = opt.get(data, "data", required=True)
    model = opt.get(model, "model", required=True)
    entry = get_catalog_entry(model, opt.get(constants, "constants"))
    obs = load_observations(data)
    theta_init = opt.get(theta_init, "theta_init")
    init = entry.true_theta if theta_init is None else _parse_floats(str(theta_init))
    horizon = opt.get(horizon, "horizon", float)
    seed = opt.get(seed, "seed", int, 0)
    starts = opt.get(starts, "starts", int, 3)
    max_evals = opt.get(max_evals, "max_evals", int, 2000)
    profile_x0 = opt.get(profile_x0, "profile_x0", bool, True)
    baseline = opt.get(baseline, "baseline")
    kns = _parse_ints(str(opt.get(kn, "kn", str, "20")))
    lams = _parse_floats(str(opt.get(lam, "lam", str, "1.0")))
    segments = opt.get(segments, "segments", int, 2)

    table = None
    if baseline is not None and str(baseline).lower() not in ("", "none"):
        if str(baseline).lower() != "nls":
            raise ConfigError(f"unknown baseline {baseline!r} (supported: nls)")
        result = nls_estimate(
            entry.model, obs, theta_init=init, horizon=horizon,
            n_starts=starts, max_evals=max_evals, seed=seed,
        )
    elif len(kns) > 1 or len(lams) > 1:
        outcome = select_hyperparams(
            entry.model, obs, HyperGrid(tuple(kns), tuple(lams), segments),
            theta_init=init, horizon=horizon, profile_x0=profile_x0,
            n_starts=starts, max_evals=max_evals, seed=seed,
        )
        result = outcome.best_result
        table = outcome.table
        click.echo(f"selected k_n={outcome.hyper[0]} lambda={_fmt(outcome.hyper[1])}")
    else:
        result = estimate_tracking(
            entry.model, obs, kns[0], float(lams[0]),
            theta_init=init, horizon=horizon, profile_x0=profile_x0,
            n_starts=starts, max_evals=max_evals, seed=seed,
        )

    click.echo(f"method      {result.method}")
    click.echo(f"theta_hat   {_fmt_vec(result.theta_hat)}")
    click.echo(f"x0_hat      {_fmt_vec(result.x0_hat)}")
    click.echo(f"cost        {_fmt(result.cost)}")
    if result.k_n is not None:
        click.echo(f"hyper       k_n={result.k_n} lambda={_fmt(result.lam)}")
    click.echo(f"converged   {result.converged}")
    click.echo(f"evals       {result.optimizer_evals}")

    out = opt.get(out, "out")
    if out is not None:
        write_result_json(out, result)
        base = Path(out)
        if result.solution.control.shape[0] > 0:
            T = horizon if horizon is not None else float(obs.times[-1])
            grid = build_grid(obs, result.k_n, T)
            trace_path = base.with_name(base.stem + "_control.csv")
            write_control_trace_csv(
                trace_path, grid.points[:-1], result.solution.control
            )
            click.echo(f"wrote {out} and {trace_path}")
        else:
            click.echo(f"wrote {out}")
        if table is not None:
            ep_path = base.with_name(base.stem + "_ep.csv")
            write_ep_table_csv(ep_path, table)
            click.echo(f"wrote {ep_path}")


@cli.command()
@click.option("--model", default=None, help="Catalog model name.")
@click.option("--constants", default=None, help="Constants CSV (community model).")
@click.option("--n", default=None, type=int, help="Observations per replicate.")
@click.option("--sigma", default=None, type=float, help="Observation noise std dev.")
@click.option("--seed", default=None, type=int, help="Master seed for the replicate tree.")
@click.option("--replicates", default=None, type=int, help="Monte-Carlo replicates (default 20).")
@click.option("--misspec", default=None, help="sigma_c2=V | sigma_r2=V | full-glv[=path].")
@click.option("--estimators", default=None, help="Comma list from {tracking, tracking-joint, nls}.")
@click.option("--kn", default=None, type=int, help="k_n for the tracking estimators.")
@click.option("--lam", default=None, type=float, help="lambda for the tracking estimators.")
@click.option("--theta-init", default=None, help="Comma-separated optimizer initialization.")
@click.option("--starts", default=None, type=int, help="Multi-start count per replicate.")
@click.option("--max-evals", default=None, type=int, help="Cost-evaluation budget per start.")
@click.option("--subject", default=None, type=int, help="Initial-condition row.")
@click.option("--step", default=None, type=float, help="Integrator step.")
@click.option("--t0/--no-t0", "include_t0", default=None, help="Include t=0 (default on).")
@click.option("--jobs", default=None, type=int, help="Worker processes (default 1).")
@click.option("--out", default=None, help="Report CSV path.")
@_config_opt
def bench(model, constants, n, sigma, seed, replicates, misspec, estimators,
          kn, lam, theta_init, starts, max_evals, subject, step, include_t0,
          jobs, out, config):
    """Monte-Carlo benchmark of one design cell; one CSV row per estimator."""
    opt = _Options(config, "bench")
    model = opt.get(model, "model", required=True)
    out = opt.get(out, "out", required=True)
    entry = get_catalog_entry(model, opt.get(constants, "constants"))
    cfg = SimConfig(
        n_obs=opt.get(n, "n", int, 25),
        sigma=opt.get(sigma, "sigma", float, 0.0),
        seed=opt.get(seed, "seed", int, 0),
        misspec=_parse_misspec(opt.get(misspec, "misspec")),
        integrator_step=opt.get(step, "step", float),
        include_t0=opt.get(include_t0, "t0", bool, True),
    )
    n_mc = opt.get(replicates, "replicates", int, 20)
    k_n = opt.get(kn, "kn", int, 20)
    lam = opt.get(lam, "lam", float, 1.0)
    starts = opt.get(starts, "starts", int, 3)
    max_evals = opt.get(max_evals, "max_evals", int, 2000)
    jobs = opt.get(jobs, "jobs", int, 1)
    subject = opt.get(subject, "subject", int, 0)
    theta_init = opt.get(theta_init, "theta_init")
    init = None if theta_init is None else _parse_floats(str(theta_init))
    names = [s.strip() for s in
             str(opt.get(estimators, "estimators", str, "tracking,nls")).split(",")
             if s.strip()]

    specs = []
    for name in names:
        if name == "tracking":
            specs.append(EstimatorSpec(
                kind="tracking", label="tracking", k_n=k_n, lam=lam,
                profile_x0=True, theta_init=init, n_starts=starts, max_evals=max_evals,
            ))
        elif name == "tracking-joint":
            specs.append(EstimatorSpec(
                kind="tracking", label="tracking-joint", k_n=k_n, lam=lam,
                profile_x0=False, theta_init=init, n_starts=starts, max_evals=max_evals,
            ))
        elif name == "nls":
            specs.append(EstimatorSpec(
                kind="nls", label="nls", theta_init=init,
                n_starts=starts, max_evals=max_evals,
            ))
        else:
            raise ConfigError(
                f"unknown estimator {name!r} (supported: tracking, tracking-joint, nls)"
            )

    reports = [
        run_monte_carlo(entry, cfg, spec, n_mc, n_jobs=jobs, subject=subject)
        for spec in specs
    ]
    write_mc_report_csv(out, reports)
    for r in reports:
        click.echo(
            f"{r.label}: |V|={_fmt(r.global_variance_norm)} M={_fmt(r.global_mse)} "
            f"sign={_fmt(r.sign_recovery)} failures={r.failures}/{r.n_mc}"
        )
    click.echo(f"wrote {out}")


@cli.command()
@click.option("--model", default=None, help="Catalog model name.")
@click.option("--constants", default=None, help="Constants CSV (community model).")
@click.option("--theta", default=None, help="Comma-separated parameters (default: catalog reference).")
@click.option("--data", default=None, help="Observation CSV (default: noiseless simulation).")
@click.option("--n", default=None, type=int, help="Observations when simulating (default 25).")
@click.option("--kn", default=None, type=int, help="Grid refinement (default 20).")
@click.option("--seed", default=None, type=int, help="Simulation seed.")
@click.option("--subject", default=None, type=int, help="Initial-condition row.")
@_config_opt
def observability(model, constants, theta, data, n, kn, seed, subject, config):
    """Rank diagnostic: can the data pin down the initial state?"""
    opt = _Options(config, "observability")
    model = opt.get(model, "model", required=True)
    entry = get_catalog_entry(model, opt.get(constants, "constants"))
    theta = opt.get(theta, "theta")
    theta_arr = entry.true_theta if theta is None else _parse_floats(str(theta))
    data = opt.get(data, "data")
    subject_row = opt.get(subject, "subject", int, 0)
    if data is not None:
        obs = load_observations(data)
    else:
        cfg = SimConfig(
            n_obs=opt.get(n, "n", int, 25),
            sigma=0.0,
            seed=opt.get(seed, "seed", int, 0),
        )
        obs = simulate_entry(entry, cfg, subject=subject_row)
    grid = build_grid(obs, opt.get(kn, "kn", int, 20), entry.horizon)
    # evaluate along the model path at theta rather than a constant state:
    # a constant linearization of an oscillator inflates the transition
    # products over a long horizon and masks the actual rank
    x0 = apply_impulse(entry.initial_states()[subject_row], entry.impulse_susceptibility)
    ref = rk4_at_times(
        lambda x, t: entry.raw_field(x, t, theta_arr), x0, grid.points,
        entry.horizon / 2000.0,
    )
    report = observability_check(entry.model, theta_arr, grid, reference_trajectory=ref)
    click.echo(f"rcond       {_fmt(report.rcond)}")
    click.echo(f"invertible  {report.invertible}")


@cli.command()
@click.option("--n", default=None, type=int, help="Observations per replicate (default 50).")
@click.option("--sigma", default=None, type=float, help="Observation noise (default 0.03).")
@click.option("--replicates", default=None, type=int, help="Replicates (default 10).")
@click.option("--kn", default=None, type=int, help="Grid refinement (default 20).")
@click.option("--lambda1", default=None, type=float, help="State-control weight (default 1e-3).")
@click.option("--lambda2", default=None, type=float, help="Coefficient-control weight (default 1e-3).")
@click.option("--seed", default=None, type=int, help="Master seed.")
@click.option("--starts", default=None, type=int, help="Multi-start count (default 1).")
@click.option("--max-evals", default=None, type=int, help="Budget per start.")
@click.option("--lmax", default=None, type=int, help="Inner relinearization cap (default 10).")
@click.option("--jobs", default=None, type=int, help="Worker processes (default 1).")
@click.option("--out", default=None, help="Curve CSV path.")
@_config_opt
def semiparam(n, sigma, replicates, kn, lambda1, lambda2, seed, starts,
              max_evals, lmax, jobs, out, config):
    """Neuron model with a drifting excitation threshold a(t)."""
    opt = _Options(config, "semiparam")
    spec = fhn_functional_spec(
        opt.get(lambda1, "lambda1", float, 1e-3),
        opt.get(lambda2, "lambda2", float, 1e-3),
    )
    cfg = SimConfig(
        n_obs=opt.get(n, "n", int, 50),
        sigma=opt.get(sigma, "sigma", float, 0.03),
        seed=opt.get(seed, "seed", int, 0),
    )
    report = run_semiparam_benchmark(
        spec,
        fhn_timevarying_field(sinusoidal_a),
        theta_true=np.array([0.2, 3.0]),
        x0_true=np.array([-1.0, 1.0]),
        reference_fn=sinusoidal_a,
        horizon=20.0,
        sim_cfg=cfg,
        k_n=opt.get(kn, "kn", int, 20),
        n_mc=opt.get(replicates, "replicates", int, 10),
        n_starts=opt.get(starts, "starts", int, 1),
        max_evals=opt.get(max_evals, "max_evals", int, 2000),
        sdre_config=SdreConfig(l_max=opt.get(lmax, "lmax", int, 10)),
        n_jobs=opt.get(jobs, "jobs", int, 1),
    )
    tr = report.theta_report
    mean_theta = tr.estimates.mean(axis=0)
    baseline = best_constant_mse(report.reference, report.grid_times)
    click.echo(f"theta mean        {_fmt_vec(mean_theta)} (true [0.2, 3])")
    click.echo(f"functional V      {_fmt(report.functional_variance)}")
    click.echo(f"functional M      {_fmt(report.functional_mse)}")
    click.echo(f"best-constant M   {_fmt(baseline)}")
    click.echo(f"failures          {tr.failures}/{tr.n_mc}")
    out = opt.get(out, "out")
    if out is not None:
        _write_curves_csv(out, report)
        click.echo(f"wrote {out}")


def _write_curves_csv(path, report) -> None:
    """Recovered coefficient paths: t, truth, mean, then one column each."""
    import csv as _csv

    curves = report.curves[:, :, 0]
    mean = curves.mean(axis=0)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["t", "reference", "mean"] + [f"rep{i + 1}" for i in range(curves.shape[0])]
        )
        for j, t in enumerate(report.grid_times):
            row = [f"{t:.12g}", f"{report.reference[j]:.12g}", f"{mean[j]:.12g}"]
            row += [f"{curves[i, j]:.12g}" for i in range(curves.shape[0])]
            writer.writerow(row)


def main(argv=None) -> int:
    """Console entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        code = int(exc.exit_code)
        if code != 0:
            sys.exit(code)
        return 0
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(3)
    return 0


if __name__ == "__main__":
    main()
