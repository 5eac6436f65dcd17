"""Command-line front end.

Subcommands: ``simulate | run | sweep | diagnose | cost | plot``.  Every
flag can also be supplied through a flat key = value config file
(``--config``); flags override file values.  Exit codes: 0 success,
1 configuration error, 2 numerical failure, 3 not converged when
``--require-converged`` was set.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import costmodel, plots
from .core import RngStream, SIMULATION_STREAM, write_json
from .diagnostics import diagnostic_report
from .harness import (
    ChainFailure,
    ConfigError,
    ExperimentConfig,
    build_model,
    prepare_data,
    run_experiment,
    sweep,
)
from .models import GpNumericalError
from .tempering import METHODS, ChainTrace

EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_NOT_CONVERGED = 3


def _build_config(config_path, **cli_values) -> ExperimentConfig:
    if config_path is not None:
        cfg = ExperimentConfig.from_file(config_path, **cli_values)
    else:
        cfg = ExperimentConfig(**{k: v for k, v in cli_values.items() if v is not None})
    cfg.validate()
    return cfg


def _experiment_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="Flat key = value config file."),
        click.option("--model", type=click.Choice(["mvn", "gp"]), default=None),
        click.option("--method", type=click.Choice(list(METHODS)), default=None),
        click.option("--inner", type=click.Choice(["mh", "hmc"]), default=None),
        click.option("--levels", type=int, default=None, help="Auxiliary levels M."),
        click.option("--beta-star", "beta_star", type=float, default=None),
        click.option("--samples", type=int, default=None),
        click.option("--chains", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--eps", type=float, default=None, help="HMC step size."),
        click.option("--leapfrog", type=int, default=None, help="HMC leapfrog steps."),
        click.option("--mh-step", "mh_step", type=float, default=None),
        click.option("--dim", type=int, default=None),
        click.option("--n-obs", "n_obs", type=int, default=None),
        click.option("--sigma0", type=float, default=None),
        click.option("--rho", type=float, default=None),
        click.option("--data", type=click.Path(exists=True), default=None,
                     help="Dataset CSV (skips simulation)."),
        click.option("--out", type=click.Path(), default=None),
        click.option("--workers", type=int, default=None),
        click.option("--single-thread", is_flag=True, default=False,
                     help="Force fully serial execution."),
        click.option("--require-converged", "require_converged",
                     is_flag=True, default=None),
        click.option("--audit-subsamples", "audit_subsamples",
                     is_flag=True, default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Tempered MCMC by data subsampling: samplers, diagnostics, cost model."""


@main.command()
@click.option("--model", type=click.Choice(["mvn", "gp"]), default="mvn")
@click.option("--dim", type=int, default=5)
@click.option("--n-obs", "n_obs", type=int, default=64)
@click.option("--seed", type=int, default=0)
@click.option("--sigma0", type=float, default=1.0)
@click.option("--rho", type=float, default=0.0)
@click.option("--out", type=click.Path(), required=True)
def simulate(model, dim, n_obs, seed, sigma0, rho, out):
    """Simulate a dataset and write it as CSV with a JSON sidecar."""
    try:
        cfg = ExperimentConfig(model=model, dim=dim, n_obs=n_obs, seed=seed,
                               sigma0=sigma0, rho=rho)
        cfg.validate()
        data, info = prepare_data(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data.to_csv(out / "data.csv")
    write_json(out / "data.json", info)
    click.echo(f"wrote {data.n} x {data.dim} dataset to {out / 'data.csv'}")


def _run_guarded(config: ExperimentConfig):
    try:
        return run_experiment(config)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (ChainFailure, GpNumericalError, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)


@main.command()
@_experiment_options
def run(config_path, single_thread, **cli_values):
    """Run one multi-chain experiment and write traces + diagnostics."""
    if single_thread:
        cli_values["workers"] = 1
    try:
        cfg = _build_config(config_path, **cli_values)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    result = _run_guarded(cfg)
    click.echo(",".join(str(result.summary[k]) for k in result.summary))
    if cfg.require_converged and not result.report.converged:
        click.echo("chains did not converge (median R-hat >= 1.1)", err=True)
        sys.exit(EXIT_NOT_CONVERGED)


@main.command(name="sweep")
@_experiment_options
@click.option("--axis", type=click.Choice(["n", "dimension"]), required=True)
@click.option("--values", required=True, help="Comma-separated ascending values.")
@click.option("--methods", default=None,
              help="Comma-separated methods (defaults to --method).")
def sweep_cmd(config_path, single_thread, axis, values, methods, **cli_values):
    """Sweep dataset size or dimensionality with a shared seed."""
    if single_thread:
        cli_values["workers"] = 1
    try:
        cfg = _build_config(config_path, **cli_values)
        value_list = [int(v) for v in values.split(",") if v.strip()]
        method_list = [m.strip() for m in methods.split(",")] if methods else None
        if method_list and any(m not in METHODS for m in method_list):
            raise ConfigError(f"unknown method in {method_list}")
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        rows = sweep(cfg, axis, value_list, methods=method_list)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (ChainFailure, GpNumericalError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    for row in rows:
        click.echo(f"{row['axis']}={row['value']} method={row['method']} "
                   f"ess/sec={row['ess_per_sec']}")


@main.command()
@click.option("--traces", "trace_paths", multiple=True, type=click.Path(exists=True),
              help="Trace CSV files (repeatable) or a directory of them.")
@click.option("--out", type=click.Path(), default=None, help="Report JSON path.")
def diagnose(trace_paths, out):
    """Compute the multi-chain diagnostics report for saved traces."""
    files: list[Path] = []
    for p in trace_paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if len(files) < 2:
        click.echo("config error: need at least two chain traces", err=True)
        sys.exit(EXIT_CONFIG)
    traces = [ChainTrace.from_csv(f) for f in files]
    report = diagnostic_report(traces)
    if out is not None:
        report.to_json(out)
    click.echo(f"median_r_hat={report.median_r_hat} median_ess={report.median_ess} "
               f"ess_per_sec={report.ess_per_sec} converged={report.converged}")


@main.command()
@click.option("--levels", type=int, default=6)
@click.option("--beta-star", "beta_star", default="0.125",
              help="Comma-separated beta_* grid.")
@click.option("--alpha", default="1,3", help="Comma-separated alpha grid.")
@click.option("--methods", default="spt,stt,pt,tt")
@click.option("--format", "fmt", type=click.Choice(["text", "csv"]), default="text")
def cost(levels, beta_star, alpha, methods, fmt):
    """Print predicted per-sample cost ratios over a parameter grid."""
    try:
        beta_grid = [float(v) for v in beta_star.split(",")]
        alpha_grid = [float(v) for v in alpha.split(",")]
        method_list = [m.strip() for m in methods.split(",")]
        rows = []
        for b in beta_grid:
            for a in alpha_grid:
                params = costmodel.CostParams(levels=levels, beta_star=b, alpha=a)
                for m in method_list:
                    rows.append((m, levels, b, a, costmodel.relative_cost(m, params)))
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if fmt == "csv":
        click.echo("method,levels,beta_star,alpha,relative_cost")
        for m, lv, b, a, c in rows:
            click.echo(f"{m},{lv},{b},{a},{repr(c)}")
    else:
        click.echo(f"{'method':>8} {'M':>3} {'beta*':>8} {'alpha':>6} {'cost':>8}")
        for m, lv, b, a, c in rows:
            click.echo(f"{m:>8} {lv:>3} {b:>8.4g} {a:>6.3g} {c:>8.3f}")


@main.command()
@click.option("--results", "results_dirs", multiple=True, required=True,
              type=click.Path(exists=True),
              help="Experiment output directories containing rhat_curve_*.csv.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--stem", default="convergence")
def plot(results_dirs, out, stem):
    """Render convergence figures (SVG) plus their plot-data CSV."""
    curves: dict = {}
    for d in results_dirs:
        for path in sorted(Path(d).glob("rhat_curve_*.csv")):
            curves.update(plots.load_curve_csv(path))
    paths = plots.emit_plots(curves, out, stem=stem)
    for name, p in paths.items():
        click.echo(f"{name}: {p}")


if __name__ == "__main__":
    main()
