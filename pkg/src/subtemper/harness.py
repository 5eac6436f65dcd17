"""Experiment orchestration: configuration, the paper-style multi-chain
initialization scheme, single experiments, and sweeps over dataset size or
parameter dimensionality.

An experiment simulates (or loads) a dataset, runs C chains of one tempering
method (optionally in parallel processes; results are identical either way
because every chain owns its RNG substreams), writes trace CSVs with JSON
sidecars, and aggregates a diagnostics report, a convergence curve, and a
one-line summary.
"""

from __future__ import annotations

import configparser
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import INIT_STREAM, SIMULATION_STREAM, Dataset, RngStream, make_geometric_ladder, write_json
from .diagnostics import DiagnosticReport, diagnostic_report, rhat_curve
from .kernels import KernelConfig
from .models import GpRegressionModel, MvnMeanModel, simulate_gp_data, simulate_mvn_data
from .tempering import METHODS, ChainConfig, ChainTrace, run_chain

__all__ = [
    "ConfigError",
    "ChainFailure",
    "ExperimentConfig",
    "ExperimentResult",
    "initial_points",
    "run_experiment",
    "sweep",
    "SUMMARY_FIELDS",
]

# Namespace for per-chain streams; keeps chain substreams disjoint from the
# simulation (SIMULATION_STREAM) and initialization (INIT_STREAM) streams.
_CHAIN_NS = 10

SUMMARY_FIELDS = ("model", "method", "inner", "N", "K", "median_ess",
                  "ess_per_sec", "converged", "convergence_time_s")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ChainFailure(RuntimeError):
    """A chain aborted; partial outputs have been preserved."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    model: str = "mvn"
    method: str = "none"
    inner: str = "hmc"
    levels: int = 6
    beta_star: float = 0.125
    samples: int = 1000
    chains: int = 3
    seed: int = 0
    eps: float = 0.01
    leapfrog: int = 10
    mh_step: float = 0.1
    out: str | None = None
    dim: int = 5
    n_obs: int = 64
    sigma0: float = 1.0
    rho: float = 0.0
    mu0: float = 0.5
    gp_sigma0: float = 1.0
    a_f: float = 4.0
    b_f: float = 1.0
    a_n: float = 2.0
    b_n: float = 2.0
    data: str | None = None
    workers: int = 1
    require_converged: bool = False
    audit_subsamples: bool = False

    def validate(self) -> None:
        if self.model not in ("mvn", "gp"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.inner not in ("mh", "hmc"):
            raise ConfigError(f"unknown inner sampler {self.inner!r}")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if not (0.0 < self.beta_star <= 1.0):
            raise ConfigError("beta_star must lie in (0, 1]")
        if self.samples < 0:
            raise ConfigError("samples must be >= 0")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.n_obs < 1:
            raise ConfigError("n_obs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.eps <= 0 or self.leapfrog < 1 or self.mh_step <= 0:
            raise ConfigError("kernel parameters out of range")

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(kind=self.inner, mh_base_step=self.mh_step,
                            hmc_eps=self.eps, hmc_steps=self.leapfrog)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Load a flat key = value config file (INI sections ``experiment``,
        ``kernel``, ``model``); keyword overrides win over file values."""
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        key_map = {
            "experiment": ["model", "method", "inner", "levels", "beta_star",
                           "samples", "chains", "seed", "out", "workers",
                           "require_converged", "audit_subsamples"],
            "kernel": ["eps", "leapfrog", "mh_step"],
            "model": ["dim", "n_obs", "sigma0", "rho", "mu0", "gp_sigma0",
                      "a_f", "b_f", "a_n", "b_n", "data"],
        }
        values: dict = {}
        for section, keys in key_map.items():
            if not parser.has_section(section):
                continue
            for key in parser.options(section):
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = parser.get(section, key)
        for key, val in overrides.items():
            if val is not None:
                values[key] = val
        coerced = {}
        for key, val in values.items():
            f = cls.__dataclass_fields__.get(key)
            if f is None:
                raise ConfigError(f"unknown config key {key!r}")
            coerced[key] = _coerce(val, f.type, key)
        return cls(**coerced)


def _coerce(value, annot, key):
    if not isinstance(value, str):
        return value
    if "int" in annot:
        return int(value)
    if "float" in annot:
        return float(value)
    if "bool" in annot:
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {value!r} for {key}")
    return value


def build_model(config: ExperimentConfig, data: Dataset | None = None):
    if config.model == "mvn":
        return MvnMeanModel(config.dim, sigma0=config.sigma0, rho=config.rho, data=data)
    return GpRegressionModel(config.dim, data=data, mu0=config.mu0,
                             sigma0=config.gp_sigma0, a_f=config.a_f, b_f=config.b_f,
                             a_n=config.a_n, b_n=config.b_n)


def prepare_data(config: ExperimentConfig):
    """Load or simulate the experiment dataset.

    Simulation draws from dedicated substreams of the experiment seed, so an
    N-sweep under one seed produces datasets whose common prefix is
    byte-identical.  Returns ``(dataset, info)``.
    """
    if config.data is not None:
        return Dataset.from_csv(config.data), {"source": str(config.data)}
    sim_rng = RngStream(config.seed).substream(SIMULATION_STREAM)
    proto = build_model(config)
    if config.model == "mvn":
        theta_true = proto.sigma0 * sim_rng.substream(0).standard_normal(config.dim)
        data = simulate_mvn_data(proto, theta_true, config.n_obs, sim_rng.substream(1))
        info = {"seed": config.seed, "theta_true": [float(v) for v in theta_true]}
    else:
        data, drawn = simulate_gp_data(proto, config.n_obs, sim_rng)
        info = {"seed": config.seed, **drawn}
    return data, info


def initial_points(model, n_chains: int, rng) -> list:
    """Chain starting points.

    Three chains follow the prior-mean scheme {theta*, theta*/2, 2 theta*}
    (natural scale, then mapped to sampling coordinates).  A prior mean of
    (numerically) zero cannot be scaled, so overdispersed prior draws scaled
    by {0.5, 1, 2} substitute; any other chain count falls back to plain
    prior draws.
    """
    scales = (1.0, 0.5, 2.0)
    theta_star = model.prior_mean()
    if n_chains == 3:
        if float(np.linalg.norm(theta_star)) >= 1e-8:
            return [model.to_sampling(s * theta_star) for s in scales]
        return [s * model.sample_prior(rng) for s in scales]
    return [model.sample_prior(rng) for _ in range(n_chains)]


def _chain_task(args):
    method, model, chain_config, seed, chain_index = args
    rng = RngStream(seed).substream(_CHAIN_NS, chain_index)
    return run_chain(method, model, chain_config, rng)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    dataset: Dataset
    data_info: dict
    traces: list
    report: DiagnosticReport
    summary: dict
    out_dir: Path | None = None


def _summary_row(config: ExperimentConfig, report: DiagnosticReport) -> dict:
    return {
        "model": config.model,
        "method": config.method,
        "inner": config.inner,
        "N": config.n_obs,
        "K": (config.dim if config.model == "mvn" else config.dim + 2),
        "median_ess": report.median_ess,
        "ess_per_sec": report.ess_per_sec,
        "converged": report.converged,
        "convergence_time_s": report.convergence_time_s,
    }


def _write_summary(path: Path, rows, extra_fields=()) -> None:
    fields = list(extra_fields) + list(SUMMARY_FIELDS)
    with path.open("w", newline="") as fh:
        fh.write(",".join(fields) + "\n")
        for row in rows:
            cells = []
            for f in fields:
                v = row.get(f)
                if v is None:
                    cells.append("")
                elif isinstance(v, bool):
                    cells.append("true" if v else "false")
                elif isinstance(v, float):
                    cells.append(repr(v))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def _write_curve_csv(path: Path, method: str, grid, rhats, times) -> None:
    with path.open("w", newline="") as fh:
        fh.write("method,prefix_samples,wall_time_s,median_r_hat\n")
        for p, t, r in zip(grid, times, rhats):
            fh.write(f"{method},{int(p)},{repr(float(t))},{repr(float(r))}\n")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run one experiment end to end.

    Simulates or loads the dataset, runs ``config.chains`` chains of
    ``config.method`` from the standard initialization scheme, writes traces,
    sidecars, diagnostics JSON, convergence-curve CSV and a summary row under
    ``config.out`` (when set), and returns everything in memory.  A chain
    failure preserves the completed outputs, writes an error manifest, and
    raises :class:`ChainFailure`.
    """
    config.validate()
    out_dir = None
    if config.out is not None:
        out_dir = Path(config.out)
        (out_dir / "traces").mkdir(parents=True, exist_ok=True)

    data, data_info = prepare_data(config)
    model = build_model(config, data=data)
    if out_dir is not None and config.data is None:
        data.to_csv(out_dir / "data.csv")
        write_json(out_dir / "data.json", data_info)

    init_rng = RngStream(config.seed).substream(INIT_STREAM)
    starts = initial_points(model, config.chains, init_rng)
    ladder = make_geometric_ladder(config.levels, config.beta_star)
    kconf = config.kernel_config()

    tasks = []
    for c in range(config.chains):
        chain_config = ChainConfig(ladder=ladder, kernel=kconf,
                                   n_samples=config.samples, theta0=starts[c],
                                   chain_id=c, audit_subsamples=config.audit_subsamples)
        tasks.append((config.method, model, chain_config, config.seed, c))

    traces: list[ChainTrace] = []
    try:
        if config.workers > 1 and config.chains > 1:
            with ProcessPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
                traces = list(pool.map(_chain_task, tasks))
        else:
            for task in tasks:
                traces.append(_chain_task(task))
    except Exception as exc:
        if out_dir is not None:
            _write_traces(out_dir, config, traces)
            write_json(out_dir / "error_manifest.json", {
                "error": str(exc),
                "completed_chains": len(traces),
                "traceback": traceback.format_exc(),
            })
        raise ChainFailure(f"chain {len(traces)} failed: {exc}") from exc

    report = diagnostic_report(traces) if config.samples > 0 else diagnostic_report([])
    summary = _summary_row(config, report)
    result = ExperimentResult(config=config, dataset=data, data_info=data_info,
                              traces=traces, report=report, summary=summary,
                              out_dir=out_dir)
    if out_dir is not None:
        _write_traces(out_dir, config, traces)
        report.to_json(out_dir / f"diagnostics_{config.method}.json")
        if config.samples >= 4 and config.chains >= 2:
            grid, rhats, times = rhat_curve(traces)
            _write_curve_csv(out_dir / f"rhat_curve_{config.method}.csv",
                             config.method, grid, rhats, times)
        _write_summary(out_dir / "summary.csv", [summary])
    return result


def _write_traces(out_dir: Path, config: ExperimentConfig, traces) -> None:
    for trace in traces:
        stem = f"{config.method}_chain{trace.chain_id}"
        trace.to_csv(out_dir / "traces" / f"{stem}.csv")
        sidecar = trace.summary()
        sidecar["seed"] = config.seed
        sidecar["config"] = config.to_dict()
        write_json(out_dir / "traces" / f"{stem}.json", sidecar)


def sweep(config: ExperimentConfig, axis: str, values, methods=None) -> list:
    """Run one experiment per axis value (and method), sharing the seed.

    ``axis`` is ``"n"`` (dataset size) or ``"dimension"``; values must be
    sorted ascending.  Returns the summary rows, and writes them to
    ``sweep_summary.csv`` under ``config.out`` when set.
    """
    if axis not in ("n", "dimension"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    values = [int(v) for v in values]
    if values != sorted(values):
        raise ConfigError("sweep values must be sorted ascending")
    methods = list(methods) if methods else [config.method]
    base_out = Path(config.out) if config.out is not None else None

    rows = []
    for value in values:
        for method in methods:
            sub = replace(config, method=method,
                          **({"n_obs": value} if axis == "n" else {"dim": value}))
            if base_out is not None:
                sub = replace(sub, out=str(base_out / f"{axis}_{value}" / method))
            result = run_experiment(sub)
            row = {"axis": axis, "value": value, **result.summary}
            rows.append(row)
    if base_out is not None:
        base_out.mkdir(parents=True, exist_ok=True)
        _write_summary(base_out / "sweep_summary.csv", rows,
                       extra_fields=("axis", "value"))
    return rows
