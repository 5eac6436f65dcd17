"""Multi-chain convergence and efficiency diagnostics.

Implements the between/within-chain variance decomposition, estimated
potential scale reduction (R-hat), and the capped effective sample size
``ESS = C * S * min(1, var_hat / B)`` across chains, plus median-over-
dimension aggregation, prefix-scan convergence timing, and effective samples
per second.  The first half of every chain is discarded as burn-in before
any statistic is computed (and re-discarded per prefix when scanning).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ChainSet",
    "DiagnosticReport",
    "ConvergenceResult",
    "between_within",
    "var_hat",
    "r_hat",
    "ess",
    "median_r_hat",
    "converged",
    "convergence_time",
    "ess_per_second",
    "diagnostic_report",
    "prefix_grid",
    "rhat_curve",
    "RHAT_THRESHOLD",
]

RHAT_THRESHOLD = 1.1


@dataclass(frozen=True)
class ChainSet:
    """C chains x S post-burn-in samples x K dimensions, with per-sample
    wall-time stamps."""

    samples: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 3:
            raise ValueError("ChainSet expects a (chains, samples, dims) array")
        object.__setattr__(self, "samples", samples)

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def n_dims(self) -> int:
        return self.samples.shape[2]

    @classmethod
    def from_traces(cls, traces, discard_burn_in: bool = True) -> "ChainSet":
        """Stack chain traces, truncating to the shortest and discarding the
        first half of each chain when requested."""
        lengths = [t.n_samples for t in traces]
        s = min(lengths)
        lo = s // 2 if discard_burn_in else 0
        samples = np.stack([t.samples[lo:s] for t in traces])
        times = np.stack([t.wall_time[lo:s] for t in traces])
        return cls(samples=samples, times=times)


def between_within(chains, dim: int = 0):
    """Between-chain and within-chain variances for one dimension.

    ``B = S/(C-1) * sum_c (mean_c - grand_mean)^2`` and ``W`` is the mean of
    the per-chain sample variances.  Requires at least two chains and two
    samples per chain.
    """
    x = chains.samples[:, :, dim] if isinstance(chains, ChainSet) else np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a (chains, samples) array")
    c, s = x.shape
    if c < 2 or s < 2:
        raise ValueError(f"need C >= 2 and S >= 2, got C={c}, S={s}")
    means = x.mean(axis=1)
    b = s / (c - 1) * float(np.sum((means - means.mean()) ** 2))
    w = float(np.mean(x.var(axis=1, ddof=1)))
    return b, w


def var_hat(b: float, w: float, s: int) -> float:
    """Pooled marginal-variance estimate ``(S-1)/S * W + B/S``."""
    if w < 0:
        raise ValueError("within-chain variance cannot be negative")
    return (s - 1) / s * w + b / s


def r_hat(variance_hat: float, w: float) -> float:
    """Estimated potential scale reduction ``sqrt(var_hat / W)``.

    Degenerate-chain conventions: constant chains at different values give
    ``+inf``, fully constant samples give 1.
    """
    if w == 0.0:
        return 1.0 if variance_hat == 0.0 else float("inf")
    return math.sqrt(variance_hat / w)


def ess(variance_hat: float, b: float, c: int, s: int) -> float:
    """Total effective sample size ``C*S*min(1, var_hat / B)`` across chains."""
    total = c * s
    if b == 0.0:
        return float(total)
    return float(total * min(1.0, variance_hat / b))


def _per_dim_stats(chains: ChainSet):
    c, s = chains.n_chains, chains.n_samples
    rows = []
    for k in range(chains.n_dims):
        b, w = between_within(chains, k)
        vh = var_hat(b, w, s)
        rows.append({
            "b": b,
            "w": w,
            "var_hat": vh,
            "r_hat": r_hat(vh, w),
            "ess": ess(vh, b, c, s),
        })
    return rows


def median_r_hat(chains: ChainSet) -> float:
    """Median of the per-dimension R-hat values."""
    return float(np.median([row["r_hat"] for row in _per_dim_stats(chains)]))


def converged(chains: ChainSet, threshold: float = RHAT_THRESHOLD) -> bool:
    return median_r_hat(chains) < threshold


def prefix_grid(n_samples: int, n_points: int = 60, min_len: int = 20) -> np.ndarray:
    """Log-spaced prefix lengths at which convergence is evaluated."""
    if n_samples < max(min_len, 4):
        return np.array([n_samples], dtype=int) if n_samples >= 4 else np.array([], dtype=int)
    grid = np.geomspace(max(min_len, 4), n_samples, num=n_points)
    grid = np.unique(np.round(grid).astype(int))
    grid[-1] = n_samples
    return grid


@dataclass(frozen=True)
class ConvergenceResult:
    converged: bool
    samples: int | None = None
    seconds: float | None = None


def rhat_curve(traces, threshold: float = RHAT_THRESHOLD, n_points: int = 60):
    """Median R-hat along growing prefixes of a set of chains.

    Each prefix re-discards its own first half as burn-in.  Returns
    ``(prefix_lengths, median_rhats, wall_times)`` where the wall time of a
    prefix is the mean over chains of the time stamp at its last sample.
    """
    s = min(t.n_samples for t in traces)
    grid = prefix_grid(s, n_points=n_points)
    rhats = np.empty(grid.size)
    times = np.empty(grid.size)
    for i, p in enumerate(grid):
        subset = ChainSet(
            samples=np.stack([t.samples[p // 2: p] for t in traces]),
        )
        rhats[i] = median_r_hat(subset)
        times[i] = float(np.mean([t.wall_time[p - 1] for t in traces]))
    return grid, rhats, times


def convergence_time(traces, threshold: float = RHAT_THRESHOLD,
                     n_points: int = 60) -> ConvergenceResult:
    """First prefix (sample count and wall time) at which the chains have
    mixed, or the not-converged sentinel if none has."""
    if min(t.n_samples for t in traces) < 4:
        return ConvergenceResult(converged=False)
    grid, rhats, times = rhat_curve(traces, threshold=threshold, n_points=n_points)
    hits = np.nonzero(rhats < threshold)[0]
    if hits.size == 0:
        return ConvergenceResult(converged=False)
    first = hits[0]
    return ConvergenceResult(converged=True, samples=int(grid[first]),
                             seconds=float(times[first]))


@dataclass(frozen=True)
class DiagnosticReport:
    """Per-dimension variance statistics plus their median aggregates."""

    per_dim: list
    median_r_hat: float
    median_ess: float
    ess_per_sec: float
    converged: bool
    convergence_time_s: float | None
    convergence_samples: int | None

    def to_dict(self) -> dict:
        return {
            "per_dim": self.per_dim,
            "median_r_hat": self.median_r_hat,
            "median_ess": self.median_ess,
            "ess_per_sec": self.ess_per_sec,
            "converged": self.converged,
            "convergence_time_s": self.convergence_time_s,
            "convergence_samples": self.convergence_samples,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def ess_per_second(report, traces) -> float:
    """Median-over-dimensions ESS divided by the mean per-chain duration."""
    if isinstance(report, DiagnosticReport):
        median_ess = report.median_ess
    else:
        median_ess = float(report)
    durations = [float(t.wall_time[-1]) for t in traces]
    mean_duration = float(np.mean(durations))
    if mean_duration <= 0.0:
        raise ValueError("cannot normalize ESS by a zero duration")
    return median_ess / mean_duration


def diagnostic_report(traces, threshold: float = RHAT_THRESHOLD,
                      n_points: int = 60) -> DiagnosticReport:
    """Full multi-chain report for a set of traces of one method.

    Discards the first half of each chain, computes per-dimension B/W/R-hat/
    ESS, median aggregates, ESS per second (mean per-chain wall time), and
    the prefix-scan convergence time.
    """
    if any(t.n_samples < 4 for t in traces) or len(traces) < 2:
        return DiagnosticReport(per_dim=[], median_r_hat=float("nan"),
                                median_ess=float("nan"), ess_per_sec=float("nan"),
                                converged=False, convergence_time_s=None,
                                convergence_samples=None)
    chains = ChainSet.from_traces(traces)
    per_dim = _per_dim_stats(chains)
    med_rhat = float(np.median([r["r_hat"] for r in per_dim]))
    med_ess = float(np.median([r["ess"] for r in per_dim]))
    conv = convergence_time(traces, threshold=threshold, n_points=n_points)
    return DiagnosticReport(
        per_dim=per_dim,
        median_r_hat=med_rhat,
        median_ess=med_ess,
        ess_per_sec=ess_per_second(med_ess, traces),
        converged=med_rhat < threshold,
        convergence_time_s=conv.seconds,
        convergence_samples=conv.samples,
    )
