"""Tempering schedulers: parallel tempering and tempered-transition
trajectories, in classical (likelihood exponent) and subsampled (nested data
subset) forms.

Classical levels use ``log h_m = beta_m * log_lik(full data) + log_prior``;
subsampled levels use ``log h_m = log_lik(X_m) + log_prior`` where ``X_m``
is a nested subsample of ``round(beta_m * N)`` rows, so the inverse
temperature enters only through the amount of data seen.  Level 0 always
sees the full dataset, which keeps the recorded marginal exact.

All acceptance arithmetic is carried out in log space.  Every (chain, level)
pair owns its RNG substream, so results are independent of scheduling.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ACCEPT_STREAM,
    INIT_STREAM,
    KERNEL_STREAM,
    SUBSAMPLE_STREAM,
    Dataset,
    Ladder,
    RngStream,
    SubsampleFamily,
    draw_nested_subsamples,
    subsample_sizes,
)
from .kernels import KernelConfig, TransitionStats, hmc_step, mh_step

__all__ = [
    "TemperedTarget",
    "EnsembleState",
    "TrajectoryState",
    "ChainConfig",
    "ChainTrace",
    "ChainRunError",
    "tempered_targets",
    "swap_log_ratio",
    "pt_iteration",
    "spt_iteration",
    "tt_iteration",
    "stt_iteration",
    "run_chain",
    "METHODS",
]

METHODS = ("none", "pt", "tt", "spt", "stt")


class ChainRunError(RuntimeError):
    """A kernel or model error interrupted a chain; records where."""

    def __init__(self, method, chain_id, iteration, cause):
        self.method = method
        self.chain_id = chain_id
        self.iteration = iteration
        super().__init__(
            f"{method} chain {chain_id} failed at iteration {iteration}: {cause}"
        )


@dataclass(frozen=True)
class TemperedTarget:
    """One auxiliary density ``h_m``: a model at an inverse temperature.

    ``subset`` is an index array into the model's dataset (``None`` = full
    data).  For classical targets the likelihood is weighted by ``beta``;
    for subsampled targets the weight is 1 and ``beta`` only records the
    ladder position (the MH step-size schedule still uses it).
    """

    model: object
    beta: float
    subset: np.ndarray | None = None
    level: int = 0
    subsampled: bool = False

    @property
    def weight(self) -> float:
        return 1.0 if self.subsampled else self.beta

    def log_likelihood(self, theta) -> float:
        return self.model.log_likelihood(theta, self.subset)

    def log_density(self, theta) -> float:
        return self.weight * self.log_likelihood(theta) + self.model.log_prior(theta)

    def grad_log_density(self, theta) -> np.ndarray:
        grad = self.model.grad_log_likelihood(theta, self.subset)
        return self.weight * grad + self.model.grad_log_prior(theta)

    def shares_subset_with(self, other: "TemperedTarget") -> bool:
        if self.subset is None and other.subset is None:
            return True
        if self.subset is None or other.subset is None:
            return False
        # nested families: equal length implies equal (sorted) index sets
        return len(self.subset) == len(other.subset)


def tempered_targets(model, ladder: Ladder, family: SubsampleFamily | None = None):
    """Build the per-level targets for a ladder.

    Without a subsample family the targets are classical (full data, beta
    exponent); with one they are subsampled (level m sees ``family[m]``,
    level 0 the full data).
    """
    targets = []
    for m, beta in enumerate(ladder.betas):
        if family is None:
            targets.append(TemperedTarget(model, float(beta), None, m, False))
        else:
            subset = None if m == 0 else family.index_sets[m]
            targets.append(TemperedTarget(model, float(beta), subset, m, True))
    return targets


def swap_log_ratio(target_a, target_b, theta_a, theta_b) -> float:
    """Log acceptance ratio of swapping states between two levels.

    ``log h_a(theta_b) + log h_b(theta_a) - log h_a(theta_a)
    - log h_b(theta_b)``, computed from scratch (four density evaluations).
    The terms are grouped per point so identical points or identical targets
    cancel to exactly zero.  Non-finite cross terms yield ``-inf`` so the
    caller auto-rejects.
    """
    ratio = (
        (target_a.log_density(theta_b) - target_b.log_density(theta_b))
        + (target_b.log_density(theta_a) - target_a.log_density(theta_a))
    )
    if math.isnan(ratio):
        return -np.inf
    return float(ratio)


def _log_uniform(rng) -> float:
    return -float(rng.exponential())


def _transition(theta, target, kconf: KernelConfig, rng, curr):
    """Dispatch one inner-kernel transition at this target's level."""
    if kconf.kind == "mh":
        return mh_step(theta, target, target.beta, rng,
                       base_step=kconf.mh_base_step, curr=curr)
    eps = kconf.hmc_eps
    if kconf.hmc_eps_scale_with_beta:
        eps = eps / math.sqrt(target.beta)
    return hmc_step(theta, target, eps, kconf.hmc_steps, rng, curr=curr,
                    divergence_threshold=kconf.divergence_threshold)


@dataclass
class EnsembleState:
    """Mutable per-chain state for PT/SPT: one parameter vector per level
    plus cached log-likelihood/log-prior parts and acceptance counters.

    The caches hold each level's likelihood over its *own* subset; swap
    bookkeeping updates them from the cross evaluations so no density is
    ever recomputed needlessly.
    """

    thetas: list
    log_lik: np.ndarray
    log_prior: np.ndarray
    level_stats: list
    swap_attempts: np.ndarray
    swap_accepts: np.ndarray

    @classmethod
    def initialize(cls, theta0, targets) -> "EnsembleState":
        theta0 = np.asarray(theta0, dtype=float)
        n_levels = len(targets)
        log_lik = np.empty(n_levels)
        log_prior = np.empty(n_levels)
        for m, tgt in enumerate(targets):
            log_lik[m] = tgt.log_likelihood(theta0)
            log_prior[m] = tgt.model.log_prior(theta0)
        return cls(
            thetas=[theta0.copy() for _ in range(n_levels)],
            log_lik=log_lik,
            log_prior=log_prior,
            level_stats=[TransitionStats() for _ in range(n_levels)],
            swap_attempts=np.zeros(max(n_levels - 1, 0), dtype=int),
            swap_accepts=np.zeros(max(n_levels - 1, 0), dtype=int),
        )

    def log_density(self, m, targets) -> float:
        return targets[m].weight * self.log_lik[m] + self.log_prior[m]

    def audit(self, targets) -> float:
        """Max absolute error between caches and fresh evaluations."""
        err = 0.0
        for m, tgt in enumerate(targets):
            err = max(err, abs(self.log_lik[m] - tgt.log_likelihood(self.thetas[m])))
            err = max(err, abs(self.log_prior[m] - tgt.model.log_prior(self.thetas[m])))
        return err


def _ensemble_iteration(state: EnsembleState, targets, kconf, level_rngs, swap_rng):
    """One PT/SPT iteration: a transition per level, then a systematic
    downward sweep of adjacent swap proposals.  Returns per-level kernel
    acceptance flags for this iteration."""
    flags = np.zeros(len(targets), dtype=bool)
    for m, tgt in enumerate(targets):
        curr = tgt.weight * state.log_lik[m] + state.log_prior[m]
        t0 = time.perf_counter()
        theta, accepted, log_h = _transition(state.thetas[m], tgt, kconf,
                                             level_rngs[m], curr)
        state.level_stats[m].record(accepted, time.perf_counter() - t0)
        flags[m] = accepted
        if accepted:
            lp = tgt.model.log_prior(theta)
            state.thetas[m] = theta
            state.log_prior[m] = lp
            state.log_lik[m] = (log_h - lp) / tgt.weight

    for m in range(len(targets) - 1, 0, -1):
        low, high = targets[m - 1], targets[m]
        state.swap_attempts[m - 1] += 1
        if low.shares_subset_with(high):
            # identical subsets: cross likelihoods equal the cached ones
            cross_low = state.log_lik[m]
            cross_high = state.log_lik[m - 1]
            if low.subsampled:
                ratio = 0.0
            else:
                ratio = (low.beta - high.beta) * (state.log_lik[m] - state.log_lik[m - 1])
        else:
            cross_low = low.log_likelihood(state.thetas[m])
            cross_high = high.log_likelihood(state.thetas[m - 1])
            ratio = (cross_low + cross_high
                     - state.log_lik[m - 1] - state.log_lik[m])
        if math.isnan(ratio):
            continue
        if ratio >= 0.0 or _log_uniform(swap_rng) < ratio:
            state.swap_accepts[m - 1] += 1
            state.thetas[m - 1], state.thetas[m] = state.thetas[m], state.thetas[m - 1]
            lp = state.log_prior[m - 1]
            state.log_prior[m - 1] = state.log_prior[m]
            state.log_prior[m] = lp
            state.log_lik[m - 1] = cross_low
            state.log_lik[m] = cross_high
    return flags


def pt_iteration(state, targets, kconf, level_rngs, swap_rng):
    """One parallel-tempering iteration over classical (full-data) targets."""
    if any(t.subsampled for t in targets):
        raise ValueError("pt_iteration expects classical targets")
    return _ensemble_iteration(state, targets, kconf, level_rngs, swap_rng)


def spt_iteration(state, targets, kconf, level_rngs, swap_rng):
    """One subsampled-parallel-tempering iteration; targets carry the fixed
    nested subsample family drawn at initialization."""
    if len(targets) > 1 and not any(t.subsampled for t in targets):
        raise ValueError("spt_iteration expects subsampled targets")
    return _ensemble_iteration(state, targets, kconf, level_rngs, swap_rng)


@dataclass
class TrajectoryState:
    """Record of one tempered-transition trajectory.

    ``up[m]`` holds the ascent sample at level m (``up[0]`` is the starting
    point); ``down[m]`` the descent sample, with ``down[M] == up[M]`` by
    construction.  ``log_sum`` is the accumulated log acceptance ratio.
    """

    up: list
    down: list
    log_sum: float
    accepted: bool


def _trajectory(theta0, targets, kconf, level_rngs, accept_rng,
                curr_parts=None, stats=None, transition=None):
    """One up-and-down trajectory shared by TT and STT.

    The ascent draws ``up[m]`` with the level-m kernel; the descent leaves
    level m+1 with that same level's kernel (the pairing under which the
    accumulated ratio is the exact MH acceptance for the whole trajectory).
    Returns ``(theta, accepted, (log_lik, log_prior) at level 0, trajectory)``.
    """
    n_levels = len(targets)
    top = n_levels - 1
    if transition is None:
        transition = _transition
    target0 = targets[0]
    theta0 = np.asarray(theta0, dtype=float)
    if curr_parts is None:
        curr_parts = (target0.log_likelihood(theta0), target0.model.log_prior(theta0))
    ll0, lp0 = curr_parts
    dens_prev = target0.weight * ll0 + lp0

    log_sum = 0.0
    theta = theta0
    up = [theta0]
    for m in range(1, n_levels):
        tgt = targets[m]
        start = tgt.log_density(theta)
        log_sum += start - dens_prev
        if not np.isfinite(log_sum):
            return theta0, False, curr_parts, TrajectoryState(up, [], -np.inf, False)
        t0 = time.perf_counter()
        theta, accepted, dens_prev = transition(theta, tgt, kconf, level_rngs[m], start)
        if stats is not None:
            stats[m].record(accepted, time.perf_counter() - t0)
        up.append(theta)

    down = [None] * n_levels
    down[top] = theta
    for m in range(top - 1, -1, -1):
        leaving = targets[m + 1]
        t0 = time.perf_counter()
        theta, accepted, dens_leave = transition(theta, leaving, kconf,
                                                 level_rngs[m + 1], dens_prev)
        if stats is not None:
            stats[m + 1].record(accepted, time.perf_counter() - t0)
        at_level = targets[m].log_density(theta)
        log_sum += at_level - dens_leave
        if not np.isfinite(log_sum):
            return theta0, False, curr_parts, TrajectoryState(up, down, -np.inf, False)
        down[m] = theta
        dens_prev = at_level

    trajectory = TrajectoryState(up, down, float(log_sum), False)
    if log_sum >= 0.0 or _log_uniform(accept_rng) < log_sum:
        trajectory.accepted = True
        new_lp = target0.model.log_prior(theta)
        new_ll = (dens_prev - new_lp) / target0.weight
        return theta, True, (new_ll, new_lp), trajectory
    return theta0, False, curr_parts, trajectory


def tt_iteration(theta0, targets, kconf, level_rngs, accept_rng,
                 curr_parts=None, stats=None, transition=None):
    """One tempered-transitions proposal over classical full-data targets."""
    if any(t.subsampled for t in targets):
        raise ValueError("tt_iteration expects classical targets")
    return _trajectory(theta0, targets, kconf, level_rngs, accept_rng,
                       curr_parts=curr_parts, stats=stats, transition=transition)


def stt_iteration(theta0, model, ladder, data, kconf, level_rngs, accept_rng,
                  subsample_rng, sizes=None, curr_parts=None, stats=None,
                  audit=False):
    """One subsampled tempered-transitions proposal.

    A fresh nested subsample family is drawn for the upward sweep (and reused
    on the way down), so each iteration sees different subsets.  Returns the
    trajectory result plus the family used.
    """
    if sizes is None:
        sizes = subsample_sizes(ladder, data.n)
    family = draw_nested_subsamples(data, sizes, subsample_rng)
    if audit:
        family.validate()
    targets = tempered_targets(model, ladder, family)
    result = _trajectory(theta0, targets, kconf, level_rngs, accept_rng,
                         curr_parts=curr_parts, stats=stats)
    return result + (family,)


@dataclass(frozen=True)
class ChainConfig:
    """Per-chain run settings: ladder, inner kernel, and sample count."""

    ladder: Ladder
    kernel: KernelConfig
    n_samples: int
    theta0: np.ndarray | None = None
    chain_id: int = 0
    audit_subsamples: bool = False

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")


@dataclass
class ChainTrace:
    """Recorded output of one chain: level-0 samples with wall-time stamps
    and acceptance bookkeeping."""

    method: str
    chain_id: int
    samples: np.ndarray
    wall_time: np.ndarray
    accepted: np.ndarray
    level_stats: list = field(default_factory=list)
    swap_attempts: np.ndarray | None = None
    swap_accepts: np.ndarray | None = None
    trajectory_attempts: int = 0
    trajectory_accepts: int = 0
    duration: float = 0.0

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def param_dim(self) -> int:
        return self.samples.shape[1] if self.samples.ndim == 2 else 0

    @property
    def per_sample_time(self) -> float:
        if self.n_samples == 0:
            return float("nan")
        return self.duration / self.n_samples

    def summary(self) -> dict:
        """Acceptance bookkeeping for the JSON sidecar."""
        kernel_time = sum(s.wall_time for s in self.level_stats)
        out = {
            "method": self.method,
            "chain": self.chain_id,
            "n_samples": int(self.n_samples),
            "duration_s": float(self.duration),
            "level_acceptance": [s.rate for s in self.level_stats],
            "level_proposals": [s.proposals for s in self.level_stats],
            "kernel_time_s": float(kernel_time),
            "tempering_overhead_s": float(max(self.duration - kernel_time, 0.0)),
        }
        if self.swap_attempts is not None:
            attempts = np.maximum(self.swap_attempts, 1)
            out["swap_attempts"] = [int(v) for v in self.swap_attempts]
            out["swap_accepts"] = [int(v) for v in self.swap_accepts]
            out["swap_rates"] = [float(v) for v in self.swap_accepts / attempts]
        if self.trajectory_attempts:
            out["trajectory_acceptance"] = self.trajectory_accepts / self.trajectory_attempts
        return out

    def to_csv(self, path) -> None:
        """Write ``iter, chain, wall_time_s, accepted, theta_*`` rows."""
        k = self.param_dim
        header = ["iter", "chain", "wall_time_s", "accepted"]
        header += [f"theta_{j}" for j in range(k)]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(self.n_samples):
                row = [str(i), str(self.chain_id),
                       repr(float(self.wall_time[i])), str(int(self.accepted[i]))]
                row += [repr(float(v)) for v in self.samples[i]]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path, method="unknown") -> "ChainTrace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        k = len(header) - 4
        if header[:4] != ["iter", "chain", "wall_time_s", "accepted"] or k < 1:
            raise ValueError(f"unexpected trace header in {path}")
        chain_id = int(rows[0][1]) if rows else 0
        samples = np.array([[float(v) for v in r[4:]] for r in rows]).reshape(len(rows), k)
        wall = np.array([float(r[2]) for r in rows])
        acc = np.array([bool(int(r[3])) for r in rows])
        duration = float(wall[-1]) if len(wall) else 0.0
        return cls(method=method, chain_id=chain_id, samples=samples,
                   wall_time=wall, accepted=acc, duration=duration)


def run_chain(method: str, model, config: ChainConfig, rng: RngStream) -> ChainTrace:
    """Run one chain of the given method and return its trace.

    Every (chain, level) pair draws from its own substream of ``rng``, so the
    trace is bit-identical across runs and thread counts for a fixed seed.
    With ``n_samples == 0`` no model evaluation takes place.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    n_samples = int(config.n_samples)
    kconf = config.kernel
    ladder = config.ladder if method != "none" else Ladder(np.array([1.0]))
    n_levels = len(ladder)
    if method in ("tt", "stt") and ladder.levels < 1:
        raise ValueError(f"{method} requires at least one auxiliary level")

    k = model.param_dim
    if n_samples == 0:
        return ChainTrace(method=method, chain_id=config.chain_id,
                          samples=np.empty((0, k)), wall_time=np.empty(0),
                          accepted=np.empty(0, dtype=bool),
                          level_stats=[TransitionStats() for _ in range(n_levels)],
                          swap_attempts=np.zeros(max(n_levels - 1, 0), dtype=int),
                          swap_accepts=np.zeros(max(n_levels - 1, 0), dtype=int))

    level_rngs = [rng.substream(KERNEL_STREAM, m) for m in range(n_levels)]
    accept_rng = rng.substream(ACCEPT_STREAM)
    subsample_rng = rng.substream(SUBSAMPLE_STREAM)

    theta0 = config.theta0
    if theta0 is None:
        theta0 = model.sample_prior(rng.substream(INIT_STREAM))
    theta0 = np.asarray(theta0, dtype=float)

    samples = np.empty((n_samples, k))
    stamps = np.empty(n_samples)
    accepted = np.zeros(n_samples, dtype=bool)

    start = time.perf_counter()
    if method in ("none", "pt", "spt"):
        family = None
        if method == "spt":
            sizes = subsample_sizes(ladder, model.n_obs)
            family = draw_nested_subsamples(model.data, sizes, subsample_rng)
            if config.audit_subsamples:
                family.validate()
        targets = tempered_targets(model, ladder, family)
        state = EnsembleState.initialize(theta0, targets)
        for i in range(n_samples):
            try:
                flags = _ensemble_iteration(state, targets, kconf, level_rngs, accept_rng)
            except Exception as exc:
                raise ChainRunError(method, config.chain_id, i, exc) from exc
            samples[i] = state.thetas[0]
            accepted[i] = flags[0]
            stamps[i] = time.perf_counter() - start
        trace = ChainTrace(method=method, chain_id=config.chain_id,
                           samples=samples, wall_time=stamps, accepted=accepted,
                           level_stats=state.level_stats,
                           swap_attempts=state.swap_attempts,
                           swap_accepts=state.swap_accepts)
    else:
        targets = tempered_targets(model, ladder) if method == "tt" else None
        sizes = subsample_sizes(ladder, model.n_obs) if method == "stt" else None
        stats = [TransitionStats() for _ in range(n_levels)]
        theta = theta0
        curr_parts = None
        accepts = 0
        for i in range(n_samples):
            try:
                if method == "tt":
                    theta, ok, curr_parts, _ = tt_iteration(
                        theta, targets, kconf, level_rngs, accept_rng,
                        curr_parts=curr_parts, stats=stats)
                else:
                    theta, ok, curr_parts, _, _ = stt_iteration(
                        theta, model, ladder, model.data, kconf, level_rngs,
                        accept_rng, subsample_rng, sizes=sizes,
                        curr_parts=curr_parts, stats=stats,
                        audit=config.audit_subsamples)
            except Exception as exc:
                raise ChainRunError(method, config.chain_id, i, exc) from exc
            accepts += int(ok)
            samples[i] = theta
            accepted[i] = ok
            stamps[i] = time.perf_counter() - start
        trace = ChainTrace(method=method, chain_id=config.chain_id,
                           samples=samples, wall_time=stamps, accepted=accepted,
                           level_stats=stats,
                           trajectory_attempts=n_samples,
                           trajectory_accepts=accepts)
    trace.duration = float(stamps[-1]) if n_samples else 0.0
    return trace
