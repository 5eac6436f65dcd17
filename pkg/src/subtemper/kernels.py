"""Inner transition kernels: one-step random-walk Metropolis-Hastings and
Hamiltonian Monte Carlo with leapfrog integration.

Kernels are stateless; callers own the parameter vector, the RNG stream and
any cached log density, so one kernel configuration can drive many
concurrent chains.  All acceptance arithmetic is done in log space, and a
non-finite proposal density (or a diverged trajectory) rejects instead of
raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["KernelConfig", "TransitionStats", "mh_step", "leapfrog", "hmc_step"]


@dataclass(frozen=True)
class KernelConfig:
    """Inner-sampler settings.

    ``kind`` selects MH or HMC.  The MH proposal scale at inverse temperature
    beta is ``mh_base_step * beta**-0.5``; HMC uses a fixed step size and
    leapfrog count at every level unless ``hmc_eps_scale_with_beta`` is set.
    """

    kind: str = "hmc"
    mh_base_step: float = 0.1
    hmc_eps: float = 0.01
    hmc_steps: int = 10
    hmc_eps_scale_with_beta: bool = False
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if self.kind not in ("mh", "hmc"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.mh_base_step <= 0:
            raise ValueError("mh_base_step must be positive")
        if self.hmc_eps <= 0:
            raise ValueError("hmc_eps must be positive")
        if self.hmc_steps < 1:
            raise ValueError("hmc_steps must be >= 1")


@dataclass
class TransitionStats:
    proposals: int = 0
    accepts: int = 0
    wall_time: float = 0.0

    def record(self, accepted: bool, elapsed: float = 0.0) -> None:
        self.proposals += 1
        self.accepts += int(accepted)
        self.wall_time += elapsed

    @property
    def rate(self) -> float:
        return self.accepts / self.proposals if self.proposals else float("nan")


def _log_uniform(rng) -> float:
    # -Exp(1) is distributed as log U(0,1); strictly negative except for the
    # measure-zero U=0 draw, which the ratio>=0 short-circuit already covers.
    return -float(rng.exponential())


def _nonfinite(arr) -> bool:
    # cheap sum probe; the exact elementwise check only runs when the sum is
    # non-finite (which huge-but-finite entries can also trigger)
    return not math.isfinite(float(arr.sum())) and not np.all(np.isfinite(arr))


def mh_step(theta, target, beta, rng, base_step=0.1, curr=None):
    """One random-walk Metropolis step invariant for ``target``.

    Proposes ``theta' ~ N(theta, sigma^2 I)`` with
    ``sigma = base_step * beta**-0.5`` and accepts with probability
    ``min(1, h(theta')/h(theta))``.  Returns ``(theta', accepted, log_h')``;
    pass ``curr`` (the cached ``log h(theta)``) to skip re-evaluation.
    """
    if curr is None:
        curr = target.log_density(theta)
    sigma = base_step / math.sqrt(beta)
    proposal = theta + sigma * rng.standard_normal(theta.shape[0])
    log_h = target.log_density(proposal)
    if not np.isfinite(log_h):
        return theta, False, curr
    ratio = log_h - curr
    if ratio >= 0.0 or _log_uniform(rng) < ratio:
        return proposal, True, log_h
    return theta, False, curr


def leapfrog(theta, p, eps, n_steps, grad):
    """Leapfrog-integrate ``n_steps`` position/momentum alternations.

    Half-step momentum, ``n_steps`` full position updates with interleaved
    momentum kicks, final half-step momentum.  Returns
    ``(theta', p', ok)`` where ``ok`` is False if any intermediate state or
    gradient went non-finite (a diverged trajectory the caller must reject).
    """
    if n_steps < 1:
        raise ValueError("leapfrog requires at least one step")
    g = grad(theta)
    if _nonfinite(g):
        return theta, p, False
    p = p + 0.5 * eps * g
    for step in range(n_steps):
        theta = theta + eps * p
        if _nonfinite(theta):
            return theta, p, False
        g = grad(theta)
        if _nonfinite(g):
            return theta, p, False
        p = p + (eps if step < n_steps - 1 else 0.5 * eps) * g
    return theta, p, True


def hmc_step(theta, target, eps, n_steps, rng, curr=None, divergence_threshold=1000.0):
    """One HMC transition invariant for ``target``.

    Draws ``p ~ N(0, I)``, integrates the trajectory with :func:`leapfrog`,
    and accepts with probability ``min(1, exp(-dH))`` where
    ``H = -log h(theta) + |p|^2 / 2``.  Diverged trajectories (non-finite
    states or ``|dH|`` above the threshold) are rejected.  Returns
    ``(theta', accepted, log_h')``.
    """
    if curr is None:
        curr = target.log_density(theta)
    p0 = rng.standard_normal(theta.shape[0])
    proposal, p, ok = leapfrog(theta, p0, eps, n_steps, target.grad_log_density)
    if not ok:
        return theta, False, curr
    log_h = target.log_density(proposal)
    if not np.isfinite(log_h):
        return theta, False, curr
    delta_h = (-log_h + 0.5 * float(p @ p)) - (-curr + 0.5 * float(p0 @ p0))
    if abs(delta_h) > divergence_threshold:
        return theta, False, curr
    ratio = -delta_h
    if ratio >= 0.0 or _log_uniform(rng) < ratio:
        return proposal, True, log_h
    return theta, False, curr
