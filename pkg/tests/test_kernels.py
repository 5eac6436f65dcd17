import math

import numpy as np
import pytest
from scipy.stats import chi2, kstest

from subtemper import (
    KernelConfig,
    MvnMeanModel,
    RngStream,
    TransitionStats,
    hmc_step,
    leapfrog,
    mh_step,
    mvn_analytic_posterior,
    simulate_mvn_data,
)


class QuadraticTarget:
    """log h = -0.5 theta^T A theta, for kernel-level tests."""

    def __init__(self, precision):
        self.precision = np.atleast_2d(np.asarray(precision, dtype=float))

    def log_density(self, theta):
        return -0.5 * float(theta @ self.precision @ theta)

    def grad_log_density(self, theta):
        return -self.precision @ theta


class FlatTarget:
    def log_density(self, theta):
        return 0.0

    def grad_log_density(self, theta):
        return np.zeros_like(theta)


class StubRng:
    """Deterministic stand-in: unit normal steps, never-rejecting uniforms."""

    def __init__(self):
        self.normal_calls = 0

    def standard_normal(self, size):
        self.normal_calls += 1
        return np.ones(size)

    def exponential(self):
        return 50.0  # log u = -50: accepts anything remotely plausible


class TestKernelConfig:
    def test_defaults(self):
        cfg = KernelConfig()
        assert cfg.kind == "hmc" and cfg.hmc_eps == 0.01 and cfg.hmc_steps == 10

    @pytest.mark.parametrize("kwargs", [
        {"kind": "nuts"}, {"mh_base_step": 0.0}, {"hmc_eps": -1.0}, {"hmc_steps": 0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            KernelConfig(**kwargs)

    def test_stats_counters(self):
        stats = TransitionStats()
        stats.record(True, 0.5)
        stats.record(False, 0.5)
        assert stats.proposals == 2 and stats.accepts == 1
        assert stats.rate == 0.5 and stats.wall_time == 1.0


class TestMhStep:
    def test_step_size_scales_with_beta(self):
        # sigma = base * beta**-0.5: 0.1 at beta=1, 0.2 at beta=1/4
        target = FlatTarget()
        theta = np.zeros(3)
        for beta, sigma in ((1.0, 0.1), (0.25, 0.2)):
            proposal, accepted, _ = mh_step(theta, target, beta, StubRng(), base_step=0.1)
            assert accepted
            np.testing.assert_allclose(proposal, sigma * np.ones(3), rtol=1e-14)

    def test_flat_target_always_accepts(self):
        target = FlatTarget()
        rng = RngStream(0)
        theta = np.zeros(2)
        accepts = 0
        for _ in range(500):
            theta, accepted, _ = mh_step(theta, target, 1.0, rng)
            accepts += accepted
        assert accepts == 500

    def test_non_finite_proposal_density_rejects(self):
        class HoleTarget(FlatTarget):
            def log_density(self, theta):
                return -np.inf if abs(theta[0]) > 0 else 0.0

        theta = np.zeros(1)
        out, accepted, logh = mh_step(theta, HoleTarget(), 1.0, RngStream(1), curr=0.0)
        assert not accepted and out is theta and logh == 0.0

    def test_standard_normal_moments(self):
        # exact-target moment check: 100k steps of sigma=0.1 random walk
        target = QuadraticTarget([[1.0]])
        rng = RngStream(2)
        theta = np.array([0.0])
        curr = target.log_density(theta)
        total = 0.0
        total_sq = 0.0
        steps = 100_000
        for _ in range(steps):
            theta, _, curr = mh_step(theta, target, 1.0, rng, base_step=0.1, curr=curr)
            total += theta[0]
            total_sq += theta[0] ** 2
        mean = total / steps
        var = total_sq / steps - mean**2
        assert abs(mean) < 0.05
        assert abs(var - 1.0) < 0.1


class TestLeapfrog:
    def test_reversibility(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 3))
        target = QuadraticTarget(a @ a.T + 3 * np.eye(3))
        theta, p = rng.standard_normal(3), rng.standard_normal(3)
        fwd_theta, fwd_p, ok = leapfrog(theta, p, 0.05, 12, target.grad_log_density)
        assert ok
        back_theta, back_p, ok = leapfrog(fwd_theta, -fwd_p, 0.05, 12, target.grad_log_density)
        assert ok
        np.testing.assert_allclose(back_theta, theta, atol=1e-10)
        np.testing.assert_allclose(back_p, -p, atol=1e-10)

    def test_energy_error_harmonic(self):
        # H = theta^2/2 + p^2/2, eps=0.01, L=10: |dH| < 1e-4
        target = QuadraticTarget([[1.0]])
        theta, p = np.array([1.3]), np.array([-0.4])
        h0 = -target.log_density(theta) + 0.5 * float(p @ p)
        theta2, p2, ok = leapfrog(theta, p, 0.01, 10, target.grad_log_density)
        assert ok
        h1 = -target.log_density(theta2) + 0.5 * float(p2 @ p2)
        assert abs(h1 - h0) < 1e-4

    def test_zero_steps_disallowed(self):
        with pytest.raises(ValueError):
            leapfrog(np.zeros(1), np.zeros(1), 0.1, 0, lambda t: t)

    def test_single_step_euler_limit(self):
        target = QuadraticTarget([[1.0]])
        theta, p = np.array([0.7]), np.array([0.9])
        eps = 1e-8
        theta2, _, ok = leapfrog(theta, p, eps, 1, target.grad_log_density)
        assert ok
        np.testing.assert_allclose((theta2 - theta) / eps, p, atol=1e-7)

    def test_divergence_flags_non_finite(self):
        def exploding(theta):
            return np.full_like(theta, np.nan)

        _, _, ok = leapfrog(np.zeros(2), np.ones(2), 0.1, 3, exploding)
        assert not ok

    def test_volume_preservation(self):
        # |det d(theta', p')/d(theta, p)| = 1 for random 2-D quadratic targets
        rng = np.random.default_rng(4)
        for _ in range(5):
            a = rng.standard_normal((2, 2))
            target = QuadraticTarget(a @ a.T + 2 * np.eye(2))
            z0 = rng.standard_normal(4)

            def flow(z):
                theta, p, ok = leapfrog(z[:2].copy(), z[2:].copy(), 0.05, 8,
                                        target.grad_log_density)
                assert ok
                return np.concatenate([theta, p])

            h = 1e-6
            jac = np.empty((4, 4))
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                jac[:, j] = (flow(z0 + e) - flow(z0 - e)) / (2 * h)
            assert abs(abs(np.linalg.det(jac)) - 1.0) < 1e-6


class TestHmcStep:
    def test_high_dimensional_normal(self):
        # D=50 standard normal at eps=0.01, L=10: near-unit acceptance and the
        # sample covariance recovers the identity.  The short trajectory
        # (0.1 rad of phase per step) leaves per-entry Monte Carlo noise of
        # ~0.13 at 50k steps, so the elementwise band reflects that.
        d = 50
        target = QuadraticTarget(np.eye(d))
        rng = RngStream(5)
        theta = rng.standard_normal(d)
        curr = target.log_density(theta)
        steps = 50_000
        accepts = 0
        first = np.zeros(d)
        second = np.zeros((d, d))
        for _ in range(steps):
            theta, accepted, curr = hmc_step(theta, target, 0.01, 10, rng, curr=curr)
            accepts += accepted
            first += theta
            second += np.outer(theta, theta)
        assert accepts / steps > 0.95
        mean = first / steps
        cov = second / steps - np.outer(mean, mean)
        dev = np.abs(cov - np.eye(d))
        assert np.abs(mean).max() < 0.35
        assert dev.max() < 0.35
        assert dev.mean() < 0.08

    def test_flat_target_free_flight(self):
        target = FlatTarget()
        rng = StubRng()
        theta = np.zeros(3)
        eps, steps = 0.1, 7
        out, accepted, _ = hmc_step(theta, target, eps, steps, rng)
        assert accepted
        np.testing.assert_allclose(out, eps * steps * np.ones(3), rtol=1e-12)

    def test_divergence_threshold_rejects(self):
        target = QuadraticTarget([[1.0]])
        rng = RngStream(6)
        theta = np.array([0.5])
        out, accepted, _ = hmc_step(theta, target, 0.01, 5, rng,
                                    divergence_threshold=0.0)
        assert not accepted and out is theta

    def test_stationarity_chi_square_ks(self):
        # draws from the exact MVN posterior stay posterior-distributed after
        # one kernel step (KS against chi2 on the Mahalanobis statistic)
        d, n = 3, 40
        proto = MvnMeanModel(d)
        data = simulate_mvn_data(proto, np.array([0.3, -0.2, 0.8]), n, RngStream(7))
        model = proto.with_data(data)
        mean, cov = mvn_analytic_posterior(model)
        prec = np.linalg.inv(cov)
        chol = np.linalg.cholesky(cov)

        class Posterior:
            def log_density(self, theta):
                return model.log_prior(theta) + model.log_likelihood(theta)

            def grad_log_density(self, theta):
                return model.grad_log_prior(theta) + model.grad_log_likelihood(theta)

        target = Posterior()
        rng = RngStream(8)
        draws = mean + rng.standard_normal((1500, d)) @ chol.T
        for step_fn in (
            lambda t: hmc_step(t, target, 0.01, 10, rng)[0],
            lambda t: mh_step(t, target, 1.0, rng)[0],
        ):
            moved = np.array([step_fn(t) for t in draws])
            stat = np.einsum("ni,ij,nj->n", moved - mean, prec, moved - mean)
            assert kstest(stat, chi2(d).cdf).pvalue > 0.01


class TestDetailedBalance:
    def test_binned_flow_symmetry(self):
        # piecewise-constant 5-bin target on [0,5); under stationarity the
        # i->j and j->i transition counts of a reversible chain must agree
        weights = np.array([1.0, 2.0, 4.0, 2.0, 1.0])
        log_w = np.log(weights)

        class BinnedTarget:
            def log_density(self, theta):
                x = theta[0]
                if x < 0.0 or x >= 5.0:
                    return -np.inf
                return log_w[int(x)]

        target = BinnedTarget()
        rng = RngStream(9)
        pi = weights / weights.sum()
        start_bin = rng.choice(5, p=pi)
        theta = np.array([start_bin + rng.random()])
        curr = target.log_density(theta)
        steps = 1_000_000
        counts = np.zeros((5, 5))
        prev_bin = int(theta[0])
        for _ in range(steps):
            theta, _, curr = mh_step(theta, target, 1.0, rng, base_step=0.8, curr=curr)
            b = int(theta[0])
            counts[prev_bin, b] += 1
            prev_bin = b
        for i in range(5):
            for j in range(i + 1, 5):
                flow = counts[i, j] + counts[j, i]
                if flow == 0:
                    continue
                diff = abs(counts[i, j] - counts[j, i])
                assert diff <= 3.0 * math.sqrt(flow), (i, j, counts[i, j], counts[j, i])
