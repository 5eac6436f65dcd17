import numpy as np
import pytest

from subtemper import (
    ChainConfig,
    EnsembleState,
    KernelConfig,
    Ladder,
    MvnMeanModel,
    RngStream,
    TemperedTarget,
    diagnostic_report,
    make_geometric_ladder,
    mvn_analytic_posterior,
    run_chain,
    swap_log_ratio,
    tempered_targets,
)
from subtemper.core import Dataset, draw_nested_subsamples, subsample_sizes
from subtemper.tempering import (
    ChainRunError,
    ChainTrace,
    _ensemble_iteration,
    stt_iteration,
    tt_iteration,
)

HMC = KernelConfig(kind="hmc", hmc_eps=0.05, hmc_steps=10)
MH = KernelConfig(kind="mh", mh_base_step=0.2)


def _chain_streams(seed, chain=0):
    return RngStream(seed).substream(10, chain)


@pytest.fixture(scope="module")
def model():
    proto = MvnMeanModel(2, sigma0=1.0)
    data = np.array  # noqa: F841 - keep numpy import obvious
    from subtemper import simulate_mvn_data

    ds = simulate_mvn_data(proto, np.array([0.6, -0.4]), 64, RngStream(7).substream(1))
    return proto.with_data(ds)


class TestTemperedTarget:
    def test_classical_density_is_weighted(self, model):
        theta = np.array([0.1, 0.2])
        tgt = TemperedTarget(model, beta=0.5)
        expected = 0.5 * model.log_likelihood(theta) + model.log_prior(theta)
        assert tgt.log_density(theta) == pytest.approx(expected, rel=1e-14)

    def test_subsampled_density_has_unit_weight(self, model):
        theta = np.array([0.1, 0.2])
        idx = np.arange(16)
        tgt = TemperedTarget(model, beta=0.25, subset=idx, subsampled=True)
        expected = model.log_likelihood(theta, idx) + model.log_prior(theta)
        assert tgt.log_density(theta) == pytest.approx(expected, rel=1e-14)

    def test_targets_from_family(self, model):
        ladder = make_geometric_ladder(2, 0.25)
        sizes = subsample_sizes(ladder, model.n_obs)
        family = draw_nested_subsamples(model.data, sizes, RngStream(3))
        targets = tempered_targets(model, ladder, family)
        assert targets[0].subset is None  # level 0 always sees full data
        assert [len(t.subset) for t in targets[1:]] == list(sizes[1:])


class TestSwapLogRatio:
    def test_identical_points(self, model):
        a = TemperedTarget(model, 1.0)
        b = TemperedTarget(model, 0.5)
        theta = np.array([0.3, -0.2])
        assert swap_log_ratio(a, b, theta, theta) == 0.0

    def test_identical_targets(self, model):
        a = TemperedTarget(model, 0.5)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x, z = rng.standard_normal(2), rng.standard_normal(2)
            assert swap_log_ratio(a, a, x, z) == pytest.approx(0.0, abs=1e-9)

    def test_hand_oracle_one_dimensional(self):
        # independent scalar evaluation of the two-level swap ratio
        data = Dataset(X=np.array([[1.0], [3.0]]))
        model = MvnMeanModel(1, data=data)
        a = TemperedTarget(model, 1.0)
        b = TemperedTarget(model, 0.5)
        ta, tb = np.array([0.2]), np.array([1.4])

        def log_h(beta, theta):
            ll = sum(-0.5 * np.log(2 * np.pi) - 0.5 * (x - theta) ** 2 for x in (1.0, 3.0))
            prior = -0.5 * np.log(2 * np.pi) - 0.5 * theta**2
            return beta * ll + prior

        expected = (log_h(1.0, tb[0]) + log_h(0.5, ta[0])
                    - log_h(1.0, ta[0]) - log_h(0.5, tb[0]))
        assert swap_log_ratio(a, b, ta, tb) == pytest.approx(float(expected), rel=1e-12)

    def test_symmetry(self, model):
        a = TemperedTarget(model, 1.0)
        b = TemperedTarget(model, 0.25)
        rng = np.random.default_rng(1)
        for _ in range(10):
            x, z = rng.standard_normal(2), rng.standard_normal(2)
            assert swap_log_ratio(a, b, x, z) == pytest.approx(
                swap_log_ratio(b, a, z, x), rel=1e-12)

    def test_non_finite_cross_evaluation(self, model):
        class Hole:
            param_dim = 2

            def log_likelihood(self, theta, subset=None):
                return -np.inf if theta[0] > 1 else -1.0

            def log_prior(self, theta):
                return 0.0

        a = TemperedTarget(Hole(), 1.0)
        b = TemperedTarget(Hole(), 0.5)
        ratio = swap_log_ratio(a, b, np.array([0.0, 0.0]), np.array([2.0, 0.0]))
        assert ratio == -np.inf


class TestEnsembleIterations:
    def test_single_level_matches_plain_chain_bitwise(self, model):
        ladder = Ladder(np.array([1.0]))
        cfg = ChainConfig(ladder=ladder, kernel=HMC, n_samples=50,
                          theta0=np.zeros(2))
        plain = run_chain("none", model, cfg, _chain_streams(3))
        as_pt = run_chain("pt", model, cfg, _chain_streams(3))
        np.testing.assert_array_equal(plain.samples, as_pt.samples)
        np.testing.assert_array_equal(plain.accepted, as_pt.accepted)

    def test_unit_ladder_accepts_every_swap(self, model):
        ladder = make_geometric_ladder(3, 1.0)
        for method in ("pt", "spt"):
            cfg = ChainConfig(ladder=ladder, kernel=MH, n_samples=40, theta0=np.zeros(2))
            trace = run_chain(method, model, cfg, _chain_streams(4))
            np.testing.assert_array_equal(trace.swap_accepts, trace.swap_attempts)
            assert trace.swap_attempts.sum() == 3 * 40

    def test_unit_ladder_accepts_every_trajectory(self, model):
        ladder = make_geometric_ladder(3, 1.0)
        for method in ("tt", "stt"):
            cfg = ChainConfig(ladder=ladder, kernel=MH, n_samples=40, theta0=np.zeros(2))
            trace = run_chain(method, model, cfg, _chain_streams(5))
            assert trace.trajectory_accepts == trace.trajectory_attempts == 40

    def test_cache_consistency_audit(self, model):
        ladder = make_geometric_ladder(4, 0.25)
        sizes = subsample_sizes(ladder, model.n_obs)
        family = draw_nested_subsamples(model.data, sizes, RngStream(6))
        targets = tempered_targets(model, ladder, family)
        state = EnsembleState.initialize(np.zeros(2), targets)
        rng = _chain_streams(8)
        level_rngs = [rng.substream(0, m) for m in range(len(targets))]
        swap_rng = rng.substream(1)
        for _ in range(50):
            _ensemble_iteration(state, targets, MH, level_rngs, swap_rng)
        assert state.audit(targets) < 1e-10

    def test_swap_bookkeeping_matches_fresh_ratio(self, model):
        # the incremental swap arithmetic must agree with swap_log_ratio
        ladder = make_geometric_ladder(2, 0.25)
        targets = tempered_targets(model, ladder)
        state = EnsembleState.initialize(np.array([0.4, -0.1]), targets)
        state.thetas[1] = np.array([1.0, 0.3])
        state.log_lik[1] = targets[1].log_likelihood(state.thetas[1])
        state.log_prior[1] = model.log_prior(state.thetas[1])
        fast = (targets[0].beta - targets[1].beta) * (state.log_lik[1] - state.log_lik[0])
        fresh = swap_log_ratio(targets[0], targets[1], state.thetas[0], state.thetas[1])
        assert fast == pytest.approx(fresh, abs=1e-10)


class TestTrajectoryOracle:
    def test_accumulator_matches_hand_formula(self):
        # M=1 trajectory with injected deterministic transitions; the log
        # accumulator must equal the two-term swap-style product evaluated
        # by independent scalar arithmetic
        data = Dataset(X=np.array([[0.5], [2.5], [-1.0]]))
        model = MvnMeanModel(1, data=data)
        ladder = Ladder(np.array([1.0, 0.5]))
        targets = tempered_targets(model, ladder)
        up_point = np.array([0.9])
        down_point = np.array([-0.3])
        moves = iter([up_point, down_point])

        def scripted_transition(theta, target, kconf, rng, curr):
            nxt = next(moves)
            return nxt, True, target.log_density(nxt)

        rng = _chain_streams(9)
        level_rngs = [rng.substream(0, m) for m in range(2)]
        theta0 = np.array([0.2])
        _, _, _, trajectory = tt_iteration(
            theta0, targets, MH, level_rngs, rng.substream(1),
            transition=scripted_transition)

        def log_h(beta, theta):
            ll = model.log_likelihood(theta)
            return beta * ll + model.log_prior(theta)

        expected = (log_h(0.5, theta0) - log_h(1.0, theta0)
                    + log_h(1.0, down_point) - log_h(0.5, down_point))
        assert trajectory.log_sum == pytest.approx(float(expected), rel=1e-12)
        np.testing.assert_array_equal(trajectory.down[1], up_point)  # top shared

    def test_trajectory_state_shares_top_sample(self, model):
        ladder = make_geometric_ladder(3, 0.25)
        targets = tempered_targets(model, ladder)
        rng = _chain_streams(10)
        level_rngs = [rng.substream(0, m) for m in range(4)]
        _, _, _, trajectory = tt_iteration(np.zeros(2), targets, MH, level_rngs,
                                           rng.substream(1))
        assert trajectory.down[3] is trajectory.up[3]
        assert len(trajectory.up) == len(trajectory.down) == 4


class TestSttStructure:
    def test_nesting_holds_every_iteration(self, model):
        ladder = make_geometric_ladder(4, 0.125)
        sizes = subsample_sizes(ladder, model.n_obs)
        rng = _chain_streams(11)
        level_rngs = [rng.substream(0, m) for m in range(len(ladder))]
        accept_rng = rng.substream(1)
        sub_rng = rng.substream(2)
        theta = np.zeros(2)
        parts = None
        for _ in range(100):
            theta, _, parts, _, family = stt_iteration(
                theta, model, ladder, model.data, MH, level_rngs, accept_rng,
                sub_rng, sizes=sizes, curr_parts=parts, audit=True)
            np.testing.assert_array_equal(family.sizes, sizes)

    def test_fresh_subsets_each_iteration(self, model):
        ladder = make_geometric_ladder(2, 0.25)
        rng = _chain_streams(12)
        level_rngs = [rng.substream(0, m) for m in range(3)]
        accept_rng = rng.substream(1)
        sub_rng = rng.substream(2)
        _, _, _, _, fam1 = stt_iteration(np.zeros(2), model, ladder, model.data,
                                         MH, level_rngs, accept_rng, sub_rng)
        _, _, _, _, fam2 = stt_iteration(np.zeros(2), model, ladder, model.data,
                                         MH, level_rngs, accept_rng, sub_rng)
        assert not np.array_equal(fam1.index_sets[2], fam2.index_sets[2])


class TestRunChain:
    def test_bit_identical_given_seed(self, model):
        ladder = make_geometric_ladder(3, 0.25)
        for method in ("none", "pt", "tt", "spt", "stt"):
            cfg = ChainConfig(ladder=ladder, kernel=HMC, n_samples=30, theta0=np.zeros(2))
            a = run_chain(method, model, cfg, _chain_streams(13))
            b = run_chain(method, model, cfg, _chain_streams(13))
            np.testing.assert_array_equal(a.samples, b.samples)
            np.testing.assert_array_equal(a.accepted, b.accepted)

    def test_zero_samples_touch_no_model(self, model):
        calls = []

        class Spy:
            param_dim = model.param_dim
            data = model.data
            n_obs = model.n_obs

            def __getattr__(self, name):
                calls.append(name)
                return getattr(model, name)

        cfg = ChainConfig(ladder=make_geometric_ladder(2, 0.5), kernel=MH,
                          n_samples=0, theta0=np.zeros(2))
        trace = run_chain("pt", Spy(), cfg, _chain_streams(14))
        assert trace.n_samples == 0
        assert calls == []

    def test_unknown_method_rejected(self, model):
        cfg = ChainConfig(ladder=make_geometric_ladder(2, 0.5), kernel=MH,
                          n_samples=1, theta0=np.zeros(2))
        with pytest.raises(ValueError, match="unknown method"):
            run_chain("annealing", model, cfg, _chain_streams(15))

    def test_errors_carry_iteration_index(self):
        class Bomb:
            param_dim = 1
            n_obs = 4
            data = Dataset(X=np.zeros((4, 1)))

            def __init__(self):
                self.calls = 0

            def log_likelihood(self, theta, subset=None):
                self.calls += 1
                if self.calls > 30:
                    raise FloatingPointError("boom")
                return -0.5 * float(theta @ theta)

            def grad_log_likelihood(self, theta, subset=None):
                return -np.asarray(theta)

            def log_prior(self, theta):
                return 0.0

            def grad_log_prior(self, theta):
                return np.zeros(1)

        cfg = ChainConfig(ladder=Ladder(np.array([1.0])), kernel=MH,
                          n_samples=100, theta0=np.zeros(1), chain_id=2)
        with pytest.raises(ChainRunError) as err:
            run_chain("none", Bomb(), cfg, _chain_streams(16))
        assert err.value.chain_id == 2
        assert err.value.iteration > 0

    def test_trace_csv_round_trip(self, model, tmp_path):
        cfg = ChainConfig(ladder=make_geometric_ladder(2, 0.5), kernel=MH,
                          n_samples=25, theta0=np.zeros(2), chain_id=1)
        trace = run_chain("spt", model, cfg, _chain_streams(17))
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "iter,chain,wall_time_s,accepted,theta_0,theta_1"
        loaded = ChainTrace.from_csv(path, method="spt")
        np.testing.assert_array_equal(loaded.samples, trace.samples)
        np.testing.assert_array_equal(loaded.accepted, trace.accepted)
        np.testing.assert_array_equal(loaded.wall_time, trace.wall_time)
        assert loaded.chain_id == 1


class TestPosteriorExactness:
    """Every scheduler must reproduce the conjugate MVN posterior."""

    @pytest.mark.parametrize("method", ["none", "pt", "tt", "spt", "stt"])
    def test_marginal_matches_analytic_posterior(self, model, method):
        mean, cov = mvn_analytic_posterior(model)
        sd = np.sqrt(np.diag(cov))
        ladder = make_geometric_ladder(6, 0.125)
        n_samples = 1500
        traces = []
        for c in range(3):
            theta0 = np.full(2, [0.5, 1.0, 2.0][c])
            cfg = ChainConfig(ladder=ladder, kernel=HMC, n_samples=n_samples,
                              theta0=theta0, chain_id=c)
            traces.append(run_chain(method, model, cfg, _chain_streams(18, c)))
        report = diagnostic_report(traces)
        pooled = np.concatenate([t.samples[n_samples // 2:] for t in traces])
        err = np.abs(pooled.mean(axis=0) - mean)
        bound = 4.0 * sd / np.sqrt([d["ess"] for d in report.per_dim])
        assert np.all(err < bound), (method, err, bound)
        frob = np.linalg.norm(np.cov(pooled.T) - cov) / np.linalg.norm(cov)
        assert frob < 0.2, (method, frob)
        assert report.median_r_hat < 1.1
