import math

import numpy as np
import pytest

import reviewlab as rl
from reviewlab import ConfigError
from reviewlab.lockstep import run_binary_batch
from reviewlab.metrics import Blocks, mean_se


def synthetic_trace(model, quality, theta, purchased, post_mean, post_true=None, eta=0.0):
    """Assemble a Trace directly from per-round columns (d=1)."""
    T = len(quality)
    quality = np.asarray(quality, dtype=float)[:, None]
    theta = np.asarray(theta, dtype=float)[:, None]
    purchased = np.asarray(purchased, dtype=bool)
    r = model.reward.value(quality, theta)
    utility = np.where(purchased, r, 0.0)
    post_mean = np.asarray(post_mean, dtype=float)[:, None]
    post_true = np.zeros(T) if post_true is None else np.asarray(post_true, dtype=float)
    return rl.Trace(
        model=model,
        dynamics=rl.DynamicsSpec(eta, T),
        seed=0,
        config_digest="synthetic",
        deciding="dynamic",
        learner_kinds={"dynamic": "dynamic"},
        quality=quality,
        theta=theta,
        purchased=purchased,
        feedback_idx=purchased.astype(np.int32),
        utility=utility,
        post_true={"dynamic": post_true},
        post_mean={"dynamic": post_mean},
    )


class TestLoss:
    def test_point_mass_posterior_zero_loss(self, binary_model):
        tr = synthetic_trace(binary_model, [1] * 10, [0] * 10, [1] * 10, [1] * 10)
        assert rl.loss_LT(tr, "dynamic") == 0.0

    def test_constant_half_posterior(self, binary_model):
        tr = synthetic_trace(binary_model, [1] * 10, [0] * 10, [1] * 10, [0.5] * 10)
        assert rl.loss_LT(tr, "dynamic") == pytest.approx(5.0)

    def test_matches_per_round_recomputation(self, binary_model):
        tr = rl.simulate_run(
            binary_model, rl.DynamicsSpec(0.02, 300),
            (rl.LearnerSpec("dynamic", "dynamic"),), 3, validate=False,
        )
        oracle = sum(
            abs(tr.post_mean["dynamic"][i, 0] - tr.quality[i, 0]) for i in range(300)
        )
        assert rl.loss_LT(tr, "dynamic") == pytest.approx(oracle, rel=1e-12)

    def test_imperfect_loss_uses_true_mass(self, binary_model):
        tr = synthetic_trace(binary_model, [1] * 4, [0] * 4, [1] * 4, [1] * 4,
                             post_true=[0.25, 0.5, 0.75, 1.0])
        tr.learner_kinds["dynamic"] = "imperfect"
        assert rl.loss_LT(tr, "dynamic") == pytest.approx(0.75 + 0.5 + 0.25 + 0.0)


class TestRegret:
    def test_omniscient_decisions_zero_regret(self, binary_model):
        # buy exactly when r > 0
        theta = [-2.0, 0.2, -0.6, 1.0]
        quality = [1.0, 1.0, 0.0, 0.0]
        r = [q + t - 0.5 for q, t in zip(quality, theta)]
        purchased = [v > 0 for v in r]
        tr = synthetic_trace(binary_model, quality, theta, purchased, [0.5] * 4)
        assert rl.regret(tr) == pytest.approx(0.0)

    def test_one_round_hand_cases(self, binary_model):
        # r = 0.3: buying gives zero regret, passing costs 0.3
        bought = synthetic_trace(binary_model, [0.5], [0.3], [1], [0.5])
        passed = synthetic_trace(binary_model, [0.5], [0.3], [0], [0.5])
        assert rl.regret(bought) == pytest.approx(0.0)
        assert rl.regret(passed) == pytest.approx(0.3)

    def test_lemma1_domination_small_batch(self, binary_model):
        batch = run_binary_batch(binary_model, rl.DynamicsSpec(5e-3, 800), 60, 2222)
        diff = batch.regret - batch.loss
        m, se = mean_se(diff)
        assert m <= 2 * se


class TestBlocks:
    def test_constant_path_single_block(self):
        b = rl.block_decompose(np.zeros(7))
        assert b.count == 1 and b.lengths.tolist() == [7]

    def test_hand_case(self):
        b = rl.block_decompose(np.array([1.0, 1.0, 0.0, 0.0]))
        assert b.starts.tolist() == [0, 2]
        assert b.ends.tolist() == [2, 4]

    def test_mean_block_length_matches_half_eta_rate(self):
        # independent path construction; redraw hits the same value half the
        # time, so value changes arrive at rate eta/2 and blocks average 2/eta
        rng = np.random.default_rng(99)
        T, eta = 10**5, 0.01
        change = rng.random(T) < eta
        change[0] = True
        vals = rng.integers(0, 2, T)
        idx = np.maximum.accumulate(np.where(change, np.arange(T), 0))
        path = vals[idx]
        lengths = rl.block_decompose(path).lengths
        assert abs(lengths.mean() - 200.0) < 15.0

    def test_idempotent_tiling(self, rng):
        path = rng.integers(0, 2, 500)
        b = rl.block_decompose(path)
        assert b.lengths.sum() == 500
        rebuilt = np.concatenate([[path[s]] * l for s, l in zip(b.starts, b.lengths)])
        assert np.array_equal(rebuilt, path)


class TestTau:
    def test_immediate_crossing(self):
        blocks = Blocks(starts=np.array([0]), ends=np.array([5]))
        taus = rl.tau_times(np.array([0.6, 0.7, 0.7, 0.8, 0.9]), blocks)
        assert taus.tolist() == [1]

    def test_never_crossing_falls_back_to_block_end(self):
        blocks = Blocks(starts=np.array([0]), ends=np.array([5]))
        taus = rl.tau_times(np.full(5, 0.3), blocks)
        assert taus.tolist() == [5]

    def test_crossing_at_round_seven(self):
        pi = np.array([0.1] * 6 + [0.7] + [0.9] * 3)
        blocks = Blocks(starts=np.array([0]), ends=np.array([10]))
        assert rl.tau_times(pi, blocks).tolist() == [7]


class TestDeltaGamma:
    def test_rejects_equal_qualities(self, binary_model):
        with pytest.raises(ConfigError):
            rl.delta_gamma(binary_model, [0.0], [0.0])

    def test_constant_toy_tables(self, binary_model):
        # G(+1|H)=0.8, G(+1|L)=0.4, no-purchase mass 0:
        # delta = |0.8-0.4| + |0.2-0.6| = 0.8, gamma = 2 ln 3, c = 1 + 3
        class FakeKernel:
            def table(self, mean):
                return np.array([[0.0, 0.0], [0.6, 0.2], [0.4, 0.8]])

        stats = rl.delta_gamma(binary_model, [0.0], [1.0], kernel=FakeKernel())
        assert stats.delta == pytest.approx(0.8)
        assert stats.gamma == pytest.approx(2 * math.log(3))
        assert stats.c == pytest.approx(4.0)

    def test_matches_finer_grid_oracle(self, binary_model):
        coarse = rl.delta_gamma(binary_model, [0.0], [1.0], resolution=101)
        fine = rl.delta_gamma(binary_model, [0.0], [1.0], resolution=1001)
        assert coarse.delta == pytest.approx(fine.delta, rel=0.01)
        assert coarse.gamma == pytest.approx(fine.gamma, rel=0.01)


class TestBoundCurves:
    def make_stats(self, delta, gamma):
        return rl.SeparationStats(delta, gamma, 1.0, delta, gamma, 0)

    def test_at_zero_equals_two(self):
        assert rl.stationary_bound_curve(self.make_stats(0.5, 2.0), 0) == 2.0

    def test_hand_value(self):
        assert rl.stationary_bound_curve(self.make_stats(1.0, 1.0), 6) == pytest.approx(2 / math.e)

    def test_monotone_nonincreasing(self):
        curve = rl.stationary_bound_curve(self.make_stats(0.3, 3.0), np.arange(100))
        assert np.all(np.diff(curve) <= 0)

    def test_bridge_bound_limits(self):
        assert rl.bridge_bound(4, 0.0, 1.0, 1.0, 1.0, 10**9) == pytest.approx(1.0)
        assert rl.bridge_bound(10**6, 0.0, 1.0, 1.0, 1.0, 10) < -100.0

    def test_bridge_bound_geometric_closed_form(self):
        # a = 10 * 1 * 1 / (4 * 1) = 2.5
        val = rl.bridge_bound(2, 0.0, 1.0, 1.0, 1.0, 10)
        a = 2.5
        expected = 1 - 4 * math.exp(-a) / (1 - math.exp(-a))
        assert val == pytest.approx(expected, abs=1e-12)


class TestAntiConcentration:
    def test_rejects_coincident_pairs(self, binary_model):
        psi = lambda pts: np.zeros((len(pts), 3))
        pairs = np.zeros((1, 2, 1))
        with pytest.raises(ConfigError):
            rl.anti_concentration_ratio(pairs, psi)

    def test_one_dimensional_reduction_positive(self, classic_model):
        means = np.array([[0.5], [0.8]])
        psi = rl.make_psi_bar_mc(classic_model, means, n_draws=20_000, seed=3)
        rng = np.random.default_rng(8)
        pts = rng.uniform(0, 1, (40, 2, 1))
        pts = pts[np.abs(pts[:, 0, 0] - pts[:, 1, 0]) > 0.1]
        min_ratio, lam = rl.anti_concentration_ratio(pts, psi)
        assert min_ratio > 0
        assert lam == pytest.approx(1 / min_ratio)


class TestAudits:
    def test_posterior_wrong_mass_below_bound_curve(self, binary_model):
        # concentration audit at small scale: mean pi_t(wrong) <= curve + 3 SE
        n, T = 200, 120
        batch = run_binary_batch(binary_model, rl.DynamicsSpec(0.0, T), n, 17, record_wrong=True)
        stats = rl.delta_gamma(binary_model, [0.0], [1.0])
        mean = batch.wrong_sum / n
        se = np.sqrt(np.maximum(batch.wrong_sumsq / n - mean**2, 0) / (n - 1))
        curve = rl.stationary_bound_curve(stats, np.arange(1, T + 1))
        assert np.all(mean <= curve + 3 * se)

    def test_metrics_report_bundle(self, binary_model):
        learners = (rl.LearnerSpec("dynamic", "dynamic"), rl.LearnerSpec("imp", "imperfect"))
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.02, 200), learners, 5, validate=False)
        rep = rl.build_metrics_report(tr, lipschitz_k=1.0)
        assert rep.loss_LT == pytest.approx(rep.loss_per_round.sum())
        assert np.all(rep.loss_per_round >= 0)
        assert rep.lemma1_check == pytest.approx(rep.loss_LT)
        assert rep.imperfect_loss == pytest.approx(rl.loss_LT(tr, "imp"))
        assert rep.blocks.lengths.sum() == 200
        assert np.all(rep.taus >= rep.blocks.starts + 1)
        assert np.all(rep.taus <= rep.blocks.ends)


def test_mean_se_matches_numpy(rng):
    vals = rng.normal(3.0, 2.0, 400)
    m, se = mean_se(vals)
    assert m == pytest.approx(vals.mean(), rel=1e-12)
    assert se == pytest.approx(vals.std(ddof=1) / math.sqrt(400), rel=1e-12)
