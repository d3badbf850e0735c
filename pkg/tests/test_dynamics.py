import numpy as np
import pytest

import reviewlab as rl
from reviewlab import seeds
from reviewlab.dynamics import TRACE_HEADER, write_trace_csv
from reviewlab.learners import PosteriorGrid, bayes_update_dynamic, bayes_update_stationary
from reviewlab.lockstep import run_binary_batch

LEARNERS = (
    rl.LearnerSpec("dynamic", "dynamic"),
    rl.LearnerSpec("imperfect", "imperfect"),
    rl.LearnerSpec("estimator", "estimator", 0.2),
)


class TestQualityStep:
    def test_eta_zero_identity(self):
        rng = np.random.default_rng(0)
        sampler = lambda r: np.array([r.random()])
        q = np.array([0.7])
        for _ in range(20):
            assert rl.quality_step(q, 0.0, sampler, rng)[0] == 0.7

    def test_eta_one_always_redraws(self):
        rng = np.random.default_rng(0)
        sampler = lambda r: np.array([1.0 + r.random()])
        vals = {rl.quality_step([0.0], 1.0, sampler, rng)[0] for _ in range(20)}
        assert all(v >= 1.0 for v in vals)

    def test_change_frequency_matches_half_eta(self):
        # binary uniform redraw: value changes happen at rate eta/2
        space = rl.QualitySpace.discrete([0.0, 1.0])
        rng = np.random.default_rng(7)
        sampler = lambda r: space.prior_draw(r.random(1))
        q, changes, n = np.array([0.0]), 0, 10**5
        for _ in range(n):
            q2 = rl.quality_step(q, 0.1, sampler, rng)
            changes += q2[0] != q[0]
            q = q2
        assert abs(changes / n - 0.05) < 0.003


class TestSimulateRun:
    def test_zero_horizon_empty_trace(self, binary_model):
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.01, 0), LEARNERS, 5)
        assert tr.horizon == 0 and rl.purchase_times(tr).size == 0

    def test_same_seed_bit_identical(self, binary_model):
        dyn = rl.DynamicsSpec(0.01, 120)
        a = rl.simulate_run(binary_model, dyn, LEARNERS, 11, validate=False)
        b = rl.simulate_run(binary_model, dyn, LEARNERS, 11, validate=False)
        assert np.array_equal(a.quality, b.quality)
        assert np.array_equal(a.feedback_idx, b.feedback_idx)
        assert np.array_equal(a.post_true["dynamic"], b.post_true["dynamic"])
        assert np.array_equal(a.est_plain, b.est_plain)

    def test_purchase_frequency_at_least_delta_buy(self, binary_model):
        # oracle: the buyer fraction at the lowest quality lower-bounds the
        # per-round purchase probability for monotone rewards
        delta_buy = rl.buyer_fraction(binary_model, binary_model.quality.lo, 50_000)
        T = 10_000
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.0, T), LEARNERS[:1], 3, validate=False)
        freq = tr.purchased.mean()
        se = np.sqrt(freq * (1 - freq) / T)
        assert freq >= delta_buy - 3 * se

    def test_environment_independent_of_learner_set(self, binary_model):
        dyn = rl.DynamicsSpec(0.02, 150)
        only_dynamic = rl.simulate_run(binary_model, dyn, LEARNERS[:1], 17, validate=False)
        all_three = rl.simulate_run(binary_model, dyn, LEARNERS, 17, validate=False)
        assert np.array_equal(only_dynamic.quality, all_three.quality)
        assert np.array_equal(only_dynamic.theta, all_three.theta)
        assert np.array_equal(only_dynamic.feedback_idx, all_three.feedback_idx)

    def test_stationary_learner_equals_dynamic_at_eta_zero(self, binary_model):
        learners = (rl.LearnerSpec("dynamic", "dynamic"), rl.LearnerSpec("stat", "stationary"))
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.0, 200), learners, 23, validate=False)
        assert np.array_equal(tr.post_true["dynamic"], tr.post_true["stat"])

    def test_blocks_partition_horizon(self, binary_model):
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.05, 300), LEARNERS[:1], 29, validate=False)
        blocks = rl.block_decompose(tr.quality)
        assert blocks.starts[0] == 0
        assert blocks.ends[-1] == 300
        assert np.all(blocks.lengths >= 1)
        assert np.array_equal(blocks.starts[1:], blocks.ends[:-1])
        for k in range(blocks.count):
            seg = tr.quality[blocks.starts[k]:blocks.ends[k]]
            assert np.all(seg == seg[0])

    def test_information_comes_from_buyers_only(self, binary_model):
        # Replaying only the purchase rounds (with pure prior mixing standing
        # in for the no-purchase rounds of the change-aware learner) must
        # reproduce the final posteriors.
        dyn = rl.DynamicsSpec(0.03, 250)
        learners = (rl.LearnerSpec("dynamic", "dynamic"), rl.LearnerSpec("imp", "imperfect"))
        tr = rl.simulate_run(binary_model, dyn, learners, 31, validate=False)
        kernel = rl.make_kernel(binary_model)
        space = binary_model.quality
        prior = PosteriorGrid.uniform(space)

        replay_dyn = PosteriorGrid.uniform(space)
        replay_imp = PosteriorGrid.uniform(space)
        for i in range(tr.horizon):
            z = tr.feedback_idx[i]
            if z == 0:
                mixed = (1 - dyn.eta) * replay_dyn.mass + dyn.eta * prior.mass
                replay_dyn = PosteriorGrid.from_mass(space, mixed)
                continue  # imperfect learner: identity step, skipped entirely
            row_dyn = kernel.table_from_summary(replay_dyn.mean())[z]
            replay_dyn = bayes_update_dynamic(replay_dyn, row_dyn, dyn.eta)
            row_imp = kernel.table_from_summary(replay_imp.mean())[z]
            replay_imp = bayes_update_stationary(replay_imp, row_imp)
        assert np.allclose(replay_dyn.mass, tr.final_posteriors["dynamic"].mass, atol=1e-9)
        assert np.allclose(replay_imp.mass, tr.final_posteriors["imp"].mass, atol=1e-9)


class TestPurchaseTimes:
    def test_hand_cases(self, binary_model):
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.0, 0), LEARNERS[:1], 1)
        assert rl.purchase_times(tr).tolist() == []

    def test_matches_filter_scan_oracle(self, binary_model):
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.01, 400), LEARNERS[:1], 37, validate=False)
        oracle = [t for t in range(1, 401) if tr.purchased[t - 1]]
        assert rl.purchase_times(tr).tolist() == oracle
        assert all(tr.feedback_idx[t - 1] > 0 for t in oracle)
        # no-purchase <=> star symbol <=> zero utility
        stars = [t for t in range(1, 401) if tr.feedback_idx[t - 1] == 0]
        assert all(tr.utility[t - 1] == 0.0 for t in stars)


class TestTraceCsv:
    def test_format(self, binary_model, tmp_path):
        tr = rl.simulate_run(binary_model, rl.DynamicsSpec(0.02, 40), LEARNERS, 41, validate=False)
        path = tmp_path / "trace.csv"
        write_trace_csv(tr, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == TRACE_HEADER
        assert len(lines) == 41
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        assert row["t"] == "1"
        assert row["feedback"] == "*" or set(row["feedback"]) <= set("-01;")
        star_rows = [l for l in lines[1:] if l.split(",")[3] == "*"]
        assert all(l.split(",")[2] == "0" for l in star_rows)


class TestLockstepAgreement:
    def test_binary_batch_matches_sequential(self, binary_model):
        dyn = rl.DynamicsSpec(0.02, 80)
        learners = (rl.LearnerSpec("dynamic", "dynamic"), rl.LearnerSpec("imperfect", "imperfect"))
        losses, regrets, imps = [], [], []
        for i in range(3):
            tr = rl.simulate_run(binary_model, dyn, learners, seeds.instance_seed(123, i), validate=False)
            losses.append(rl.loss_LT(tr, "dynamic"))
            regrets.append(rl.regret(tr))
            imps.append(rl.loss_LT(tr, "imperfect"))
        batch = run_binary_batch(binary_model, dyn, 3, 123, include_imperfect=True)
        assert np.allclose(batch.loss, losses, atol=1e-10)
        assert np.allclose(batch.regret, regrets, atol=1e-10)
        assert np.allclose(batch.imperfect_loss, imps, atol=1e-10)

    def test_batch_chunking_invariant(self, binary_model):
        dyn = rl.DynamicsSpec(0.01, 100)
        a = run_binary_batch(binary_model, dyn, 4, 9, chunk_rounds=7)
        b = run_binary_batch(binary_model, dyn, 4, 9, chunk_rounds=4096)
        assert np.array_equal(a.loss, b.loss)
        assert np.array_equal(a.purchases, b.purchases)

    def test_instance_offset_selects_same_streams(self, binary_model):
        dyn = rl.DynamicsSpec(0.01, 60)
        full = run_binary_batch(binary_model, dyn, 4, 77)
        tail = run_binary_batch(binary_model, dyn, 2, 77, instance_offset=2)
        assert np.array_equal(full.loss[2:], tail.loss)
