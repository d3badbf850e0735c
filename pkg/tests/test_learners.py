import numpy as np
import pytest

import reviewlab as rl
from reviewlab import ConfigError
from reviewlab.learners import (
    EstimatorState,
    PosteriorGrid,
    bayes_update_dynamic,
    bayes_update_stationary,
    estimator_observe,
    imperfect_update,
    posterior_mean,
    psi_invert,
)

BINARY = rl.QualitySpace.discrete([0.0, 1.0])


def binary_posterior(p_high: float) -> PosteriorGrid:
    return PosteriorGrid.from_mass(BINARY, [1.0 - p_high, p_high])


class TestBayesStationary:
    def test_point_mass_fixed_point(self):
        post = PosteriorGrid.from_mass(BINARY, [0.0, 1.0])
        out = bayes_update_stationary(post, [0.3, 0.7])
        assert np.allclose(out.mass, [0.0, 1.0])

    def test_constant_row_is_identity(self):
        post = binary_posterior(0.37)
        out = bayes_update_stationary(post, [0.42, 0.42])
        assert np.allclose(out.mass, post.mass, atol=1e-15)

    def test_hand_bayes_two_thirds(self):
        # pi(H)=0.5, G(+1|H)=0.8, G(+1|L)=0.4 -> 0.4/0.6 = 2/3
        post = binary_posterior(0.5)
        out = bayes_update_stationary(post, [0.4, 0.8])
        assert out.mass[1] == pytest.approx(2.0 / 3.0, abs=1e-14)

    def test_rejects_nonpositive_rows(self):
        with pytest.raises(ConfigError):
            bayes_update_stationary(binary_posterior(0.5), [0.0, 0.5])

    def test_monotone_likelihood_increases_true_mass(self, rng):
        for _ in range(50):
            p = rng.uniform(0.05, 0.95)
            g_low, g_high = np.sort(rng.uniform(0.05, 0.95, 2))
            if g_high - g_low < 1e-3:
                continue
            out = bayes_update_stationary(binary_posterior(p), [g_low, g_high])
            assert out.mass[1] > p

    def test_normalization_preserved_under_random_updates(self, rng):
        space = rl.QualitySpace.hypercube([0.0], [1.0], 65)
        post = PosteriorGrid.uniform(space)
        for _ in range(200):
            row = rng.uniform(0.01, 1.0, 65)
            post = bayes_update_stationary(post, row)
            assert abs(post.mass.sum() - 1.0) < 1e-12


class TestBayesDynamic:
    def test_eta_zero_reduces_to_stationary(self):
        post = binary_posterior(0.3)
        row = [0.5, 0.9]
        a = bayes_update_dynamic(post, row, 0.0)
        b = bayes_update_stationary(post, row)
        assert np.array_equal(a.log_mass, b.log_mass)

    def test_no_purchase_is_pure_prior_mixing(self):
        post = PosteriorGrid.from_mass(BINARY, [0.0, 1.0])
        out = bayes_update_dynamic(post, [0.4, 0.4], 0.1)
        assert np.allclose(out.mass, [0.05, 0.95], atol=1e-15)

    def test_hand_mixed_update(self):
        # Bayes to (1/3, 2/3), then 0.9 * that + 0.05
        out = bayes_update_dynamic(binary_posterior(0.5), [0.4, 0.8], 0.1)
        assert np.allclose(out.mass, [0.35, 0.65], atol=1e-14)

    def test_custom_prior_mixing(self):
        prior = PosteriorGrid.from_mass(BINARY, [0.25, 0.75])
        post = binary_posterior(0.5)
        out = bayes_update_dynamic(post, [0.5, 0.5], 0.2, prior)
        assert np.allclose(out.mass, [0.8 * 0.5 + 0.2 * 0.25, 0.8 * 0.5 + 0.2 * 0.75])

    def test_recency_weighted_product_sum_form(self, rng):
        # Explicit form of the change-aware posterior, binary uniform prior:
        # pi_{t+1}(q) = (1-e)^t/2 prod_{s=1..t} R_s(q)
        #             + e/2 sum_{s=0..t-1} (1-e)^s prod_{i=t-s+1..t} R_i(q)
        # with R_s(q) = G(z_s, q) / sum_q' G(z_s, q') pi_s(q').
        eta = 0.15
        tables = rng.uniform(0.1, 0.9, size=(12, 2))
        post = binary_posterior(0.5)
        history = []
        for s in range(12):
            g = tables[s]
            history.append((g, post.mass.copy()))
            post = bayes_update_dynamic(post, g, eta)

        t = len(history)
        for qi in range(2):
            ratios = np.array([g[qi] / np.dot(g, mass) for g, mass in history])
            total = (1 - eta) ** t / 2 * np.prod(ratios)
            for s in range(t):
                total += eta / 2 * (1 - eta) ** s * np.prod(ratios[t - s:])
            assert total == pytest.approx(post.mass[qi], abs=1e-10)

    def test_imperfect_is_stationary_rule(self):
        post = binary_posterior(0.4)
        row = [0.3, 0.6]
        assert np.array_equal(
            imperfect_update(post, row).log_mass,
            bayes_update_stationary(post, row).log_mass,
        )

    def test_log_domain_survives_extreme_concentration(self):
        post = binary_posterior(0.5)
        for _ in range(2000):
            post = bayes_update_stationary(post, [0.2, 0.8])
        assert np.isfinite(post.log_mass).all()
        assert post.log_mass[0] < -2000  # far below float underflow in mass


class TestPosteriorMean:
    def test_point_mass(self):
        assert posterior_mean(PosteriorGrid.from_mass(BINARY, [0, 1]))[0] == 1.0

    def test_uniform_symmetry(self):
        assert posterior_mean(PosteriorGrid.uniform(BINARY))[0] == pytest.approx(0.5)

    def test_hand_mix(self):
        assert posterior_mean(binary_posterior(0.75))[0] == pytest.approx(0.75)


class TestEstimator:
    def make_state(self, eta1=0.2, space=BINARY, n_symbols=3):
        return EstimatorState.fresh(space, n_symbols, eta1)

    def test_empty_state_is_zero(self):
        st = self.make_state()
        assert np.all(st.L_plain == 0) and np.all(st.L_discounted == 0)

    def test_single_observation_discounted_mass(self):
        st = self.make_state(eta1=0.3)
        table = np.full((3, 2), 0.25)
        st = estimator_observe(st, 2, table)
        assert st.L_discounted[2] == pytest.approx(0.3)
        assert st.L_discounted[[0, 1]].sum() == 0.0

    def test_constant_stream_geometric_mass(self):
        eta1, n = 0.2, 17
        st = self.make_state(eta1=eta1)
        table = np.full((3, 2), 0.25)
        for _ in range(n):
            st = estimator_observe(st, 1, table)
        assert st.L_discounted[1] == pytest.approx(1 - (1 - eta1) ** n, abs=1e-12)
        # plain distribution at round t = n+1 sums to n / (n+1)
        assert st.L_plain.sum() == pytest.approx(n / (n + 1))

    def test_psi_schedules(self, rng):
        st = self.make_state(eta1=0.5)
        t1 = rng.uniform(0, 1, (3, 2))
        t2 = rng.uniform(0, 1, (3, 2))
        st = estimator_observe(st, 0, t1)
        st = estimator_observe(st, 1, t2)
        assert np.allclose(st.psi_plain, (t1 + t2) / 2)
        assert np.allclose(st.psi_discounted, 0.25 * t1 + 0.5 * t2)

    def test_invert_zero_residual_fixed_point(self):
        space = rl.QualitySpace.hypercube([0.0], [1.0], 9)
        st = EstimatorState.fresh(space, 3, 0.5)
        psi = np.linspace(0.1, 0.9, 27).reshape(3, 9)
        st.psi_sum = psi.copy()
        st.n_obs = 1
        st.counts = psi[:, 4] * 2  # L_plain = counts / (n+1) = psi column 4
        est = psi_invert(st, "plain")
        assert est.value[0] == pytest.approx(space.points[4, 0])
        assert est.residual == pytest.approx(0.0, abs=1e-18)

    def test_invert_tie_goes_to_lexicographically_smallest(self):
        space = rl.QualitySpace.discrete([0.0, 1.0])
        st = EstimatorState.fresh(space, 2, 0.5)
        st.psi_sum = np.array([[0.4, 0.6], [0.6, 0.4]])
        st.n_obs = 1
        st.counts = np.array([1.0, 1.0])  # L = (0.5, 0.5), equidistant
        assert psi_invert(st, "plain").value[0] == 0.0

    def test_invert_matches_brute_force_scan(self, rng):
        space = rl.QualitySpace.hypercube([0.0], [1.0], 33)
        st = EstimatorState.fresh(space, 4, 0.3)
        st.psi_sum = rng.uniform(0, 1, (4, 33))
        st.n_obs = 1
        st.counts = rng.uniform(0, 2, 4)
        est = psi_invert(st, "plain")
        # independent oracle: plain python scan over every grid point
        best_k, best_d = None, float("inf")
        for k in range(33):
            dist = sum(
                (st.counts[z] / 2 - st.psi_sum[z, k]) ** 2 for z in range(4)
            )
            if dist < best_d - 1e-15:
                best_k, best_d = k, dist
        assert est.value[0] == space.points[best_k, 0]
        assert est.residual == pytest.approx(best_d)

    def test_psi_separation_bounded_below_on_grid(self, binary_model):
        # identifiability surrogate: ||psi(q) - psi(q')|| / |q - q'| > 0
        kernel = rl.make_kernel(binary_model)
        space = rl.QualitySpace.hypercube([0.0], [1.0], 17)
        model = rl.interval_gaussian_model(grid=17)
        k17 = rl.make_kernel(model)
        table = k17.table(0.5)  # (3, 17): one fixed belief snapshot
        pts = space.points[:, 0]
        ratios = []
        for i in range(17):
            for j in range(i + 1, 17):
                num = np.linalg.norm(table[:, i] - table[:, j])
                ratios.append(num / abs(pts[i] - pts[j]))
        assert min(ratios) > 0.01
