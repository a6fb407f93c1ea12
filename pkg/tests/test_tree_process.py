import math

import numpy as np
import pytest

from gffperc.gff import GaussianReservoir
from gffperc.levelset import tree_code_from_parents
from gffperc.tree_process import (Status, conditioned_ball_distribution,
                                  estimate_core_kernel_probs, estimate_eta, estimate_h_star,
                                  TailCurve, estimate_lambda, expected_one_sided_generation,
                                  finite_cluster_tail, labelled_cluster, simulate_block,
                                  simulate_cluster, tree_label_offset)


class TestSimulation:
    def test_infinite_threshold_dies_at_root(self):
        s = simulate_cluster(3, math.inf, rng=np.random.default_rng(0))
        assert s.status is Status.DIED and s.died_at == 0 and s.size == 0

    def test_root_below_threshold_is_empty(self):
        s = simulate_cluster(3, 1.0, root_value=0.5, rng=np.random.default_rng(0))
        assert s.generation_sizes == [0] and not s.survived

    def test_very_low_threshold_survives(self):
        res = simulate_block(3, -10.0, 2000, np.random.default_rng(1), max_generation=8)
        assert np.mean(res.status != 0) >= 0.99

    def test_generation_growth_bounded_by_branching(self):
        for d in (3, 4):
            res = simulate_block(d, -0.5, 500, np.random.default_rng(d), max_generation=10)
            sz = res.sizes
            assert np.all(sz[:, 1] <= d * sz[:, 0])
            assert np.all(sz[:, 2:] <= (d - 1) * sz[:, 1:-1])

    def test_reproducible(self):
        a = simulate_cluster(3, 0.0, rng=np.random.default_rng(5), keep_values=True)
        b = simulate_cluster(3, 0.0, rng=np.random.default_rng(5), keep_values=True)
        assert a.generation_sizes == b.generation_sizes
        assert all(np.array_equal(x, y) for x, y in zip(a.field_values, b.field_values))

    def test_kept_values_respect_threshold(self):
        s = simulate_cluster(3, 0.3, root_value=2.0, rng=np.random.default_rng(6),
                             keep_values=True, max_generation=8)
        for vals in s.field_values:
            assert np.all(vals >= 0.3)

    def test_kept_parents_give_valid_code(self):
        s = simulate_cluster(3, 0.0, root_value=3.0, rng=np.random.default_rng(7),
                             keep_values=True, max_generation=3)
        sizes = s.generation_sizes
        offs = np.cumsum([0] + sizes)
        parents = [-1]
        for k in range(1, len(sizes)):
            parents += (s.parents[k] + offs[k - 1]).tolist()
        code = tree_code_from_parents(parents)
        assert code.count("(") == s.size


class TestLabelledCoupling:
    def test_offsets_count_tree_vertices(self):
        d = 3
        sizes = [1] + [d * (d - 1) ** (k - 1) for k in range(1, 6)]
        assert [tree_label_offset(d, k) for k in range(6)] == np.cumsum([0] + sizes[:-1]).tolist()

    @pytest.mark.parametrize("seed", range(5))
    def test_clusters_nested_in_threshold(self, seed):
        res = GaussianReservoir(seed=seed)
        hs = [1.0, 0.5, 0.0, -0.5]
        clusters = [labelled_cluster(3, h, res, 7, root_value=1.5) for h in hs]
        for hi, lo in zip(clusters, clusters[1:]):
            for k, gen in enumerate(hi):
                assert set(gen) <= set(lo[k])
                for lab, v in gen.items():
                    assert lo[k][lab] == v


class TestEstimators:
    def test_eta_vanishes_for_high_threshold(self):
        assert estimate_eta(3, 8.0, K=20, replicas=5000, seed=0).point_estimate <= 1e-3

    def test_eta_monotone(self):
        vals = [estimate_eta(3, h, K=30, replicas=8000, seed=1).point_estimate
                for h in (-1.0, 0.0, 0.5)]
        assert vals[0] > vals[1] > vals[2]

    def test_eta_record(self):
        rec = estimate_eta(3, 0.0, K=10, replicas=100, seed=3).as_record()
        assert set(rec) >= {"d", "h", "K", "replicas", "estimate", "std_error", "seed"}

    def test_lambda_range_and_monotone(self):
        lam0 = estimate_lambda(3, 0.0, K=14, replicas=800, seed=2).estimate
        lam1 = estimate_lambda(3, 0.5, K=14, replicas=800, seed=2).estimate
        assert 1.0 < lam1 < lam0 < 2.0

    def test_lambda_full_tree(self):
        lam = estimate_lambda(3, -6.0, K=12, replicas=200, seed=4).estimate
        assert lam == pytest.approx(2.0, rel=0.02)

    def test_h_star_interval(self):
        iv = estimate_h_star(3, tol=0.25, K=30, replicas=3000, seed=5)
        assert 0.0 < iv.lower < iv.upper <= iv.lower + 0.25 + 1e-12

    def test_finite_tail(self):
        curve = finite_cluster_tail(3, 0.0, [1, 2, 5, 10, 20, 40], replicas=20_000, seed=6)
        assert np.all(np.diff(curve.tail) <= 0)
        slope, _, _ = curve.log_tail_fit()
        assert slope < 0

    def test_core_kernel_ordering(self):
        est = estimate_core_kernel_probs(3, 0.0, K=30, replicas=5000, seed=7)
        assert 0 < est.k2 <= est.k1 <= est.eta

    def test_ball_distribution(self):
        bd = conditioned_ball_distribution(3, 0.0, k=2, K=20, replicas=4000, seed=8)
        assert sum(bd.probabilities.values()) == pytest.approx(1.0, abs=1e-12)
        # surviving clusters can never be a lone root
        assert bd.probabilities.get("()", 0.0) == 0.0
        assert all(c.startswith("(") for c in bd.probabilities)

    def test_estimators_reproducible(self):
        a = estimate_eta(3, 0.2, K=20, replicas=3000, seed=9)
        b = estimate_eta(3, 0.2, K=20, replicas=3000, seed=9)
        assert a == b

    def test_one_sided_mean_exceeds_one_in_supercritical_phase(self):
        mean, se = expected_one_sided_generation(3, 0.0, 8, replicas=20_000, seed=10)
        assert mean - 3 * se > 1.0

    def test_weighted_tail_fit_exact_on_geometric_tail(self):
        sizes = np.arange(1, 30)
        curve = TailCurve(sizes, 0.5 * np.exp(-0.3 * sizes), 10**6, 10**6)
        for weighted in (True, False):
            slope, intercept, r2 = curve.log_tail_fit(weighted)
            assert slope == pytest.approx(-0.3, abs=1e-10)
            assert intercept == pytest.approx(math.log(0.5), abs=1e-9)
            assert r2 == pytest.approx(1.0, abs=1e-12)
