import io
import math

import numpy as np
import pytest

from gffperc.green import (conditional_law, green_tree, green_zero_average, hitting_profile)
from gffperc.gff import (Field, GaussianReservoir, field_max_abs, sample_exact, sample_exact_many,
                         sample_exact_sparse, sample_sequential, sequential_factor,
                         sequential_prefix, tree_child_std, tree_gff_child, tree_gff_root,
                         tree_root_std)
from gffperc.multigraph import complete_graph, disjoint_union, generate_configuration_model


def connected_graph(n, d, seed):
    rng = np.random.default_rng(seed)
    while True:
        g = generate_configuration_model(n, d, rng)
        if g.is_connected():
            return g


class TestField:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Field(np.array([0.0, np.nan]))

    def test_level_set_and_csv(self):
        f = Field(np.array([0.5, -0.5, 0.0]))
        assert f.level_set(0.0).tolist() == [0, 2]
        buf = io.StringIO()
        f.to_csv(buf)
        assert buf.getvalue().splitlines() == ["vertex,value", "0,0.5", "1,-0.5", "2,0.0"]

    def test_max_abs(self):
        assert field_max_abs(Field(np.zeros(5))) == 0.0
        assert field_max_abs(np.array([1.0, 5.0, -2.0])) == 5.0
        assert field_max_abs(np.array([1.0, -5.0])) == 5.0


class TestReservoir:
    def test_same_seed_same_stream(self):
        a, b = GaussianReservoir(seed=3), GaussianReservoir(seed=3)
        assert [a.take()[1] for _ in range(3000)] == [b.take()[1] for _ in range(3000)]

    def test_random_access_matches_sequential(self):
        r = GaussianReservoir(seed=4)
        seq = [r.take()[1] for _ in range(2500)]
        fresh = GaussianReservoir(seed=4)
        assert fresh[2100] == seq[2100] and fresh[5] == seq[5]

    def test_cursor_and_reset(self):
        r = GaussianReservoir(seed=5)
        assert r.take()[0] == 0 and r.take()[0] == 1
        r.reset()
        assert r.take()[0] == 0

    def test_fixed_values_padded(self):
        r = GaussianReservoir(values=[1.0, 2.0])
        assert [r[i] for i in range(4)] == [1.0, 2.0, 0.0, 0.0]

    def test_exactly_one_source(self):
        with pytest.raises(ValueError):
            GaussianReservoir()
        with pytest.raises(ValueError):
            GaussianReservoir(seed=1, values=[0.0])


class TestExactSampler:
    def test_sum_zero(self):
        g = connected_graph(300, 3, 0)
        f = sample_exact(g, green_zero_average(g), np.random.default_rng(1))
        assert abs(f.values.sum()) <= 1e-8 * g.n

    def test_disconnected_gives_zero_field(self):
        g = disjoint_union(complete_graph(4), complete_graph(4))
        f = sample_exact(g, None, np.random.default_rng(0))
        assert np.all(f.values == 0.0)
        assert np.all(sample_exact_sparse(g, np.random.default_rng(0)).values == 0.0)

    def test_dimension_mismatch(self):
        g = complete_graph(4)
        with pytest.raises(ValueError):
            sample_exact(g, green_zero_average(complete_graph(5)), np.random.default_rng(0))

    def test_k4_variance(self):
        green = green_zero_average(complete_graph(4))
        s = sample_exact_many(green, np.random.default_rng(2), 100_000)
        assert np.all(np.abs(s.var(axis=0) - 9 / 16) <= 0.01)

    @pytest.mark.parametrize("sampler", ["spectral", "sparse"])
    def test_empirical_covariance(self, sampler):
        g = connected_graph(16, 3, 3)
        green = green_zero_average(g).values
        rng = np.random.default_rng(4)
        N = 100_000
        if sampler == "spectral":
            s = sample_exact_many(green_zero_average(g), rng, N)
        else:
            s = sample_exact_sparse(g, rng, size=N)
        assert np.abs(s.sum(axis=1)).max() <= 1e-8 * g.n
        cov = s.T @ s / N
        se = np.sqrt((np.outer(np.diag(green), np.diag(green)) + green ** 2) / N)
        assert np.all(np.abs(cov - green) <= 5 * se)


class TestSequential:
    def test_factor_reproduces_green(self):
        g = connected_graph(256, 3, 5)
        green = green_zero_average(g)
        order = np.random.default_rng(6).permutation(g.n)
        lmat = sequential_factor(g, green, order)
        assert np.abs(lmat @ lmat.T - green.values).max() <= 1e-8

    def test_unit_reservoirs_build_the_factor(self):
        g = connected_graph(20, 3, 7)
        green = green_zero_average(g)
        order = np.random.default_rng(8).permutation(g.n)
        cols = []
        for j in range(g.n):
            unit = np.zeros(g.n)
            unit[j] = 1.0
            cols.append(sample_sequential(g, green, order, GaussianReservoir(values=unit)).values)
        lmat = np.column_stack(cols)
        assert np.abs(lmat @ lmat.T - green.values).max() <= 1e-8
        assert np.allclose(lmat, sequential_factor(g, green, order), atol=1e-10)

    def test_zero_reservoir(self):
        g = connected_graph(20, 3, 9)
        f = sample_sequential(g, green_zero_average(g), range(g.n), GaussianReservoir(values=[]))
        assert np.all(f.values == 0.0)

    def test_single_step_matches_conditional_law(self):
        g = connected_graph(30, 3, 10)
        green = green_zero_average(g)
        order = list(np.random.default_rng(11).permutation(g.n))
        res = GaussianReservoir(seed=12)
        pre = sequential_prefix(g, green, order, res, count=6)
        mean, var = conditional_law(g, green, hitting_profile(g, order[:5]),
                                    {int(v): pre[i] for i, v in enumerate(order[:5])}, order[5])
        assert pre[5] == pytest.approx(mean + res[5] * math.sqrt(var), abs=1e-12)

    def test_order_must_be_permutation(self):
        g = complete_graph(4)
        with pytest.raises(ValueError):
            sample_sequential(g, green_zero_average(g), [0, 1, 1, 2], GaussianReservoir(seed=0))


class TestTreeField:
    def test_child_rule(self):
        assert tree_gff_child(1.7, 0.0, 3) == pytest.approx(0.85, abs=1e-15)
        assert tree_gff_child(2.0, 1.0, 4) == pytest.approx(math.sqrt(4 / 3) + 2 / 3, abs=1e-15)

    def test_root_variance(self):
        rng = np.random.default_rng(13)
        draws = tree_root_std(3) * rng.standard_normal(1_000_000)
        assert draws.var() == pytest.approx(2.0, abs=0.01)
        assert isinstance(tree_gff_root(3, rng), float)

    @pytest.mark.parametrize("d", [3, 4, 6])
    def test_stationarity_fixed_point(self, d):
        v0 = (d - 1) / (d - 2)
        assert d / (d - 1) + v0 / (d - 1) ** 2 == pytest.approx(v0, abs=1e-12)
        assert tree_child_std(d) ** 2 + tree_root_std(d) ** 2 / (d - 1) ** 2 == pytest.approx(v0, abs=1e-12)

    @pytest.mark.parametrize("r", [1, 2, 4])
    def test_covariance_along_a_path(self, r):
        d, N = 3, 400_000
        rng = np.random.default_rng(20 + r)
        root = tree_root_std(d) * rng.standard_normal(N)
        v = root
        for _ in range(r):
            v = tree_gff_child(v, rng.standard_normal(N), d)
        prod = root * v
        assert abs(prod.mean() - green_tree(d, r)) <= 3 * prod.std() / math.sqrt(N) + 1e-12
        assert abs(v.var() - green_tree(d, 0)) <= 0.03

    def test_covariance_between_siblings(self):
        d, N = 3, 400_000
        rng = np.random.default_rng(30)
        root = tree_root_std(d) * rng.standard_normal(N)
        a = tree_gff_child(root, rng.standard_normal(N), d)
        b = tree_gff_child(root, rng.standard_normal(N), d)
        prod = a * b
        assert abs(prod.mean() - green_tree(d, 2)) <= 3 * prod.std() / math.sqrt(N)

    @pytest.mark.parametrize("d", [3, 5])
    def test_monotone_coupling_identity(self, d):
        # shared xi at every vertex of a full tree of height 6
        rng = np.random.default_rng(d)
        a1, a2 = 1.3, -0.4
        phi1, phi2 = np.array([a1]), np.array([a2])
        for height in range(1, 7):
            k = d if height == 1 else d - 1
            xi = rng.standard_normal(phi1.size * k)
            phi1 = tree_gff_child(np.repeat(phi1, k), xi, d)
            phi2 = tree_gff_child(np.repeat(phi2, k), xi, d)
            assert np.abs(phi1 - phi2 - (a1 - a2) * (d - 1) ** (-height)).max() <= 1e-12
