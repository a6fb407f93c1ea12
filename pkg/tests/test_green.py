import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gffperc.green import (DisconnectedGraphError, GreenColumns, conditional_law,
                           green_distance_profile, green_tree, green_zero_average,
                           heat_semigroup_green, hitting_profile, schur_conditional_law)
from gffperc.multigraph import (complete_graph, disjoint_union, from_edges,
                                generate_configuration_model)


def connected_graph(n, d, seed):
    rng = np.random.default_rng(seed)
    while True:
        g = generate_configuration_model(n, d, rng)
        if g.is_connected():
            return g


class TestGreenTree:
    @pytest.mark.parametrize("d,dist,expected", [(3, 0, 2.0), (3, 1, 1.0), (4, 2, 1 / 6)])
    def test_closed_form(self, d, dist, expected):
        assert green_tree(d, dist) == pytest.approx(expected, rel=1e-15)

    def test_rejects_small_degree(self):
        with pytest.raises(ValueError):
            green_tree(2, 0)


class TestZeroAverage:
    def test_k4_values(self):
        gm = green_zero_average(complete_graph(4)).values
        off = gm[~np.eye(4, dtype=bool)]
        assert np.allclose(np.diag(gm), 9 / 16, atol=1e-10)
        assert np.allclose(off, -3 / 16, atol=1e-10)

    @pytest.mark.parametrize("d", [3, 4, 5])
    def test_complete_graph_closed_form(self, d):
        # on mean-zero vectors of K_{d+1}, P = -I/d, so I - P = (d+1)/d
        n = d + 1
        expected = d / (d + 1) * (np.eye(n) - 1.0 / n)
        assert np.allclose(green_zero_average(complete_graph(n)).values, expected, atol=1e-12)

    @given(st.integers(3, 5), st.integers(4, 40), st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_symmetric_zero_rows_psd(self, d, n, seed):
        if (n * d) % 2:
            n += 1
        g = connected_graph(n, d, seed)
        gm = green_zero_average(g).values
        assert np.allclose(gm, gm.T, atol=1e-12)
        assert np.allclose(gm.sum(axis=1), 0.0, atol=1e-9)
        w = np.linalg.eigvalsh(gm)
        assert w.min() >= -1e-9
        # one-dimensional kernel spanned by constants
        assert np.sum(np.abs(w) < 1e-9) == 1

    def test_resolvent_identity(self):
        g = connected_graph(60, 3, 1)
        gm = green_zero_average(g).values
        lap = np.eye(g.n) - g.transition_matrix().toarray()
        assert np.allclose(lap @ gm, np.eye(g.n) - 1.0 / g.n, atol=1e-10)

    @pytest.mark.parametrize("n,d,seed", [(8, 3, 0), (16, 3, 1), (12, 4, 2)])
    def test_matches_heat_semigroup_integral(self, n, d, seed):
        g = connected_graph(n, d, seed)
        gm = green_zero_average(g).values
        assert np.allclose(heat_semigroup_green(g), gm, atol=1e-8)

    def test_disconnected_rejected(self):
        with pytest.raises(DisconnectedGraphError):
            green_zero_average(disjoint_union(complete_graph(4), complete_graph(4)))

    def test_loops_enter_with_multiplicity(self):
        # vertex 0 has a loop (2/d to itself) and one edge; identity must still hold
        g = from_edges(4, 3, [(0, 0), (0, 1), (1, 2), (1, 3), (2, 3), (2, 3)])
        gm = green_zero_average(g).values
        lap = np.eye(4) - g.transition_matrix().toarray()
        assert lap[0, 0] == pytest.approx(1 - 2 / 3)
        assert np.allclose(lap @ gm, np.eye(4) - 0.25, atol=1e-12)

    def test_columns_match_dense(self):
        g = connected_graph(300, 3, 3)
        gm = green_zero_average(g).values
        cols = GreenColumns(g)
        for y in (0, 17, 299):
            assert np.allclose(cols.row(y), gm[y], atol=1e-10)

    def test_distance_profile_decays(self):
        g = connected_graph(1000, 3, 4)
        prof = green_distance_profile(g, green_zero_average(g), 4)
        assert prof[0] > prof[2] > prof[4]


class TestHittingProfile:
    def test_target_points(self):
        g = connected_graph(30, 3, 5)
        p = hitting_profile(g, [3, 7])
        assert p.hit_expectation[3] == 0 and p.hit_expectation[7] == 0
        assert p.hit_distribution[3].tolist() == [1.0, 0.0]
        assert p.hit_distribution[7].tolist() == [0.0, 1.0]
        assert np.allclose(p.hit_distribution.sum(axis=1), 1.0)

    def test_cycle_hitting_time(self):
        # C6 realized as a 3-regular multigraph: every vertex carries half a loop
        # would be odd, so use the hitting time formula on a cycle with doubled edges
        # (d = 4, two parallel edges per cycle edge gives the simple walk on C6).
        edges = [(i, (i + 1) % 6) for i in range(6)] * 2
        g = from_edges(6, 4, edges)
        p = hitting_profile(g, [0])
        assert p.hit_expectation[3] == pytest.approx(9.0, abs=1e-10)

    def test_whole_vertex_set(self):
        g = complete_graph(5)
        assert hitting_profile(g, range(5)).stationary_expectation == 0.0

    def test_empty_target(self):
        with pytest.raises(ValueError):
            hitting_profile(complete_graph(4), [])

    def test_harmonic_off_target(self):
        g = connected_graph(200, 3, 6)
        a = [0, 5, 9]
        p = hitting_profile(g, a)
        pm = g.transition_matrix()
        off = np.setdiff1d(np.arange(g.n), a)
        resid = (p.hit_distribution - pm @ p.hit_distribution)[off]
        assert np.abs(resid).max() <= 1e-10
        # expected hitting time: m = 1 + P m off A
        m = p.hit_expectation
        assert np.abs((m - 1 - pm @ m)[off]).max() <= 1e-10


def _all_small_connected_multigraphs():
    """A spread of connected multigraphs with n <= 10 (several per (n, d))."""
    out = []
    for n, d in [(2, 3), (4, 3), (6, 3), (8, 3), (10, 3), (3, 4), (5, 4), (6, 5), (10, 4)]:
        rng = np.random.default_rng(100 * n + d)
        found = 0
        for _ in range(200):
            g = generate_configuration_model(n, d, rng)
            if g.is_connected():
                out.append(g)
                found += 1
                if found == 3:
                    break
    out.append(complete_graph(4))
    out.append(from_edges(4, 3, [(0, 0), (0, 1), (1, 2), (1, 3), (2, 3), (2, 3)]))
    return out


class TestConditionalLaw:
    def test_exhaustive_schur_agreement(self):
        # every proper nonempty A and every y outside it, on each small graph
        checked = 0
        for g in _all_small_connected_multigraphs():
            green = green_zero_average(g)
            rng = np.random.default_rng(g.n)
            psi = rng.standard_normal(g.n)
            psi -= psi.mean()
            for k in range(1, g.n):
                for a in itertools.combinations(range(g.n), k):
                    prof = hitting_profile(g, a)
                    vals = psi[list(a)]
                    for y in range(g.n):
                        if y in a:
                            continue
                        m1, v1 = conditional_law(g, green, prof, vals, y)
                        m2, v2 = schur_conditional_law(green, a, vals, y)
                        assert m1 == pytest.approx(m2, abs=1e-8)
                        assert v1 == pytest.approx(v2, abs=1e-8)
                        checked += 1
        assert checked > 10_000

    def test_zero_values_zero_mean(self):
        g = connected_graph(40, 3, 7)
        green = green_zero_average(g)
        prof = hitting_profile(g, [1, 2, 3])
        mean, var = conditional_law(g, green, prof, [0.0, 0.0, 0.0], 10)
        assert mean == 0.0 and var > 0

    def test_y_in_target_rejected(self):
        g = complete_graph(4)
        prof = hitting_profile(g, [0])
        with pytest.raises(ValueError):
            conditional_law(g, green_zero_average(g), prof, [1.0], 0)

    def test_dict_values(self):
        g = connected_graph(20, 3, 8)
        green = green_zero_average(g)
        prof = hitting_profile(g, [4, 2])
        a = conditional_law(g, green, prof, {2: 0.3, 4: -1.0}, 7)
        b = conditional_law(g, green, prof, [0.3, -1.0], 7)
        assert a == b

    def test_variance_nonincreasing_in_nested_sets(self):
        g = connected_graph(60, 3, 9)
        green = green_zero_average(g)
        rng = np.random.default_rng(0)
        order = rng.permutation(g.n)
        y = int(order[-1])
        prev = green.values[y, y]
        for k in range(1, 40):
            a = order[:k]
            _, v = conditional_law(g, green, hitting_profile(g, a), np.zeros(k), y)
            assert v <= prev + 1e-10
            prev = v

    def test_columns_give_same_law(self):
        g = connected_graph(200, 3, 10)
        dense = green_zero_average(g)
        cols = GreenColumns(g)
        prof = hitting_profile(g, [0, 1])
        assert conditional_law(g, cols, prof, [0.5, 1.0], 9) == \
            pytest.approx(conditional_law(g, dense, prof, [0.5, 1.0], 9), abs=1e-10)

    def test_tree_like_vertex_law(self):
        # at a vertex with a large tree-like ball the one-step law is close to the tree's
        g = connected_graph(2000, 3, 11)
        from gffperc.multigraph import vertex_tree_radii

        radii = vertex_tree_radii(g, 8)
        x = int(np.argmax(radii))
        r = int(radii[x])
        assert r >= 5
        green = green_zero_average(g)
        y = int(g.neighbor_table()[x][0])
        mean, var = conditional_law(g, green, hitting_profile(g, [x]), [1.0], y)
        assert abs(mean - 0.5) <= 10 * 2.0 ** -r
        assert abs(var - 1.5) <= 10 * 2.0 ** -r
        assert abs(green.values[x, y] - 1.0) <= 5 * 2.0 ** -r
