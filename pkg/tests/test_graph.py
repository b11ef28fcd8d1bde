"""Entropy-driven edge generation: hand-computed values, exactness of the
degenerate identities, and structural invariants of the adjacency."""

import numpy as np
import pytest

from diffstock import graph
from diffstock.errors import DimensionError
from diffstock.graph import EntropyConfig, build_adjacency, entropy, joint_entropy, signal_energy


class TestSignalEnergy:
    def test_zeros(self):
        assert signal_energy(np.zeros(10)) == 0.0

    def test_hand_value(self):
        assert signal_energy(np.array([1.0, 2.0, -2.0])) == 9.0

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=17)
        for c in (0.5, 3.0, -2.0):
            assert np.isclose(signal_energy(c * x), c * c * signal_energy(x),
                              rtol=1e-12)


class TestEntropy:
    def test_constant_vector_is_zero(self):
        assert entropy(np.full(25, 3.7)) == 0.0

    def test_two_values_equal_proportion(self):
        x = np.array([1.0, 2.0, 1.0, 2.0, 1.0, 2.0])
        assert abs(entropy(x) - np.log(2.0)) < 1e-15

    def test_bounded_by_log_bins(self):
        cfg = EntropyConfig(bins=16)
        for seed in range(50):
            x = np.random.default_rng(seed).normal(size=40)
            assert entropy(x, cfg) <= np.log(16) + 1e-12


class TestJointEntropy:
    def test_identical_signals(self):
        x = np.random.default_rng(1).normal(size=30)
        assert abs(joint_entropy(x, x) - entropy(x)) < 1e-12

    def test_constant_first_argument(self):
        y = np.random.default_rng(2).normal(size=30)
        assert abs(joint_entropy(np.full(30, 5.0), y) - entropy(y)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            joint_entropy(np.zeros(4), np.zeros(5))

    def test_entropy_inequalities(self):
        # max(S_x, S_y) <= S_xy <= S_x + S_y on random vectors
        cfg = EntropyConfig(bins=16)
        for seed in range(200):
            rng = np.random.default_rng(seed)
            x, y = rng.normal(size=(2, 35))
            sx, sy, sxy = entropy(x, cfg), entropy(y, cfg), joint_entropy(x, y, cfg)
            assert max(sx, sy) <= sxy + 1e-12
            assert sxy <= sx + sy + 1e-12


class TestBuildAdjacency:
    def test_constant_signal_edge_exactly_zero(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(4, 24))
        feats[1] = 2.5  # constant, nonzero energy
        adj = build_adjacency(feats)
        assert (adj[1, :] == 0.0).all()
        assert (adj[:, 1] == 0.0).all()

    def test_identical_binary_pair_edge_is_one(self):
        feats = np.array([[1.0, 2.0, 1.0, 2.0], [1.0, 2.0, 1.0, 2.0]])
        adj = build_adjacency(feats)
        assert abs(adj[0, 1] - 1.0) < 1e-12
        assert abs(adj[1, 0] - 1.0) < 1e-12

    def test_factorizing_joint_gives_zero_edge(self):
        # 2-D histogram is exactly the product of the marginals
        x = np.array([1.0, 1.0, 2.0, 2.0])
        y = np.array([1.0, 2.0, 1.0, 2.0])
        adj = build_adjacency(np.vstack([x, y]))
        assert abs(adj[0, 1]) < 1e-12

    def test_nonnegative(self):
        for seed in range(30):
            feats = np.random.default_rng(seed).normal(size=(6, 30))
            assert build_adjacency(feats).min() >= 0.0

    def test_energy_ratio_antisymmetry(self):
        rng = np.random.default_rng(9)
        feats = rng.normal(size=(7, 40))
        adj = build_adjacency(feats)
        energy = (feats ** 2).sum(axis=1)
        for i in range(7):
            for j in range(7):
                if i == j or adj[i, j] == 0.0 or adj[j, i] == 0.0:
                    continue
                lhs = adj[i, j] * energy[j] ** 2
                rhs = adj[j, i] * energy[i] ** 2
                assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs))

    def test_zero_energy_node_zeroed(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(4, 20))
        feats[2] = 0.0
        adj = build_adjacency(feats)
        assert (adj[2, :] == 0.0).all() and (adj[:, 2] == 0.0).all()
        assert np.isfinite(adj).all()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(6, 30))
        perm = rng.permutation(6)
        adj = build_adjacency(feats)
        adj_p = build_adjacency(feats[perm])
        assert np.array_equal(adj_p, adj[np.ix_(perm, perm)])

    def test_diagonal_convention(self):
        feats = np.random.default_rng(6).normal(size=(3, 12))
        assert (np.diag(build_adjacency(feats)) == 0.0).all()
        with_loops = build_adjacency(feats, EntropyConfig(self_loops=True))
        assert (np.diag(with_loops) == 1.0).all()

    def test_needs_two_nodes(self):
        with pytest.raises(DimensionError):
            build_adjacency(np.ones((1, 5)))


class TestRowNormalize:
    def test_rows_sum_to_one(self):
        adj = np.abs(np.random.default_rng(2).normal(size=(5, 5)))
        out = graph.row_normalize(adj)
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12

    def test_dead_row_gets_self_loop(self):
        adj = np.ones((3, 3))
        adj[1, :] = 0.0
        out = graph.row_normalize(adj)
        assert out[1, 1] == 1.0 and out[1, 0] == 0.0


class TestAdjacencyFiles:
    def test_roundtrip_with_header(self, tmp_path):
        adj = np.abs(np.random.default_rng(0).normal(size=(4, 4)))
        tickers = ["AA", "BB", "CC", "DD"]
        path = tmp_path / "adj.csv"
        graph.write_adjacency_csv(adj, tickers, path)
        back = graph.load_adjacency_csv(path, expected_tickers=tickers)
        assert np.array_equal(back, adj)

    def test_identity_file(self, tmp_path):
        path = tmp_path / "eye.csv"
        np.savetxt(path, np.eye(3), delimiter=",")
        adj = graph.load_adjacency_csv(path, expected_tickers=["A", "B", "C"])
        assert np.array_equal(adj, np.eye(3))

    def test_non_square_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        np.savetxt(path, np.ones((3, 2)), delimiter=",")
        with pytest.raises(DimensionError):
            graph.load_adjacency_csv(path)

    def test_wrong_size_rejected(self, tmp_path):
        path = tmp_path / "adj.csv"
        np.savetxt(path, np.eye(3), delimiter=",")
        with pytest.raises(DimensionError):
            graph.load_adjacency_csv(path, expected_tickers=["A", "B"])

    def test_symmetric_file_stays_symmetric(self, tmp_path):
        sym = np.ones((3, 3)) + np.eye(3)
        path = tmp_path / "sym.csv"
        np.savetxt(path, sym, delimiter=",")
        adj = graph.load_adjacency_csv(path)
        assert np.array_equal(adj, adj.T)

    def test_minmax_normalized_in_unit_interval(self):
        adj = np.random.default_rng(1).normal(size=(5, 5)) * 7 + 3
        out = graph.minmax_normalize(adj)
        assert out.min() == 0.0 and out.max() == 1.0
