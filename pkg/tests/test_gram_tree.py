import math

import numpy as np
import pytest

from private_lasso_bandit.dp_core import WishartParams
from private_lasso_bandit.gram_tree import (
    HorizonExceeded,
    NoisyGramTree,
    extract_regression,
    read_prefix_dump,
)
from private_lasso_bandit.sparse_regression import restricted_l2_fit


def zero_noise_params(dim):
    return WishartParams(dim=dim, scale=0.0, k=dim, eps_node=math.inf, delta_node=1e-4)


def noisy_params(dim, scale=0.1, k=None):
    return WishartParams(
        dim=dim, scale=scale, k=k or dim + 1, eps_node=0.1, delta_node=1e-4
    )


def random_stream(rng, t, d):
    xs = rng.standard_normal((t, d))
    rs = rng.standard_normal(t)
    return xs, rs


class TestStructure:
    def test_single_insert_root_sum(self):
        tree = NoisyGramTree(8, 4, zero_noise_params(4))
        x = np.array([1.0, -2.0, 0.5])
        tree.insert(x, 0.7)
        b = np.append(x, 0.7)
        assert np.array_equal(tree.node_partial_sum(1), np.outer(b, b))
        assert np.array_equal(tree.exact_prefix(1), np.outer(b, b))

    def test_trace_matches_scalar_accumulator(self):
        rng = np.random.default_rng(0)
        tree = NoisyGramTree(64, 6, zero_noise_params(6))
        xs, rs = random_stream(rng, 37, 5)
        acc = 0.0
        for x, r in zip(xs, rs):
            tree.insert(x, r)
            acc += x @ x + r * r
        assert np.trace(tree.exact_prefix(37)) == pytest.approx(acc, rel=1e-12)

    def test_orthonormal_inserts_eigenvalues(self):
        d = 4
        tree = NoisyGramTree(8, d + 1, zero_noise_params(d + 1))
        for i in range(d):
            tree.insert(np.eye(d)[i], 0.0)
        eigs = np.sort(np.linalg.eigvalsh(tree.exact_prefix(d)))
        assert np.allclose(eigs, [0.0] + [1.0] * d, atol=1e-12)

    def test_covering_nodes_count_and_intervals(self):
        tree = NoisyGramTree(16, 3, zero_noise_params(3))
        for pos in range(1, 17):
            path = tree.covering_nodes(pos)
            assert len(path) == tree.depth + 1
            for v in path:
                start, end = tree.node_interval(v)
                assert start <= pos <= end

    def test_node_partial_sums_reflect_covered_rounds(self):
        rng = np.random.default_rng(1)
        tree = NoisyGramTree(8, 3, zero_noise_params(3))
        xs, rs = random_stream(rng, 8, 2)
        outers = []
        for x, r in zip(xs, rs):
            tree.insert(x, r)
            b = np.append(x, r)
            outers.append(np.outer(b, b))
        for v in range(1, 16):
            start, end = tree.node_interval(v)
            expected = sum(outers[start - 1 : end], np.zeros((3, 3)))
            assert np.allclose(tree.node_partial_sum(v), expected, atol=1e-12)
            assert tree.node_finalized(v)

    def test_horizon_exceeded(self):
        tree = NoisyGramTree(2, 2, zero_noise_params(2))
        tree.insert(np.array([1.0]), 0.0)
        tree.insert(np.array([1.0]), 0.0)
        with pytest.raises(HorizonExceeded):
            tree.insert(np.array([1.0]), 0.0)

    def test_padding_to_power_of_two(self):
        tree = NoisyGramTree(100, 2, zero_noise_params(2))
        assert tree.t_pad == 128
        assert tree.depth == 7


class TestQueries:
    def test_zero_noise_bitwise_equality(self):
        rng = np.random.default_rng(2)
        tree = NoisyGramTree(64, 4, zero_noise_params(4))
        acc = np.zeros((4, 4))
        xs, rs = random_stream(rng, 64, 3)
        for t, (x, r) in enumerate(zip(xs, rs), start=1):
            tree.insert(x, r)
            b = np.append(x, r)
            acc += np.outer(b, b)
            assert np.array_equal(tree.query_prefix(t), acc)

    def test_dyadic_alignment_single_node(self):
        tree = NoisyGramTree(1024, 2, zero_noise_params(2))
        for m in range(11):
            assert len(tree.prefix_nodes(2**m)) == 1

    def test_t5_decomposition_and_noise_identity(self):
        rng = np.random.default_rng(3)
        tree = NoisyGramTree(8, 3, noisy_params(3))
        acc = np.zeros((3, 3))
        xs, rs = random_stream(rng, 5, 2)
        for x, r in zip(xs, rs):
            tree.insert(x, r)
            b = np.append(x, r)
            acc += np.outer(b, b)
        nodes = tree.prefix_nodes(5)
        assert [tree.node_interval(v) for v in nodes] == [(1, 4), (5, 5)]
        noisy = tree.query_prefix(5)
        expected_noise = tree.node_noise(nodes[0]) + tree.node_noise(nodes[1])
        assert np.allclose(noisy - acc, expected_noise, atol=1e-9)

    def test_repeated_queries_deterministic(self):
        rng = np.random.default_rng(4)
        tree = NoisyGramTree(32, 3, noisy_params(3))
        xs, rs = random_stream(rng, 20, 2)
        for x, r in zip(xs, rs):
            tree.insert(x, r)
        first = tree.query_prefix(17)
        again = tree.query_prefix(17)
        assert np.array_equal(first, again)

    def test_node_count_bound(self):
        tree = NoisyGramTree(256, 2, zero_noise_params(2))
        bound = math.ceil(math.log2(256)) + 1
        for t in range(1, 257):
            assert len(tree.prefix_nodes(t)) <= bound

    def test_noise_sampled_once_and_bounded(self):
        rng = np.random.default_rng(5)
        T = 128
        tree = NoisyGramTree(T, 3, noisy_params(3))
        xs, rs = random_stream(rng, T, 2)
        for t, (x, r) in enumerate(zip(xs, rs), start=1):
            tree.insert(x, r)
            tree.query_prefix(t)
            tree.query_prefix(t)
        assert tree.noise_nodes_sampled <= 2 * T - 1

    def test_psd_preservation(self):
        rng = np.random.default_rng(6)
        tree = NoisyGramTree(64, 4, noisy_params(4, scale=0.5))
        xs, rs = random_stream(rng, 64, 3)
        for t, (x, r) in enumerate(zip(xs, rs), start=1):
            tree.insert(x, r)
            g = tree.query_prefix(t)
            assert np.linalg.eigvalsh(g).min() >= -1e-10 * np.trace(g)

    def test_out_of_range_query(self):
        tree = NoisyGramTree(8, 2, zero_noise_params(2))
        tree.insert(np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            tree.query_prefix(0)
        with pytest.raises(ValueError):
            tree.query_prefix(2)

    def test_query_noise_is_difference(self):
        rng = np.random.default_rng(7)
        tree = NoisyGramTree(16, 3, noisy_params(3))
        xs, rs = random_stream(rng, 10, 2)
        for x, r in zip(xs, rs):
            tree.insert(x, r)
        diff = tree.query_prefix(10) - tree.exact_prefix(10)
        assert np.allclose(tree.query_noise(10), diff, atol=1e-9)

    def test_noise_independent_of_query_order(self):
        rng = np.random.default_rng(8)
        xs, rs = random_stream(rng, 12, 2)
        trees = []
        for order in ([5, 12, 3], [3, 5, 12]):
            tree = NoisyGramTree(16, 3, noisy_params(3), seed=77)
            for x, r in zip(xs, rs):
                tree.insert(x, r)
            results = {t: tree.query_prefix(t) for t in order}
            trees.append(results)
        for t in (3, 5, 12):
            assert np.array_equal(trees[0][t], trees[1][t])


class TestDump:
    def test_roundtrip_and_layout(self, tmp_path):
        rng = np.random.default_rng(9)
        tree = NoisyGramTree(8, 3, noisy_params(3))
        xs, rs = random_stream(rng, 6, 2)
        for x, r in zip(xs, rs):
            tree.insert(x, r)
        path = tmp_path / "prefix.bin"
        tree.dump_prefix(path, 5)
        exact, noisy, t, count = read_prefix_dump(path)
        assert t == 5 and count == 6
        assert np.array_equal(exact, tree.exact_prefix(5))
        assert np.array_equal(noisy, tree.query_prefix(5))
        # layout: magic, three LE uint64, then row-major LE float64 blocks
        raw = path.read_bytes()
        assert raw[:8] == b"GRAMPFX1"
        dim = int.from_bytes(raw[8:16], "little")
        assert dim == 3
        first_entry = np.frombuffer(raw[32:40], dtype="<f8")[0]
        assert first_entry == exact[0, 0]


class TestExtractRegression:
    def test_full_support_block(self):
        rng = np.random.default_rng(10)
        G = rng.standard_normal((6, 6))
        G = G + G.T
        restricted = extract_regression(G, list(range(5)), count=4)
        assert np.array_equal(restricted.V, G[:5, :5])
        assert np.array_equal(restricted.u, G[:5, 5])
        assert restricted.count == 4
        assert restricted.dim == 5

    def test_single_insert_rank_one(self):
        tree = NoisyGramTree(4, 4, zero_noise_params(4))
        x = np.array([0.5, -1.0, 2.0])
        tree.insert(x, 0.3)
        restricted = extract_regression(tree.query_prefix(1), [0, 2], count=1)
        assert np.allclose(restricted.u, 0.3 * x[[0, 2]], atol=1e-14)

    def test_zero_noise_regression_matches_direct_least_squares(self):
        rng = np.random.default_rng(11)
        d, t = 10, 50
        tree = NoisyGramTree(64, d + 1, zero_noise_params(d + 1))
        Z = rng.standard_normal((t, d))
        y = rng.standard_normal(t)
        for x, r in zip(Z, y):
            tree.insert(x, r)
        S = [1, 4, 7]
        restricted = extract_regression(tree.query_prefix(t), S, count=t)
        theta = restricted_l2_fit(restricted, c_theta=1e9, ridge=1e-12)
        direct, *_ = np.linalg.lstsq(Z[:, S], y, rcond=None)
        assert np.allclose(theta[S], direct, atol=1e-8)

    def test_empty_support_rejected(self):
        with pytest.raises(ValueError):
            extract_regression(np.eye(4), [])

    def test_out_of_range_support_rejected(self):
        with pytest.raises(ValueError):
            extract_regression(np.eye(4), [3])  # joint dim 4 -> d = 3
