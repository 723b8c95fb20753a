import math

import numpy as np
import pytest

from hashguard.data import Dataset
from hashguard.hashing import (DecisionTree, IdentityTransform,
                               LnhTransform, LshTransform, apply_lnh, apply_lsh,
                               build_lnh, collision_probability, estimate_collision,
                               estimate_distortion, hash_matrices, hash_matrix,
                               leaf_indices, load_transform, prefix, sample_lsh,
                               sample_pairs, store_transform, theorem1_k_bound,
                               train_decision_tree, distortion_values)
from hashguard.records import RecordError


class TestLsh:
    def test_apply_explicit(self):
        t = LshTransform(3, 2, 2, np.array([[0, 2], [1, 1]]))
        out = apply_lsh(t, np.array([1, 0, 1], np.uint8))
        assert np.array_equal(out, [[1, 1], [0, 0]])

    def test_sample_bounds_shape_determinism(self):
        a = sample_lsh(50, 4, 6, seed=1)
        b = sample_lsh(50, 4, 6, seed=1)
        c = sample_lsh(50, 4, 6, seed=2)
        assert a.indices.shape == (6, 4)
        assert a.indices.min() >= 0 and a.indices.max() < 50
        assert np.array_equal(a.indices, b.indices)
        assert not np.array_equal(a.indices, c.indices)

    def test_row_is_projection(self):
        rng = np.random.default_rng(3)
        t = sample_lsh(30, 5, 4, seed=3)
        x = rng.integers(0, 2, 30).astype(np.uint8)
        out = apply_lsh(t, x)
        for i in range(4):
            assert np.array_equal(out[i], x[t.indices[i]])

    def test_length_mismatch(self):
        t = sample_lsh(10, 2, 2, seed=0)
        with pytest.raises(ValueError):
            apply_lsh(t, np.zeros(9, np.uint8))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        t = sample_lsh(20, 3, 5, seed=4)
        X = rng.integers(0, 2, (7, 20)).astype(np.uint8)
        mats = hash_matrices(t, X)
        for i in range(7):
            assert np.array_equal(mats[i], apply_lsh(t, X[i]))


def route_by_hand(tree: DecisionTree, x):
    """Loop oracle: walk the heap explicitly."""
    node = 0
    for _ in range(tree.d - 1):
        bit = x[tree.node_features[node]]
        node = 2 * node + 1 + bit
    return node - (2 ** (tree.d - 1) - 1)


class TestDecisionTree:
    def test_xor_data_pure_leaves(self):
        # XOR of two features needs both levels; all four leaves end up pure
        X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 10, np.uint8)
        y = np.array([0, 1, 1, 0] * 10)
        tree = train_decision_tree(X, y, m=2, d=3)
        leaves = tree.leaf_index(X)
        # majority label per leaf classifies every training row correctly
        acc = 0
        for leaf in np.unique(leaves):
            members = leaves == leaf
            majority = int(y[members].sum() * 2 >= members.sum())
            acc += int((y[members] == majority).sum())
        assert acc == len(y)

    def test_informative_root(self):
        rng = np.random.default_rng(5)
        X = rng.integers(0, 2, (200, 4)).astype(np.uint8)
        y = X[:, 2].astype(np.int64)  # feature 2 decides the label
        tree = train_decision_tree(X, y, m=4, d=2)
        assert tree.node_features[0] == 2

    def test_tie_breaks_to_lowest_feature(self):
        X = np.array([[0, 0, 0], [1, 1, 0], [0, 0, 1], [1, 1, 1]], np.uint8)
        y = np.array([0, 1, 0, 1])  # features 0 and 1 identical and perfect
        tree = train_decision_tree(X, y, m=3, d=2)
        assert tree.node_features[0] == 0

    def test_pure_node_gets_fallback_split(self):
        X = np.array([[0, 1], [1, 0], [0, 0], [1, 1]], np.uint8)
        y = np.zeros(4, np.int64)  # pure labels: no informative split exists
        tree = train_decision_tree(X, y, m=2, d=3)
        assert tree.node_features.shape == (3,)
        # root falls back to feature 0, children to the unused feature 1
        assert tree.node_features[0] == 0
        assert tree.node_features[1] == 1 and tree.node_features[2] == 1

    def test_full_shape_and_leaf_range(self):
        rng = np.random.default_rng(6)
        X = rng.integers(0, 2, (50, 6)).astype(np.uint8)
        y = rng.integers(0, 2, 50)
        tree = train_decision_tree(X, y, m=6, d=4)
        assert tree.node_features.shape == (7,)
        leaves = tree.leaf_index(X)
        assert leaves.min() >= 0 and leaves.max() < 8

    def test_routing_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        X = rng.integers(0, 2, (40, 5)).astype(np.uint8)
        y = rng.integers(0, 2, 40)
        tree = train_decision_tree(X, y, m=5, d=4)
        got = tree.leaf_index(X)
        for i in range(40):
            assert got[i] == route_by_hand(tree, X[i])

    def test_seed_is_accepted_and_ignored(self):
        X = np.array([[0, 1], [1, 0]], np.uint8)
        y = np.array([0, 1])
        a = train_decision_tree(X, y, m=2, d=2, seed=1)
        b = train_decision_tree(X, y, m=2, d=2, seed=99)
        assert np.array_equal(a.node_features, b.node_features)


def toy_dataset(n=40, rows=300, seed=8):
    rng = np.random.default_rng(seed)
    rates0 = rng.uniform(0.1, 0.4, n)
    rates1 = np.clip(rates0 + rng.uniform(-0.3, 0.3, n), 0, 1)
    X0 = (rng.random((rows, n)) < rates0).astype(np.uint8)
    X1 = (rng.random((rows, n)) < rates1).astype(np.uint8)
    return Dataset(np.concatenate([X0, X1]),
                   np.array([0] * rows + [1] * rows))


class TestLnh:
    def test_build_shapes_and_determinism(self):
        ds = toy_dataset()
        t1 = build_lnh(ds, K=3, L=4, m=6, d=3, seed=1)
        t2 = build_lnh(ds, K=3, L=4, m=6, d=3, seed=1)
        t3 = build_lnh(ds, K=3, L=4, m=6, d=3, seed=2)
        assert t1.slots.shape == (4, 3, 6)
        assert t1.node_features.shape == (4, 3, 3)
        assert np.array_equal(t1.slots, t2.slots)
        assert np.array_equal(t1.node_features, t2.node_features)
        assert not np.array_equal(t1.slots, t3.slots)
        assert t1.T == 3 * 4  # K * 2^(d-1)

    def test_default_m_is_ceil_sqrt(self):
        ds = toy_dataset(n=40)
        t = build_lnh(ds, K=2, L=2, d=3, seed=0)
        assert t.m == math.ceil(math.sqrt(40))

    def test_one_hot_blocks(self):
        ds = toy_dataset()
        t = build_lnh(ds, K=3, L=4, m=6, d=3, seed=3)
        m = apply_lnh(t, ds.X[5])
        assert m.shape == (4, 12)
        blocks = m.reshape(4, 3, 4)
        assert (blocks.sum(axis=2) == 1).all()

    def test_vectorized_routing_matches_per_tree(self):
        ds = toy_dataset()
        t = build_lnh(ds, K=3, L=2, m=6, d=3, seed=4)
        X = ds.X[:20]
        leaves = leaf_indices(t, X)
        for i in range(2):
            for j in range(3):
                tree = t.tree(i, j)
                expect = tree.leaf_index(X[:, t.slots[i, j]])
                assert np.array_equal(leaves[:, i, j], expect)

    def test_batch_matches_single(self):
        ds = toy_dataset()
        t = build_lnh(ds, K=2, L=3, m=5, d=3, seed=5)
        mats = hash_matrices(t, ds.X[:10])
        for i in range(10):
            assert np.array_equal(mats[i], apply_lnh(t, ds.X[i]))


class TestIdentity:
    def test_single_row_matrix(self):
        t = IdentityTransform(6)
        x = np.array([1, 0, 0, 1, 1, 0], np.uint8)
        assert np.array_equal(hash_matrix(t, x), x[None, :])
        assert t.L == 1 and t.T == 6
        mats = hash_matrices(t, np.stack([x, 1 - x]))
        assert mats.shape == (2, 1, 6)


class TestPrefix:
    def test_lsh_prefix_is_slice(self):
        t = sample_lsh(30, 8, 3, seed=6)
        p = prefix(t, 3)
        assert p.K == 3 and np.array_equal(p.indices, t.indices[:, :3])
        x = np.random.default_rng(0).integers(0, 2, 30).astype(np.uint8)
        assert np.array_equal(apply_lsh(p, x), apply_lsh(t, x)[:, :3])

    def test_lnh_prefix_keeps_first_trees(self):
        ds = toy_dataset()
        t = build_lnh(ds, K=4, L=2, m=5, d=3, seed=7)
        p = prefix(t, 2)
        full = leaf_indices(t, ds.X[:8])
        part = leaf_indices(p, ds.X[:8])
        assert np.array_equal(part, full[:, :, :2])

    def test_bounds(self):
        t = sample_lsh(10, 4, 2, seed=8)
        with pytest.raises(ValueError):
            prefix(t, 0)
        with pytest.raises(ValueError):
            prefix(t, 5)


def exact_row_collision(t: LshTransform, eps: int) -> float:
    """Hypergeometric oracle: a row survives iff none of its distinct
    coordinates is among the eps flipped ones."""
    n = t.n
    total = 0.0
    for row in t.indices:
        r = len(set(row.tolist()))
        p = 1.0
        for j in range(r):
            p *= (n - eps - j) / (n - j)
        total += p
    return total / t.L


class TestCollisionEstimator:
    def test_eps_zero_is_identity(self):
        t = sample_lsh(50, 4, 6, seed=9)
        stats = estimate_collision(t, eps=0, trials=50, seed=0)
        assert stats.row_collision == 1.0
        assert stats.mean_matching_rows == 6.0
        assert stats.unit_collision == 1.0

    def test_lsh_matches_hypergeometric_oracle(self):
        t = sample_lsh(100, 4, 8, seed=10)
        stats = estimate_collision(t, eps=10, trials=20000, seed=1)
        exact = exact_row_collision(t, 10)
        assert abs(stats.row_collision - exact) <= 4 * stats.row_collision_sem
        # per-bit collision is exactly 1 - eps/n in expectation
        assert abs(stats.unit_collision - 0.9) <= 4 * stats.unit_collision_sem

    def test_matching_rows_is_l_times_row_collision(self):
        t = sample_lsh(60, 3, 5, seed=11)
        stats = estimate_collision(t, eps=6, trials=4000, seed=2)
        assert stats.mean_matching_rows == pytest.approx(5 * stats.row_collision)

    def test_determinism(self):
        t = sample_lsh(60, 3, 5, seed=12)
        a = estimate_collision(t, eps=6, trials=3000, seed=3)
        b = estimate_collision(t, eps=6, trials=3000, seed=3)
        assert a.row_collision == b.row_collision
        assert a.matching_rows_sem == b.matching_rows_sem

    def test_eps_validation(self):
        t = sample_lsh(20, 2, 2, seed=13)
        with pytest.raises(ValueError):
            estimate_collision(t, eps=-1, trials=10, seed=0)
        with pytest.raises(ValueError):
            estimate_collision(t, eps=21, trials=10, seed=0)

    def test_lnh_collision_counts_trees(self):
        ds = toy_dataset()
        t = build_lnh(ds, K=2, L=3, m=5, d=3, seed=14)
        stats = estimate_collision(t, eps=0, trials=40, seed=4)
        assert stats.row_collision == 1.0 and stats.unit_collision == 1.0
        stats = estimate_collision(t, eps=20, trials=2000, seed=5)
        assert 0.0 <= stats.unit_collision <= 1.0
        assert stats.mean_matching_rows <= 3.0


class TestDistortion:
    def test_identity_indices_have_zero_distortion(self):
        n = 24
        t = LshTransform(n, n, 1, np.arange(n)[None, :])
        stats = estimate_distortion(t, pairs=50, seed=6)
        assert stats.mean == 0.0

    def test_values_in_unit_interval_and_paired(self):
        t = sample_lsh(40, 6, 4, seed=15)
        X1, X2 = sample_pairs(40, 30, seed=7)
        vals = distortion_values(t, X1, X2)
        assert vals.shape == (30,)
        assert (vals >= 0).all() and (vals <= 1).all()

    def test_wider_k_distorts_no_more(self):
        # the acceptance-level property at miniature scale
        t2k = sample_lsh(200, 16, 32, seed=16)
        tk = prefix(t2k, 8)
        X1, X2 = sample_pairs(200, 4000, seed=8)
        wide = distortion_values(t2k, X1, X2)
        narrow = distortion_values(tk, X1, X2)
        sem = np.std(wide - narrow, ddof=1) / math.sqrt(len(wide))
        assert wide.mean() <= narrow.mean() + 3 * sem

    def test_lnh_distortion_defined(self):
        ds = toy_dataset()
        t = build_lnh(ds, K=3, L=2, m=5, d=3, seed=17)
        stats = estimate_distortion(t, pairs=200, seed=9)
        assert 0.0 <= stats.mean <= 1.0


class TestKBound:
    def brute_bound(self, theta, L, p1):
        k = 0
        while L * p1 ** (k + 1) >= theta:
            k += 1
        return k

    def test_matches_brute_force(self):
        for theta, L, p1 in [(32, 64, 0.99), (1, 64, 0.5), (10, 100, 0.93),
                             (64, 64, 0.9), (0.5, 8, 0.7)]:
            assert theorem1_k_bound(theta, L, p1) == self.brute_bound(theta, L, p1)

    def test_bound_is_tight(self):
        k = theorem1_k_bound(32, 64, 0.99)
        assert 64 * 0.99 ** k >= 32
        assert 64 * 0.99 ** (k + 1) < 32

    def test_theta_equal_l_gives_zero(self):
        assert theorem1_k_bound(64, 64, 0.99) == 0

    def test_validation(self):
        with pytest.raises(ValueError):
            theorem1_k_bound(0, 64, 0.9)
        with pytest.raises(ValueError):
            theorem1_k_bound(65, 64, 0.9)
        with pytest.raises(ValueError):
            theorem1_k_bound(32, 64, 1.0)


class TestCollisionProbability:
    def test_formulas(self):
        assert collision_probability(10, 100, "lsh") == pytest.approx(0.9)
        assert collision_probability(10, 100, "lnh", m=3) == pytest.approx(0.9 ** 3)

    def test_validation(self):
        with pytest.raises(ValueError):
            collision_probability(10, 100, "nope")
        with pytest.raises(ValueError):
            collision_probability(10, 100, "lnh")
        with pytest.raises(ValueError):
            collision_probability(-1, 100, "lsh")


class TestTransformIO:
    def test_lsh_round_trip(self, tmp_path):
        t = sample_lsh(40, 5, 3, seed=18)
        p = tmp_path / "lsh.jsonl"
        store_transform(t, p)
        back = load_transform(p)
        assert isinstance(back, LshTransform)
        assert np.array_equal(back.indices, t.indices)
        assert (back.n, back.K, back.L) == (40, 5, 3)

    def test_lnh_round_trip(self, tmp_path):
        ds = toy_dataset()
        t = build_lnh(ds, K=2, L=3, m=5, d=3, seed=19)
        p = tmp_path / "lnh.jsonl"
        store_transform(t, p)
        back = load_transform(p)
        assert isinstance(back, LnhTransform)
        assert np.array_equal(back.slots, t.slots)
        assert np.array_equal(back.node_features, t.node_features)
        x = ds.X[0]
        assert np.array_equal(apply_lnh(back, x), apply_lnh(t, x))

    def test_identity_round_trip(self, tmp_path):
        p = tmp_path / "id.jsonl"
        store_transform(IdentityTransform(9), p)
        back = load_transform(p)
        assert isinstance(back, IdentityTransform) and back.n == 9

    def test_unknown_kind(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"kind": "mystery", "n": 4}\n')
        with pytest.raises(RecordError):
            load_transform(p)

    def test_missing_rows(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"kind": "lsh", "n": 4, "K": 2, "L": 2}\n'
                     '{"row": 0, "indices": [1, 2]}\n')
        with pytest.raises(RecordError, match="missing"):
            load_transform(p)
