"""Locality-preserving hash transforms over the Hamming cube.

Two families map an n-bit vector to an (L, T) binary hash matrix whose rows
are independent draws of a K-fold concatenated hash:

  * bit-sampling LSH: each of the L rows samples K coordinates (with
    replacement); T = K and row r of the matrix is x restricted to those
    coordinates. A single coordinate collides under an eps-flip perturbation
    with probability 1 - eps/n.
  * neighborhood-preserving tree hashing (LNH): each row holds K unpruned
    binary decision trees of height d, each trained on m sampled coordinates
    (with replacement) against the class labels. A tree hashes x to the
    one-hot identity of the leaf x reaches, so T = K * 2^(d-1).

The module also ships Monte-Carlo estimators for the two locality guarantees:
expected matching rows under perturbation (row collision ~ P1^K, matching
rows ~ L * P1^K) and the distortion of normalized Hamming distance, plus the
largest K that keeps L * P1^K above a floor Theta.

Hash matrices are plain numpy uint8 arrays; the transform objects are cheap
dataclasses that serialize to line-delimited JSON.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, as_bits
from .records import RecordError, read_records, write_records

_GAIN_TOL = 1e-12


# ---------------------------------------------------------------------------
# bit-sampling LSH
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LshTransform:
    n: int
    K: int
    L: int
    indices: np.ndarray  # (L, K) coordinates in [0, n)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.shape != (self.L, self.K):
            raise ValueError("indices must be (L, K)")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n):
            raise ValueError("sampled coordinate out of range")

    @property
    def T(self) -> int:
        return self.K


def sample_lsh(n: int, K: int, L: int, seed: int) -> LshTransform:
    if n <= 0 or K <= 0 or L <= 0:
        raise ValueError("n, K, L must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 12]))
    return LshTransform(n, K, L, rng.integers(0, n, size=(L, K)))


def apply_lsh(t: LshTransform, x) -> np.ndarray:
    x = as_bits(x)
    if x.size != t.n:
        raise ValueError(f"expected length {t.n}, got {x.size}")
    return x[t.indices]


# ---------------------------------------------------------------------------
# decision trees (full binary, greedy Gini)
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DecisionTree:
    """Complete binary tree of height d over m-bit inputs.

    Internal nodes are heap-ordered (root 0, children 2i+1 / 2i+2) across the
    d-1 split levels; node_features[i] is the input coordinate tested at node
    i (go left on 0, right on 1). Leaves are numbered 0..2^(d-1)-1 left to
    right. The tree is always structurally full: even pure nodes receive a
    fallback split so every input routes through d-1 tests.
    """

    m: int
    d: int
    node_features: np.ndarray  # (2^(d-1) - 1,)

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.int64)
        if self.d < 2:
            raise ValueError("height d must be at least 2")
        if self.node_features.shape != (2 ** (self.d - 1) - 1,):
            raise ValueError("node_features must cover the full internal heap")
        if self.node_features.size and (
            self.node_features.min() < 0 or self.node_features.max() >= self.m
        ):
            raise ValueError("node feature out of range")

    @property
    def leaves(self) -> int:
        return 2 ** (self.d - 1)

    def leaf_index(self, X) -> np.ndarray:
        """Route (N, m) rows (or one m-vector) to leaf numbers."""
        X = np.atleast_2d(np.asarray(X))
        if X.shape[1] != self.m:
            raise ValueError(f"expected {self.m} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], np.int64)
        for _ in range(self.d - 1):
            bits = X[np.arange(X.shape[0]), self.node_features[node]]
            node = 2 * node + 1 + bits
        return node - (2 ** (self.d - 1) - 1)


def _gini_gains(X: np.ndarray, y: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Gini impurity decrease for splitting idx on each of the m features."""
    m = X.shape[1]
    if idx.size == 0:
        return np.zeros(m)
    Xs = X[idx]
    ys = y[idx]
    total = idx.size
    pos = int(ys.sum())
    # per-feature: right branch is x=1
    right_size = Xs.sum(axis=0, dtype=np.int64)
    right_pos = Xs.T.astype(np.int64) @ ys
    left_size = total - right_size
    left_pos = pos - right_pos

    def half(size, k):
        out = np.zeros(m)
        nz = size > 0
        out[nz] = 2.0 * k[nz] * (size[nz] - k[nz]) / size[nz]
        return out

    parent = 2.0 * pos * (total - pos) / total
    children = half(left_size, left_pos) + half(right_size, right_pos)
    return (parent - children) / total


def train_decision_tree(X, y, m: int, d: int, seed: int | None = None) -> DecisionTree:
    """Greedy Gini induction of a full tree; ties break to the lowest feature.

    A node with no informative split (pure, empty, or constant features)
    still gets a split: the lowest-index feature not already tested on the
    path from the root, so the tree keeps its complete shape. The seed is
    accepted for interface uniformity but unused; induction is deterministic.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[1] != m:
        raise ValueError(f"expected {m} features, got {X.shape[1]}")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must match rows")
    internal = 2 ** (d - 1) - 1
    node_features = np.zeros(internal, np.int64)
    # frontier holds (node_id, row indices, features used on path)
    frontier = [(0, np.arange(X.shape[0]), ())]
    while frontier:
        node_id, idx, path = frontier.pop()
        if node_id >= internal:
            continue
        gains = _gini_gains(X, y, idx)
        feat = int(np.argmax(gains))
        if gains[feat] <= _GAIN_TOL:
            unused = [f for f in range(m) if f not in path]
            feat = unused[0] if unused else 0
        node_features[node_id] = feat
        bits = X[idx, feat]
        frontier.append((2 * node_id + 1, idx[bits == 0], path + (feat,)))
        frontier.append((2 * node_id + 2, idx[bits == 1], path + (feat,)))
    return DecisionTree(m, d, node_features)


# ---------------------------------------------------------------------------
# tree-hash transform
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LnhTransform:
    n: int
    K: int
    L: int
    m: int
    d: int
    slots: np.ndarray          # (L, K, m) sampled coordinates per tree
    node_features: np.ndarray  # (L, K, 2^(d-1)-1) local slot tested per node
    _node_global: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)
        self.node_features = np.asarray(self.node_features, dtype=np.int64)
        internal = 2 ** (self.d - 1) - 1
        if self.slots.shape != (self.L, self.K, self.m):
            raise ValueError("slots must be (L, K, m)")
        if self.node_features.shape != (self.L, self.K, internal):
            raise ValueError("node_features must be (L, K, internal)")
        if self.slots.size and (self.slots.min() < 0 or self.slots.max() >= self.n):
            raise ValueError("slot coordinate out of range")
        # precompute the global coordinate tested at each heap node
        self._node_global = np.take_along_axis(self.slots, self.node_features, axis=2)

    @property
    def leaves(self) -> int:
        return 2 ** (self.d - 1)

    @property
    def T(self) -> int:
        return self.K * self.leaves

    def tree(self, i: int, j: int) -> DecisionTree:
        return DecisionTree(self.m, self.d, self.node_features[i, j])


def build_lnh(ds: Dataset, K: int, L: int, m: int | None = None, d: int = 4,
              seed: int = 0) -> LnhTransform:
    """Train the L*K trees on a labeled dataset.

    Tree (i, j) gets its own substream of the seed, samples m coordinates
    with replacement, and is grown on the projected bits against the labels.
    m defaults to ceil(sqrt(n)).
    """
    n = ds.n
    if m is None:
        m = math.ceil(math.sqrt(n))
    if K <= 0 or L <= 0 or m <= 0:
        raise ValueError("K, L, m must be positive")
    internal = 2 ** (d - 1) - 1
    slots = np.zeros((L, K, m), np.int64)
    nodes = np.zeros((L, K, internal), np.int64)
    for i in range(L):
        for j in range(K):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 13, i, j]))
            sl = rng.integers(0, n, size=m)
            tree = train_decision_tree(ds.X[:, sl], ds.y, m, d)
            slots[i, j] = sl
            nodes[i, j] = tree.node_features
    return LnhTransform(n, K, L, m, d, slots, nodes)


def leaf_indices(t: LnhTransform, X, chunk: int = 2048) -> np.ndarray:
    """Leaf reached in every tree: (N, L, K) int16."""
    X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
    if X.shape[1] != t.n:
        raise ValueError(f"expected {t.n} features, got {X.shape[1]}")
    lk = t.L * t.K
    flat_nodes = t._node_global.reshape(lk, -1)
    tree_ids = np.arange(lk)
    out = np.empty((X.shape[0], lk), np.int16)
    for start in range(0, X.shape[0], chunk):
        Xc = X[start:start + chunk]
        rows = np.arange(Xc.shape[0])[:, None]
        node = np.zeros((Xc.shape[0], lk), np.int64)
        for _ in range(t.d - 1):
            feats = flat_nodes[tree_ids, node]
            bits = Xc[rows, feats]
            node = 2 * node + 1 + bits
        out[start:start + chunk] = node - (2 ** (t.d - 1) - 1)
    return out.reshape(X.shape[0], t.L, t.K)


def onehot_leaves(leaves: np.ndarray, width: int) -> np.ndarray:
    """(N, L, K) leaf ids -> (N, L, K*width) one-hot uint8 blocks."""
    eye = np.eye(width, dtype=np.uint8)
    N, L, K = leaves.shape
    return eye[leaves].reshape(N, L, K * width)


def apply_lnh(t: LnhTransform, x) -> np.ndarray:
    x = as_bits(x)
    return onehot_leaves(leaf_indices(t, x[None, :]), t.leaves)[0]


# ---------------------------------------------------------------------------
# identity transform (plain feature vector as a 1-row matrix)
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class IdentityTransform:
    n: int

    @property
    def K(self) -> int:
        return self.n

    @property
    def L(self) -> int:
        return 1

    @property
    def T(self) -> int:
        return self.n


def hash_matrix(t, x) -> np.ndarray:
    """Apply any transform to one vector: returns (L, T) uint8."""
    if isinstance(t, LshTransform):
        return apply_lsh(t, x)
    if isinstance(t, LnhTransform):
        return apply_lnh(t, x)
    if isinstance(t, IdentityTransform):
        x = as_bits(x)
        if x.size != t.n:
            raise ValueError(f"expected length {t.n}, got {x.size}")
        return x[None, :].copy()
    raise TypeError(f"not a transform: {type(t).__name__}")


def hash_matrices(t, X) -> np.ndarray:
    """Batched transform application: (N, n) -> (N, L, T) uint8."""
    X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
    if X.shape[1] != t.n:
        raise ValueError(f"expected {t.n} features, got {X.shape[1]}")
    if isinstance(t, LshTransform):
        return X[:, t.indices]
    if isinstance(t, LnhTransform):
        return onehot_leaves(leaf_indices(t, X), t.leaves)
    if isinstance(t, IdentityTransform):
        return X[:, None, :].copy()
    raise TypeError(f"not a transform: {type(t).__name__}")


def prefix(t, K_new: int):
    """Restrict a transform to its first K_new hash functions per row.

    Because function (i, j) is sampled independently of K, the prefix of a
    width-2K transform is distributed exactly like a width-K transform, which
    makes paired distortion comparisons possible on common inputs.
    """
    if K_new <= 0 or K_new > t.K:
        raise ValueError("K_new must be in [1, K]")
    if isinstance(t, LshTransform):
        return LshTransform(t.n, K_new, t.L, t.indices[:, :K_new])
    if isinstance(t, LnhTransform):
        return LnhTransform(t.n, K_new, t.L, t.m, t.d,
                            t.slots[:, :K_new], t.node_features[:, :K_new])
    raise TypeError(f"prefix not defined for {type(t).__name__}")


# ---------------------------------------------------------------------------
# Monte-Carlo estimators and the row-count bound
# ---------------------------------------------------------------------------

@dataclass
class CollisionStats:
    eps: int
    trials: int
    row_collision: float        # P(whole row of K functions agrees)
    row_collision_sem: float
    mean_matching_rows: float   # E[# rows of L that agree]
    matching_rows_sem: float
    unit_collision: float       # per bit (LSH) / per tree (LNH)
    unit_collision_sem: float


def _random_flip(X: np.ndarray, eps: int, rng: np.random.Generator) -> np.ndarray:
    """Flip exactly eps distinct coordinates per row."""
    if eps == 0:
        return X.copy()
    c, n = X.shape
    r = rng.random((c, n))
    flip_idx = np.argpartition(r, eps - 1, axis=1)[:, :eps]
    Xp = X.copy()
    Xp[np.arange(c)[:, None], flip_idx] ^= 1
    return Xp


def estimate_collision(t, eps: int, trials: int, seed: int,
                       chunk: int = 2048) -> CollisionStats:
    """Sample uniform x, flip eps distinct coordinates, compare hash rows."""
    if not 0 <= eps <= t.n:
        raise ValueError("eps must be in [0, n]")
    if trials <= 1:
        raise ValueError("need at least 2 trials")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 14]))
    row_frac = np.empty(trials)
    matching = np.empty(trials)
    unit_frac = np.empty(trials)
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        X = rng.integers(0, 2, size=(c, t.n), dtype=np.uint8)
        Xp = _random_flip(X, eps, rng)
        if isinstance(t, LshTransform):
            eq = X[:, t.indices] == Xp[:, t.indices]      # (c, L, K)
        elif isinstance(t, LnhTransform):
            eq = leaf_indices(t, X) == leaf_indices(t, Xp)
        else:
            raise TypeError(f"not a hash transform: {type(t).__name__}")
        rows_eq = eq.all(axis=2)
        sl = slice(done, done + c)
        row_frac[sl] = rows_eq.mean(axis=1)
        matching[sl] = rows_eq.sum(axis=1)
        unit_frac[sl] = eq.mean(axis=(1, 2))
        done += c
    sq = math.sqrt(trials)
    return CollisionStats(
        eps=eps, trials=trials,
        row_collision=float(row_frac.mean()),
        row_collision_sem=float(row_frac.std(ddof=1) / sq),
        mean_matching_rows=float(matching.mean()),
        matching_rows_sem=float(matching.std(ddof=1) / sq),
        unit_collision=float(unit_frac.mean()),
        unit_collision_sem=float(unit_frac.std(ddof=1) / sq),
    )


@dataclass
class DistortionStats:
    pairs: int
    mean: float   # E | d_hash(H x1, H x2) - d_in(x1, x2) |
    sem: float


def sample_pairs(n: int, pairs: int, seed: int):
    """Common random pairs for paired distortion comparisons."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 15]))
    X1 = rng.integers(0, 2, size=(pairs, n), dtype=np.uint8)
    X2 = rng.integers(0, 2, size=(pairs, n), dtype=np.uint8)
    return X1, X2


def distortion_values(t, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Per-pair distortion, averaged over the L independent rows."""
    d_in = (X1 != X2).mean(axis=1)
    if isinstance(t, LshTransform):
        d_row = (X1[:, t.indices] != X2[:, t.indices]).mean(axis=2)  # (P, L)
    elif isinstance(t, LnhTransform):
        differ = leaf_indices(t, X1) != leaf_indices(t, X2)          # (P, L, K)
        # two bits of the K * 2^(d-1) one-hot block differ per differing tree
        d_row = 2.0 * differ.mean(axis=2) / t.leaves
    else:
        raise TypeError(f"not a hash transform: {type(t).__name__}")
    return np.abs(d_row - d_in[:, None]).mean(axis=1)


def estimate_distortion(t, pairs: int, seed: int) -> DistortionStats:
    if pairs <= 1:
        raise ValueError("need at least 2 pairs")
    X1, X2 = sample_pairs(t.n, pairs, seed)
    vals = distortion_values(t, X1, X2)
    return DistortionStats(pairs=pairs, mean=float(vals.mean()),
                           sem=float(vals.std(ddof=1) / math.sqrt(pairs)))


def collision_probability(eps: float, n: int, family: str, m: int | None = None) -> float:
    """Single-function collision probability P1 under an eps-flip perturbation."""
    if not 0 <= eps <= n:
        raise ValueError("eps must be in [0, n]")
    if family == "lsh":
        return 1.0 - eps / n
    if family == "lnh":
        if m is None:
            raise ValueError("lnh needs m")
        return (1.0 - eps / n) ** m
    raise ValueError(f"unknown family {family!r}")


def theorem1_k_bound(theta: float, L: int, p1: float) -> int:
    """Largest K with L * p1^K >= theta (K >= 0); 0 < p1 < 1, 0 < theta <= L."""
    if not 0.0 < p1 < 1.0:
        raise ValueError("p1 must be in (0, 1)")
    if not 0.0 < theta <= L:
        raise ValueError("theta must be in (0, L]")
    k = int(math.floor((math.log(theta) - math.log(L)) / math.log(p1)))
    k = max(k, 0)
    # float guard: walk to the exact boundary of L * p1^K >= theta
    while L * p1 ** (k + 1) >= theta:
        k += 1
    while k > 0 and L * p1 ** k < theta:
        k -= 1
    return k


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def store_transform(t, path) -> None:
    if isinstance(t, LshTransform):
        header = {"kind": "lsh", "n": t.n, "K": t.K, "L": t.L}
        records = ({"row": i, "indices": t.indices[i].tolist()} for i in range(t.L))
    elif isinstance(t, LnhTransform):
        header = {"kind": "lnh", "n": t.n, "K": t.K, "L": t.L, "m": t.m, "d": t.d}
        records = (
            {"row": i, "tree": j, "slots": t.slots[i, j].tolist(),
             "nodes": t.node_features[i, j].tolist()}
            for i in range(t.L) for j in range(t.K)
        )
    elif isinstance(t, IdentityTransform):
        header = {"kind": "identity", "n": t.n}
        records = ()
    else:
        raise TypeError(f"not a transform: {type(t).__name__}")
    write_records(path, header, records)


def load_transform(path):
    header, rows = read_records(path)
    kind = header.get("kind")
    if kind == "identity":
        return IdentityTransform(header["n"])
    if kind == "lsh":
        n, K, L = header["n"], header["K"], header["L"]
        indices = np.zeros((L, K), np.int64)
        seen = np.zeros(L, bool)
        for rec in rows:
            indices[rec["row"]] = rec["indices"]
            seen[rec["row"]] = True
        if not seen.all():
            raise RecordError(f"{path}: missing hash rows")
        return LshTransform(n, K, L, indices)
    if kind == "lnh":
        n, K, L, m, d = (header[k] for k in ("n", "K", "L", "m", "d"))
        slots = np.zeros((L, K, m), np.int64)
        nodes = np.zeros((L, K, 2 ** (d - 1) - 1), np.int64)
        seen = np.zeros((L, K), bool)
        for rec in rows:
            i, j = rec["row"], rec["tree"]
            slots[i, j] = rec["slots"]
            nodes[i, j] = rec["nodes"]
            seen[i, j] = True
        if not seen.all():
            raise RecordError(f"{path}: missing tree records")
        return LnhTransform(n, K, L, m, d, slots, nodes)
    raise RecordError(f"{path}: unknown transform kind {kind!r}")
