"""RF100: a 100-tree random forest producing discrete acceptance probabilities.

Trees use axis-aligned splits chosen by Gini impurity over 9 (= ceil(sqrt 80))
randomly drawn candidate features per node, grown until leaves are pure or
hold fewer than 2 samples.  The 4:1 favouring of the positive class is
realized as bootstrap resampling weights.  Split ties (equal impurity) go to
the lowest feature index, then the lowest threshold, so fitting is fully
deterministic given the seed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DataError
from .seeding import derive_seed

__all__ = [
    "N_TREES",
    "POSITIVE_WEIGHT",
    "Tree",
    "Forest",
    "fit",
    "predict_proba",
    "predict_matrix",
    "tree_depth",
    "save_forest",
    "load_forest",
    "write_forest_summary",
]

N_TREES = 100
POSITIVE_WEIGHT = 4.0

_MAGIC = b"UBRF"
_VERSION = 1


@njit(cache=True)
def _next_u64(state):  # pragma: no cover - exercised via fit()
    state[0] = state[0] + np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _build_tree(X, y, sample_idx, mtry, seed):  # pragma: no cover
    """Grow one tree over the bootstrap rows sample_idx; returns packed node
    arrays (feature, threshold, left, right, vote) trimmed to node count."""
    n = sample_idx.shape[0]
    n_features = X.shape[1]
    cap = 2 * n + 8
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    vote = np.zeros(cap, np.int8)

    order = sample_idx.copy()
    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    node_count = 1

    state = np.empty(1, np.uint64)
    state[0] = np.uint64(seed)
    feat_pool = np.empty(n_features, np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        m = hi - lo
        pos = 0
        for k in range(lo, hi):
            pos += y[order[k]]
        if pos == 0 or pos == m or m < 2:
            vote[node] = 1 if 2 * pos > m else 0
            continue

        # draw mtry distinct candidate features (partial Fisher-Yates), then
        # visit them in ascending index order so ties resolve deterministically
        for f in range(n_features):
            feat_pool[f] = f
        k_feats = mtry if mtry < n_features else n_features
        for i in range(k_feats):
            j = i + int(_next_u64(state) % np.uint64(n_features - i))
            tmp = feat_pool[i]
            feat_pool[i] = feat_pool[j]
            feat_pool[j] = tmp
        candidates = np.sort(feat_pool[:k_feats])

        # best split: maximize sum of per-child (pos^2 + neg^2) / size, which
        # is equivalent to minimizing the weighted Gini of the children
        best_score = -1.0
        best_feat = -1
        best_thr = 0.0
        seg = order[lo:hi]
        for ci in range(k_feats):
            f = candidates[ci]
            values = np.empty(m, np.float64)
            for k in range(m):
                values[k] = X[seg[k], f]
            sorter = np.argsort(values, kind="mergesort")
            pos_left = 0
            for k in range(m - 1):
                pos_left += y[seg[sorter[k]]]
                v0 = values[sorter[k]]
                v1 = values[sorter[k + 1]]
                if v0 == v1:
                    continue
                nl = k + 1
                nr = m - nl
                pl = pos_left
                pr = pos - pl
                score = (
                    (pl * pl + (nl - pl) * (nl - pl)) / nl
                    + (pr * pr + (nr - pr) * (nr - pr)) / nr
                )
                if score > best_score:
                    best_score = score
                    best_feat = f
                    best_thr = 0.5 * (v0 + v1)

        if best_feat < 0:
            # impure but unsplittable (identical rows with mixed labels)
            vote[node] = 1 if 2 * pos > m else 0
            continue

        # partition the segment in place: <= threshold goes left
        i = lo
        j = hi - 1
        while i <= j:
            if X[order[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = order[i]
                order[i] = order[j]
                order[j] = tmp
                j -= 1
        mid = i

        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = node_count
        right[node] = node_count + 1
        stack_node[top] = node_count
        stack_lo[top] = lo
        stack_hi[top] = mid
        top += 1
        stack_node[top] = node_count + 1
        stack_lo[top] = mid
        stack_hi[top] = hi
        top += 1
        node_count += 2

    return (
        feature[:node_count],
        threshold[:node_count],
        left[:node_count],
        right[:node_count],
        vote[:node_count],
    )


@njit(cache=True)
def _tree_votes(feature, threshold, left, right, vote, X):  # pragma: no cover
    n = X.shape[0]
    out = np.empty(n, np.int8)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = vote[node]
    return out


@dataclass(frozen=True)
class Tree:
    """One fitted decision tree as flat node arrays; feature[i] < 0 marks a
    leaf whose vote is vote[i]."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    vote: np.ndarray


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    feature_count: int
    seed: int
    positive_weight: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "trees", tuple(self.trees))


def _as_feature_matrix(features, feature_count: int | None = None) -> np.ndarray:
    if hasattr(features, "values") and not isinstance(features, np.ndarray):
        features = [features]
    if isinstance(features, (list, tuple)) and features and hasattr(features[0], "values"):
        X = np.array([np.asarray(f.values, dtype=np.float64) for f in features])
    else:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
    if feature_count is not None and X.shape[1] != feature_count:
        raise ValueError(f"expected {feature_count} features, got {X.shape[1]}")
    return X


def fit(
    features,
    labels: Sequence[int],
    seed: int,
    n_trees: int = N_TREES,
    positive_weight: float = POSITIVE_WEIGHT,
) -> Forest:
    """Train the forest on rows of features with binary labels (1 positive).

    features may be a (n, d) array or a list of FeatureVector.  Every tree
    sees a weighted bootstrap of the rows (positives carry ``positive_weight``)
    that is redrawn if it contains a single class, so each tree can split.
    """
    X = _as_feature_matrix(features)
    y = np.asarray(labels, dtype=np.int8).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    classes = np.unique(y)
    if not np.array_equal(classes, [0, 1]):
        raise DataError(f"need both classes 0 and 1 in the training data, got {list(classes)}")

    n = X.shape[0]
    mtry = math.ceil(math.sqrt(X.shape[1]))
    weights = np.where(y == 1, positive_weight, 1.0)
    probs = weights / weights.sum()

    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(derive_seed(seed, "tree", t, "bootstrap"))
        for _ in range(10_000):
            sample_idx = rng.choice(n, size=n, p=probs)
            picked = y[sample_idx]
            if picked.min() != picked.max():
                break
        else:
            raise DataError("could not draw a two-class bootstrap after 10000 tries")
        arrays = _build_tree(
            X,
            y,
            sample_idx.astype(np.int64),
            mtry,
            np.uint64(derive_seed(seed, "tree", t, "features")),
        )
        trees.append(Tree(*arrays))
    return Forest(
        trees=tuple(trees),
        feature_count=int(X.shape[1]),
        seed=int(seed),
        positive_weight=float(positive_weight),
    )


def predict_matrix(forest: Forest, features) -> np.ndarray:
    """Acceptance probability (fraction of trees voting positive) per row."""
    if not forest.trees:
        raise ValueError("forest has no trees")
    X = _as_feature_matrix(features, forest.feature_count)
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for tree in forest.trees:
        votes += _tree_votes(
            tree.feature, tree.threshold, tree.left, tree.right, tree.vote, X
        )
    return votes / len(forest.trees)


def predict_proba(forest: Forest, feature) -> float:
    return float(predict_matrix(forest, feature)[0])


def tree_depth(tree: Tree) -> int:
    """Depth of the tree (a lone leaf has depth 0)."""
    depth = np.zeros(tree.feature.shape[0], dtype=np.int64)
    best = 0
    for node in range(tree.feature.shape[0]):
        if tree.feature[node] >= 0:
            for child in (tree.left[node], tree.right[node]):
                depth[child] = depth[node] + 1
                if depth[child] > best:
                    best = int(depth[child])
    return best


# ---------------------------------------------------------------------------
# Checkpointing


def save_forest(forest: Forest, path: str | Path) -> None:
    """Versioned binary: magic, version, JSON header, then per-tree node
    arrays as little-endian raw bytes."""
    header = {
        "n_trees": len(forest.trees),
        "feature_count": forest.feature_count,
        "seed": forest.seed,
        "positive_weight": forest.positive_weight,
        "node_counts": [int(t.feature.shape[0]) for t in forest.trees],
    }
    header_bytes = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for tree in forest.trees:
            fh.write(tree.feature.astype("<i4").tobytes())
            fh.write(tree.threshold.astype("<f8").tobytes())
            fh.write(tree.left.astype("<i4").tobytes())
            fh.write(tree.right.astype("<i4").tobytes())
            fh.write(tree.vote.astype("<i1").tobytes())


def load_forest(path: str | Path) -> Forest:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path} is not a forest checkpoint")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise DataError(f"unsupported forest checkpoint version {version}")
    header = json.loads(raw[12 : 12 + header_len].decode())
    offset = 12 + header_len
    trees = []
    for count in header["node_counts"]:
        feature = np.frombuffer(raw, dtype="<i4", count=count, offset=offset).astype(np.int64)
        offset += 4 * count
        threshold = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).copy()
        offset += 8 * count
        left = np.frombuffer(raw, dtype="<i4", count=count, offset=offset).astype(np.int64)
        offset += 4 * count
        right = np.frombuffer(raw, dtype="<i4", count=count, offset=offset).astype(np.int64)
        offset += 4 * count
        vote = np.frombuffer(raw, dtype="<i1", count=count, offset=offset).copy()
        offset += count
        trees.append(Tree(feature, threshold, left, right, vote))
    return Forest(
        trees=tuple(trees),
        feature_count=int(header["feature_count"]),
        seed=int(header["seed"]),
        positive_weight=float(header["positive_weight"]),
    )


def write_forest_summary(forest: Forest, path: str | Path) -> None:
    """JSON with per-tree structure statistics."""
    summary = {
        "n_trees": len(forest.trees),
        "feature_count": forest.feature_count,
        "seed": forest.seed,
        "positive_weight": forest.positive_weight,
        "tree_depths": [tree_depth(t) for t in forest.trees],
        "tree_node_counts": [int(t.feature.shape[0]) for t in forest.trees],
        "tree_leaf_counts": [int(np.sum(t.feature < 0)) for t in forest.trees],
    }
    Path(path).write_text(json.dumps(summary, indent=2) + "\n")
