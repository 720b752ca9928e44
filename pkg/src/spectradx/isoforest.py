"""Isolation forest for unsupervised outlier filtering.

Points that isolate in few random axis-aligned splits are anomalous. Each
tree is grown on a seeded subsample drawn without replacement; the anomaly
score normalizes the mean isolation depth by the expected path length c(n)
of an unsuccessful binary-search-tree lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArityMismatch, DegenerateData
from .features import FeatureVector

EULER_GAMMA = 0.5772156649015329


def average_path_length(n: int) -> float:
    """Expected isolation depth of n points, c(n).

    c(1) = 0 and c(2) = 1 exactly; larger n uses the harmonic-number
    approximation H(m) ~ ln(m) + Euler-Mascheroni.
    """
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass
class IsolationForestModel:
    trees: list[list[dict]]
    subsample_size: int
    n_trees: int
    n_features: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "trees": self.trees,
            "subsample_size": self.subsample_size,
            "n_trees": self.n_trees,
            "n_features": self.n_features,
            "seed": self.seed,
        }


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        return np.asarray(X, dtype=float)
    return np.stack([v.values if isinstance(v, FeatureVector) else np.asarray(v, float) for v in X])


def _grow(nodes: list[dict], X: np.ndarray, rng: np.random.Generator, depth: int, cap: int) -> int:
    n = X.shape[0]
    if n <= 1 or depth >= cap:
        nodes.append({"size": int(n)})
        return len(nodes) - 1
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    splittable = np.flatnonzero(hi > lo)
    if splittable.size == 0:
        nodes.append({"size": int(n)})
        return len(nodes) - 1
    f = int(splittable[rng.integers(splittable.size)])
    value = float(lo[f] + rng.random() * (hi[f] - lo[f]))
    go_left = X[:, f] <= value
    idx = len(nodes)
    nodes.append({"feature": f, "value": value, "left": -1, "right": -1})
    nodes[idx]["left"] = _grow(nodes, X[go_left], rng, depth + 1, cap)
    nodes[idx]["right"] = _grow(nodes, X[~go_left], rng, depth + 1, cap)
    return idx


def fit_isolation_forest(
    X, n_trees: int = 100, subsample_size: int | None = None, seed: int = 0
) -> IsolationForestModel:
    """Grow ``n_trees`` isolation trees on seeded subsamples without replacement.

    Split features are drawn uniformly from the features with nonzero spread
    at the node; split values uniformly between the node's min and max. Tree
    depth caps at ceil(log2(subsample_size)).
    """
    mat = _as_matrix(X)
    n, n_features = mat.shape
    if n < 2:
        raise DegenerateData(f"need at least 2 rows, got {n}")
    if np.all(mat == mat[0]):
        raise DegenerateData("all rows identical; isolation splits are impossible")
    if subsample_size is None:
        subsample_size = min(64, n)
    if not 1 <= subsample_size <= n:
        raise ValueError(f"subsample_size must be in [1, {n}], got {subsample_size}")

    cap = max(1, math.ceil(math.log2(subsample_size))) if subsample_size > 1 else 0
    trees: list[list[dict]] = []
    for child_seed in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child_seed)
        rows = rng.choice(n, size=subsample_size, replace=False)
        nodes: list[dict] = []
        _grow(nodes, mat[rows], rng, depth=0, cap=cap)
        trees.append(nodes)
    return IsolationForestModel(trees, subsample_size, n_trees, n_features, seed)


def _path_length(nodes: list[dict], x: np.ndarray) -> float:
    idx = 0
    depth = 0
    while "feature" in nodes[idx]:
        node = nodes[idx]
        idx = node["left"] if x[node["feature"]] <= node["value"] else node["right"]
        depth += 1
    return depth + average_path_length(nodes[idx]["size"])


def anomaly_score(m: IsolationForestModel, x) -> float:
    """s(x) = 2^(-E[h(x)] / c(subsample_size)), in (0, 1)."""
    vec = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=float)
    if vec.shape != (m.n_features,):
        raise ArityMismatch(f"expected {m.n_features} features, got {vec.shape}")
    mean_depth = sum(_path_length(nodes, vec) for nodes in m.trees) / m.n_trees
    return float(2.0 ** (-mean_depth / average_path_length(m.subsample_size)))


def anomaly_scores(m: IsolationForestModel, X) -> np.ndarray:
    mat = _as_matrix(X)
    return np.array([anomaly_score(m, row) for row in mat])


def filter_outliers(
    X,
    contamination: float,
    n_trees: int = 100,
    subsample_size: int | None = None,
    seed: int = 0,
) -> tuple[list[int], list[int]]:
    """Drop the floor(contamination * |X|) highest-scoring rows.

    Returns (kept_indices, removed_indices), both ascending. Score ties break
    toward removing the lower index first.
    """
    if not 0.0 <= contamination < 0.5:
        raise ValueError(f"contamination must be in [0, 0.5), got {contamination}")
    mat = _as_matrix(X)
    n = mat.shape[0]
    k = int(math.floor(contamination * n))
    if k == 0:
        return list(range(n)), []
    model = fit_isolation_forest(mat, n_trees=n_trees, subsample_size=subsample_size, seed=seed)
    scores = anomaly_scores(model, mat)
    order = np.argsort(-scores, kind="stable")  # stable: ties keep lower index first
    removed = sorted(int(i) for i in order[:k])
    kept = sorted(set(range(n)) - set(removed))
    return kept, removed
