"""Binary decision trees, bootstrap random forest, CV folds, and grid search.

Everything here is deterministic given a seed: per-tree random streams derive
from a SeedSequence, split ties break toward the lower feature index and then
the lower threshold, leaf vote ties go to the negative class, and thresholds
sit at midpoints of consecutive distinct feature values. That determinism is
what makes persisted models byte-identical across runs.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import namedtuple
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ArityMismatch,
    EmptyNode,
    IoFailure,
    SingleClassTraining,
    TooFewPerClass,
)

NEGATIVE, POSITIVE = 0, 1

FOREST_FORMAT_VERSION = 1

# a split must reduce impurity by more than float-noise to be accepted
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class Hyperparameters:
    """Forest settings; defaults are the tuned production configuration."""

    n_estimators: int = 100
    bootstrap: bool = True
    criterion: str = "gini"
    max_depth: int | None = 3
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    features_per_split: str = "sqrt"  # "sqrt" | "all"
    seed: int = 0

    def __post_init__(self):
        if self.criterion != "gini":
            raise ValueError(f"only the gini criterion is supported, got {self.criterion!r}")
        if self.features_per_split not in ("sqrt", "all"):
            raise ValueError(f"features_per_split must be 'sqrt' or 'all', got {self.features_per_split!r}")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise ValueError("min_samples_leaf >= 1 and min_samples_split >= 2 required")

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "bootstrap": self.bootstrap,
            "criterion": self.criterion,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "features_per_split": self.features_per_split,
            "seed": self.seed,
        }


_TreeArrays = namedtuple("_TreeArrays", "feature threshold left right vote")


@dataclass
class RandomForestModel:
    """Trained ensemble. ``trees`` holds plain node dicts so the model
    serializes to JSON without loss; packed arrays for fast batch prediction
    are cached lazily."""

    trees: list[list[dict]]
    hyperparameters: Hyperparameters
    feature_names: tuple[str, ...]
    training_class_counts: tuple[int, int]
    _arrays: list[_TreeArrays] | None = field(default=None, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def tree_arrays(self) -> list[_TreeArrays]:
        if self._arrays is None:
            self._arrays = [_pack_tree(nodes) for nodes in self.trees]
        return self._arrays


def gini(counts) -> float:
    """Gini impurity 1 - sum(p_k^2) of a class-count vector."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("gini of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _pack_tree(nodes: list[dict]) -> _TreeArrays:
    n = len(nodes)
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.zeros(n)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    vote = np.zeros(n, dtype=np.int64)
    for i, node in enumerate(nodes):
        counts = node["counts"]
        vote[i] = 1 if counts[1] > counts[0] else 0  # tie -> negative
        if "feature" in node:
            feature[i] = node["feature"]
            threshold[i] = node["threshold"]
            left[i] = node["left"]
            right[i] = node["right"]
    return _TreeArrays(feature, threshold, left, right, vote)


def tree_votes(arrays: _TreeArrays, X: np.ndarray) -> np.ndarray:
    """Route every row of X to its leaf; returns the 0/1 leaf votes."""
    idx = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        active = np.flatnonzero(arrays.feature[idx] >= 0)
        if active.size == 0:
            return arrays.vote[idx]
        node_ids = idx[active]
        go_left = X[active, arrays.feature[node_ids]] <= arrays.threshold[node_ids]
        idx[active] = np.where(go_left, arrays.left[node_ids], arrays.right[node_ids])


def _best_split(Xn, yn, candidates, min_leaf, node_gini):
    """Best (feature, threshold) by impurity decrease over candidate features.

    Candidates are scanned in ascending index and thresholds in ascending
    order with strict improvement, so ties resolve to the lowest feature
    index and then the lowest threshold.
    """
    n = yn.size
    best_gain = _MIN_GAIN
    best = None
    sizes_left = np.arange(1, n)
    sizes_right = n - sizes_left
    for f in candidates:
        order = np.argsort(Xn[:, f], kind="stable")
        sx = Xn[order, f]
        cum_pos = np.cumsum(yn[order])
        left_pos = cum_pos[:-1]
        left_neg = sizes_left - left_pos
        right_pos = cum_pos[-1] - left_pos
        right_neg = sizes_right - right_pos
        gini_left = 1.0 - (left_pos**2 + left_neg**2) / sizes_left.astype(float) ** 2
        gini_right = 1.0 - (right_pos**2 + right_neg**2) / sizes_right.astype(float) ** 2
        weighted = (sizes_left * gini_left + sizes_right * gini_right) / n
        gains = node_gini - weighted
        valid = (
            (sx[1:] > sx[:-1])
            & (sizes_left >= min_leaf)
            & (sizes_right >= min_leaf)
        )
        if not valid.any():
            continue
        gains = np.where(valid, gains, -np.inf)
        j = int(np.argmax(gains))  # argmax returns the first maximum
        if gains[j] > best_gain:
            best_gain = gains[j]
            best = (int(f), float(0.5 * (sx[j] + sx[j + 1])))
    return best


def _grow_tree(X, y, hp: Hyperparameters, rng: np.random.Generator) -> list[dict]:
    n_features = X.shape[1]
    if hp.features_per_split == "sqrt":
        n_candidates = max(1, int(math.floor(math.sqrt(n_features))))
    else:
        n_candidates = n_features
    nodes: list[dict] = []

    def build(rows: np.ndarray, depth: int) -> int:
        ys = y[rows]
        counts = [int(np.sum(ys == NEGATIVE)), int(np.sum(ys == POSITIVE))]
        idx = len(nodes)
        nodes.append({"counts": counts})
        if (
            (hp.max_depth is not None and depth >= hp.max_depth)
            or rows.size < hp.min_samples_split
            or counts[0] == 0
            or counts[1] == 0
        ):
            return idx
        if n_candidates < n_features:
            candidates = np.sort(rng.choice(n_features, size=n_candidates, replace=False))
        else:
            candidates = np.arange(n_features)
        split = _best_split(X[rows], ys, candidates, hp.min_samples_leaf, gini(counts))
        if split is None:
            return idx
        f, threshold = split
        go_left = X[rows, f] <= threshold
        nodes[idx]["feature"] = f
        nodes[idx]["threshold"] = threshold
        nodes[idx]["left"] = build(rows[go_left], depth + 1)
        nodes[idx]["right"] = build(rows[~go_left], depth + 1)
        return idx

    build(np.arange(X.shape[0]), 0)
    return nodes


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    hp: Hyperparameters = Hyperparameters(),
    feature_names: tuple[str, ...] | None = None,
) -> RandomForestModel:
    """Train ``hp.n_estimators`` trees, each on a seeded bootstrap of size |X|.

    When a node's candidate features admit no impurity-reducing split, the
    node becomes a leaf. Both classes must be present in y.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ArityMismatch(f"X {X.shape} and y {y.shape} are inconsistent")
    if X.shape[0] < 2:
        raise SingleClassTraining("need at least 2 training rows")
    class_counts = (int(np.sum(y == NEGATIVE)), int(np.sum(y == POSITIVE)))
    if class_counts[0] == 0 or class_counts[1] == 0:
        raise SingleClassTraining(f"both classes required, got counts {class_counts}")
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(X.shape[1]))
    if len(feature_names) != X.shape[1]:
        raise ArityMismatch("feature_names length must match X columns")

    n = X.shape[0]
    trees = []
    for child_seed in np.random.SeedSequence(hp.seed).spawn(hp.n_estimators):
        rng = np.random.default_rng(child_seed)
        rows = rng.integers(0, n, size=n) if hp.bootstrap else np.arange(n)
        trees.append(_grow_tree(X[rows], y[rows], hp, rng))
    return RandomForestModel(trees, hp, tuple(feature_names), class_counts)


def predict_proba_matrix(m: RandomForestModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise ArityMismatch(f"expected (n, {m.n_features}) matrix, got {X.shape}")
    votes = np.zeros(X.shape[0])
    for arrays in m.tree_arrays():
        votes += tree_votes(arrays, X)
    return votes / len(m.trees)


def predict_proba(m: RandomForestModel, x) -> float:
    """Fraction of trees whose leaf majority votes positive."""
    vec = np.asarray(getattr(x, "values", x), dtype=float)
    if vec.shape != (m.n_features,):
        raise ArityMismatch(f"expected {m.n_features} features, got {vec.shape}")
    return float(predict_proba_matrix(m, vec[None, :])[0])


def predict(m: RandomForestModel, x) -> int:
    """POSITIVE iff the vote fraction strictly exceeds 0.5."""
    return POSITIVE if predict_proba(m, x) > 0.5 else NEGATIVE


def predict_matrix(m: RandomForestModel, X: np.ndarray) -> np.ndarray:
    return (predict_proba_matrix(m, X) > 0.5).astype(np.int64)


# --- splits and model selection ---------------------------------------------

def stratified_kfold(y: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """k disjoint folds covering all indices, class-balanced within 1 sample."""
    y = np.asarray(y)
    classes = np.unique(y)
    for c in classes:
        if np.sum(y == c) < k:
            raise TooFewPerClass(f"class {c} has fewer than k={k} members")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for c in classes:
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for i, chunk in enumerate(np.array_split(idx, k)):
            folds[i].extend(int(j) for j in chunk)
    return [np.array(sorted(f)) for f in folds]


def stratified_split(
    y: np.ndarray, test_fraction: float = 0.3, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Single stratified train/test split.

    Per-class test counts start at floor(test_fraction * n_c); remaining test
    seats up to ceil(test_fraction * n) go to the classes with the largest
    fractional remainder (ties to the lower class label).
    """
    y = np.asarray(y)
    n = y.size
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    classes = np.unique(y)
    n_test_total = int(math.ceil(test_fraction * n))
    wants = {c: test_fraction * np.sum(y == c) for c in classes}
    counts = {c: int(math.floor(wants[c])) for c in classes}
    leftover = n_test_total - sum(counts.values())
    by_remainder = sorted(classes, key=lambda c: (-(wants[c] - counts[c]), c))
    for c in by_remainder[:leftover]:
        counts[c] += 1

    rng = np.random.default_rng(seed)
    test_idx: list[int] = []
    train_idx: list[int] = []
    for c in classes:
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        test_idx.extend(int(i) for i in idx[: counts[c]])
        train_idx.extend(int(i) for i in idx[counts[c] :])
    train = np.array(sorted(train_idx))
    test = np.array(sorted(test_idx))
    for c in classes:
        if not (np.any(y[train] == c) and np.any(y[test] == c)):
            raise TooFewPerClass(f"class {c} missing from one side of the split")
    return train, test


def expand_grid(lattice: dict[str, list]) -> list[dict]:
    """Expand a {param: values} lattice into override dicts, in declared order."""
    keys = list(lattice.keys())
    return [dict(zip(keys, combo)) for combo in itertools.product(*(lattice[k] for k in keys))]


def grid_search_cv(
    X: np.ndarray,
    y: np.ndarray,
    grid: list[dict] | dict[str, list],
    k: int = 5,
    seed: int = 0,
    base: Hyperparameters = Hyperparameters(),
) -> tuple[Hyperparameters, list[dict]]:
    """Mean CV accuracy per configuration; ties break toward earlier grid order."""
    if isinstance(grid, dict):
        grid = expand_grid(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    folds = stratified_kfold(y, k, seed)
    all_idx = np.arange(y.size)

    table: list[dict] = []
    best_hp = None
    best_score = -np.inf
    for overrides in grid:
        hp = replace(base, **overrides)
        fold_accs = []
        for fold in folds:
            train_mask = ~np.isin(all_idx, fold)
            model = fit_forest(X[train_mask], y[train_mask], hp)
            acc = float(np.mean(predict_matrix(model, X[fold]) == y[fold]))
            fold_accs.append(acc)
        mean_acc = float(np.mean(fold_accs))
        table.append(
            {"params": dict(overrides), "fold_accuracies": fold_accs, "mean_accuracy": mean_acc}
        )
        if mean_acc > best_score:
            best_score = mean_acc
            best_hp = hp
    return best_hp, table


# --- persistence -------------------------------------------------------------

def forest_to_dict(m: RandomForestModel) -> dict:
    return {
        "format_version": FOREST_FORMAT_VERSION,
        "hyperparameters": m.hyperparameters.to_dict(),
        "feature_names": list(m.feature_names),
        "training_class_counts": list(m.training_class_counts),
        "trees": m.trees,
    }


def forest_from_dict(d: dict) -> RandomForestModel:
    version = d.get("format_version")
    if version != FOREST_FORMAT_VERSION:
        raise IoFailure(f"unsupported forest format_version {version!r}")
    hp = Hyperparameters(**d["hyperparameters"])
    return RandomForestModel(
        d["trees"], hp, tuple(d["feature_names"]), tuple(d["training_class_counts"])
    )


def save_forest(m: RandomForestModel, path: Path) -> None:
    Path(path).write_text(json.dumps(forest_to_dict(m), indent=2, sort_keys=True) + "\n")


def load_forest(path: Path) -> RandomForestModel:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read forest model {path}: {exc}") from exc
    return forest_from_dict(d)
