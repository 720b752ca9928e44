"""Feature attribution: impurity importance, permutation importance, and
exact Shapley values.

Shapley values here are exact, not sampled: every coalition S of features is
enumerated, the coalition value v(S) is the interventional expectation of the
model output over a background set (sample values on S, background values off
S), and contributions are combined with the weight |S|! (F-|S|-1)! / F!.
Exactness is affordable because each tree only reads the features it splits
on, so per tree only 2^|used| hybrid patterns need evaluating; votes for the
full 2^F coalition grid are then gathered by bitmask lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import forest as rf
from .calibrate import CalibratedModel, sigmoid_probability
from .errors import (
    ArityMismatch,
    EmptyBackground,
    EmptySummary,
    TooManyFeatures,
    UntrainedModel,
)

EXACT_ENUMERATION_LIMIT = 16


def coalition_weight(subset_size: int, n_features: int) -> float:
    """|S|! (F - |S| - 1)! / F! for a subset of the given size."""
    if not 0 <= subset_size < n_features:
        raise ValueError(f"subset size {subset_size} invalid for {n_features} features")
    return (
        math.factorial(subset_size)
        * math.factorial(n_features - subset_size - 1)
        / math.factorial(n_features)
    )


@dataclass(frozen=True)
class ShapExplanation:
    """Additive attribution of one prediction: base_value + sum(phi) equals
    the model output on the sample."""

    sample_id: str
    base_value: float
    feature_names: tuple[str, ...]
    phi: np.ndarray
    feature_values: np.ndarray
    model_output: float

    @property
    def phi_by_name(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.phi.tolist()))

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "base_value": self.base_value,
            "phi": self.phi_by_name,
            "feature_values": dict(zip(self.feature_names, self.feature_values.tolist())),
            "model_output": self.model_output,
        }


@dataclass(frozen=True)
class GlobalImportance:
    method: str  # "IFI" | "PFI" | "SHAP"
    feature_names: tuple[str, ...]
    scores: np.ndarray
    ranking: tuple[str, ...]


def _make_importance(method: str, names: tuple[str, ...], scores: np.ndarray) -> GlobalImportance:
    order = np.argsort(-scores, kind="stable")  # ties keep feature-index order
    ranking = tuple(names[i] for i in order)
    return GlobalImportance(method, tuple(names), scores, ranking)


def _forest_of(model) -> rf.RandomForestModel:
    return model.forest if isinstance(model, CalibratedModel) else model


def _output_transform(model):
    if isinstance(model, CalibratedModel):
        return lambda s: sigmoid_probability(s, model.platt_a, model.platt_b)
    return lambda s: s


# --- impurity-based importance ------------------------------------------------

def impurity_importance(m: rf.RandomForestModel) -> GlobalImportance:
    """Mean decrease in Gini impurity, weighted by node sample share,
    averaged over trees and normalized to sum to one."""
    if not m.trees:
        raise UntrainedModel("model has no trees")
    totals = np.zeros(m.n_features)
    for nodes in m.trees:
        root_n = sum(nodes[0]["counts"])
        per_tree = np.zeros(m.n_features)
        for node in nodes:
            if "feature" not in node:
                continue
            left, right = nodes[node["left"]], nodes[node["right"]]
            n_node = sum(node["counts"])
            n_l, n_r = sum(left["counts"]), sum(right["counts"])
            drop = rf.gini(node["counts"]) - (
                n_l / n_node * rf.gini(left["counts"]) + n_r / n_node * rf.gini(right["counts"])
            )
            per_tree[node["feature"]] += (n_node / root_n) * drop
        totals += per_tree
    scores = totals / len(m.trees)
    if scores.sum() > 0:
        scores = scores / scores.sum()
    return _make_importance("IFI", m.feature_names, scores)


# --- permutation importance ----------------------------------------------------

def permutation_importance(
    m: rf.RandomForestModel,
    X: np.ndarray,
    y: np.ndarray,
    n_repeats: int = 1000,
    seed: int = 0,
) -> GlobalImportance:
    """Drop in accuracy when one feature column is permuted.

    importance(f) = baseline accuracy - mean accuracy over ``n_repeats``
    seeded permutations of column f; each (feature, repeat) pair gets its own
    derived random stream.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size or X.shape[0] < 2:
        raise ArityMismatch(f"X {X.shape} and y {y.shape} are inconsistent or too small")
    if X.shape[1] != m.n_features:
        raise ArityMismatch(f"expected {m.n_features} features, got {X.shape[1]}")
    n = X.shape[0]
    baseline = float(np.mean(rf.predict_matrix(m, X) == y))
    scores = np.zeros(m.n_features)
    feature_seqs = np.random.SeedSequence(seed).spawn(m.n_features)
    for f in range(m.n_features):
        repeat_seqs = feature_seqs[f].spawn(n_repeats)
        big = np.tile(X, (n_repeats, 1))
        for r in range(n_repeats):
            perm = np.random.default_rng(repeat_seqs[r]).permutation(n)
            big[r * n : (r + 1) * n, f] = X[perm, f]
        preds = rf.predict_matrix(m, big).reshape(n_repeats, n)
        scores[f] = baseline - float(np.mean(preds == y[None, :]))
    return _make_importance("PFI", m.feature_names, scores)


# --- exact Shapley values -------------------------------------------------------

def _coalition_scores(forest_model: rf.RandomForestModel, x: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Forest vote fraction for every (coalition, background row) pair.

    Returns an array of shape (2^F, n_background); entry [S, b] is the vote
    fraction on the hybrid point taking x's values on S and b's elsewhere.
    """
    n_features = forest_model.n_features
    n_coal = 1 << n_features
    coalitions = np.arange(n_coal, dtype=np.int64)
    nb = background.shape[0]
    scores = np.zeros((n_coal, nb))
    for arrays in forest_model.tree_arrays():
        used = np.unique(arrays.feature[arrays.feature >= 0])
        if used.size == 0:
            scores += arrays.vote[0]
            continue
        k = used.size
        n_patterns = 1 << k
        votes = np.empty((n_patterns, nb))
        chunk = max(1, 4_000_000 // nb)
        for start in range(0, n_patterns, chunk):
            pats = np.arange(start, min(start + chunk, n_patterns), dtype=np.int64)
            hybrids = np.broadcast_to(background, (pats.size, nb, n_features)).copy()
            for j, f in enumerate(used):
                from_x = ((pats >> j) & 1).astype(bool)
                hybrids[from_x, :, f] = x[f]
            votes[pats] = rf.tree_votes(arrays, hybrids.reshape(-1, n_features)).reshape(
                pats.size, nb
            )
        bits = (coalitions[:, None] >> used[None, :]) & 1
        pattern_ids = bits @ (1 << np.arange(k, dtype=np.int64))
        scores += votes[pattern_ids]
    return scores / len(forest_model.trees)


def shap_values(model, x, background, sample_id: str = "") -> ShapExplanation:
    """Exact Shapley attribution of one prediction.

    The attribution target is the calibrated probability when ``model`` is a
    CalibratedModel, else the raw vote fraction. ``background`` supplies the
    interventional reference distribution; v(empty set) is the mean model
    output over it and becomes the base value.
    """
    forest_model = _forest_of(model)
    n_features = forest_model.n_features
    if n_features > EXACT_ENUMERATION_LIMIT:
        raise TooManyFeatures(
            f"exact enumeration is refused above {EXACT_ENUMERATION_LIMIT} features, got {n_features}"
        )
    vec = np.asarray(getattr(x, "values", x), dtype=float)
    if vec.shape != (n_features,):
        raise ArityMismatch(f"expected {n_features} features, got {vec.shape}")
    bg = np.asarray(background, dtype=float)
    if bg.ndim == 1:
        bg = bg[None, :]
    if bg.shape[0] == 0:
        raise EmptyBackground("background set must be non-empty")
    if bg.shape[1] != n_features:
        raise ArityMismatch(f"background has {bg.shape[1]} features, expected {n_features}")

    scores = _coalition_scores(forest_model, vec, bg)
    values = _output_transform(model)(scores).mean(axis=1)

    coalitions = np.arange(1 << n_features, dtype=np.int64)
    sizes = np.zeros(coalitions.size, dtype=np.int64)
    for f in range(n_features):
        sizes += (coalitions >> f) & 1
    weights = np.array([coalition_weight(s, n_features) for s in range(n_features)])

    phi = np.zeros(n_features)
    for i in range(n_features):
        bit = 1 << i
        without = coalitions[(coalitions & bit) == 0]
        phi[i] = float(np.sum(weights[sizes[without]] * (values[without | bit] - values[without])))

    return ShapExplanation(
        sample_id=sample_id,
        base_value=float(values[0]),
        feature_names=forest_model.feature_names,
        phi=phi,
        feature_values=vec.copy(),
        model_output=float(values[-1]),
    )


# --- matrix-level aggregation ----------------------------------------------------

def value_quantiles(column: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Empirical quantile in [0, 1] of each query within the column.

    The minimum maps to 0 and the maximum to 1; ties take their average rank;
    queries outside the observed range clip to the endpoints.
    """
    column = np.asarray(column, dtype=float)
    queries = np.atleast_1d(np.asarray(queries, dtype=float))
    n = column.size
    if n < 2:
        return np.full(queries.shape, 0.5)
    ordered = np.sort(column)
    lo = np.searchsorted(ordered, queries, side="left")
    hi = np.searchsorted(ordered, queries, side="right") - 1
    rank = np.clip((lo + hi) / 2.0, 0.0, n - 1.0)
    return rank / (n - 1.0)


@dataclass(frozen=True)
class ShapMatrix:
    """Per-sample explanations stacked into matrices, plus the value
    quantiles used for the violin-style summary."""

    feature_names: tuple[str, ...]
    sample_ids: tuple[str, ...]
    phi: np.ndarray          # (n_samples, n_features)
    values: np.ndarray       # (n_samples, n_features)
    quantiles: np.ndarray    # (n_samples, n_features), within-column quantile of each value
    base_values: np.ndarray  # (n_samples,)
    model_outputs: np.ndarray

    def __len__(self) -> int:
        return len(self.sample_ids)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "sample_ids": list(self.sample_ids),
            "phi": self.phi.tolist(),
            "values": self.values.tolist(),
            "quantiles": self.quantiles.tolist(),
            "base_values": self.base_values.tolist(),
            "model_outputs": self.model_outputs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapMatrix":
        return cls(
            tuple(d["feature_names"]),
            tuple(d["sample_ids"]),
            np.asarray(d["phi"], dtype=float),
            np.asarray(d["values"], dtype=float),
            np.asarray(d["quantiles"], dtype=float),
            np.asarray(d["base_values"], dtype=float),
            np.asarray(d["model_outputs"], dtype=float),
        )


def build_shap_matrix(model, X: np.ndarray, sample_ids, background: np.ndarray) -> ShapMatrix:
    X = np.asarray(X, dtype=float)
    rows = [shap_values(model, X[i], background, sample_id=sid) for i, sid in enumerate(sample_ids)]
    if not rows:
        raise EmptySummary("no samples to explain")
    phi = np.stack([r.phi for r in rows])
    values = np.stack([r.feature_values for r in rows])
    quantiles = np.column_stack(
        [value_quantiles(values[:, f], values[:, f]) for f in range(values.shape[1])]
    )
    return ShapMatrix(
        rows[0].feature_names,
        tuple(sample_ids),
        phi,
        values,
        quantiles,
        np.array([r.base_value for r in rows]),
        np.array([r.model_output for r in rows]),
    )


def global_shap_importance(mat: ShapMatrix) -> GlobalImportance:
    """Mean absolute Shapley value per feature, ranked descending."""
    if len(mat) == 0:
        raise EmptySummary("empty explanation matrix")
    return _make_importance("SHAP", mat.feature_names, np.mean(np.abs(mat.phi), axis=0))


def shap_summary(mat: ShapMatrix) -> list[tuple[str, str, float, float, float]]:
    """Violin emission table: one (feature, sample_id, phi, value, quantile)
    row per feature per sample, feature-major."""
    if len(mat) == 0:
        raise EmptySummary("empty explanation matrix")
    rows = []
    for f, name in enumerate(mat.feature_names):
        for i, sid in enumerate(mat.sample_ids):
            rows.append(
                (name, sid, float(mat.phi[i, f]), float(mat.values[i, f]), float(mat.quantiles[i, f]))
            )
    return rows
