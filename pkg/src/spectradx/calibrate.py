"""Sigmoid calibration of forest vote fractions and the probability gate.

Raw vote fractions from a small forest drift from empirical frequencies, so a
one-dimensional logistic map p(s) = 1 / (1 + exp(a*s + b)) is fitted on the
training scores against smoothed targets. A two-threshold gate then separates
confident calls from the low-confidence band that warrants re-testing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ArityMismatch, NonConvergence, SingleClassTraining
from . import forest as rf


class GateDecision(enum.Enum):
    CONFIDENT_POSITIVE = "confident_positive"
    CONFIDENT_NEGATIVE = "confident_negative"
    LOW_CONFIDENCE = "low_confidence"


@dataclass(frozen=True)
class GateConfig:
    positive_above: float = 0.7
    negative_at_or_below: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.negative_at_or_below < self.positive_above <= 1.0:
            raise ValueError(
                "gate requires 0 <= negative_at_or_below < positive_above <= 1, got "
                f"({self.negative_at_or_below}, {self.positive_above})"
            )


@dataclass
class CalibratedModel:
    forest: rf.RandomForestModel
    platt_a: float
    platt_b: float
    gate: GateConfig = GateConfig()


def sigmoid_probability(score, a: float, b: float):
    z = np.clip(a * np.asarray(score, dtype=float) + b, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(z))


def fit_platt(
    scores: np.ndarray,
    y: np.ndarray,
    max_iter: int = 200,
    grad_tol: float = 1e-10,
) -> tuple[float, float]:
    """Fit (a, b) of p(s) = 1/(1 + exp(a*s + b)) by Newton iteration.

    Targets are the smoothed values t+ = (N+ + 1)/(N+ + 2) and
    t- = 1/(N- + 2) rather than hard 0/1 labels, which keeps the
    cross-entropy optimum finite even for perfectly separated scores.

    Raises:
        SingleClassTraining: if y holds only one class.
        NonConvergence: if the gradient norm stays above ``grad_tol`` after
            ``max_iter`` iterations.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    if scores.shape != y.shape:
        raise ArityMismatch(f"scores {scores.shape} and labels {y.shape} differ")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(np.sum(y == rf.POSITIVE))
    n_neg = int(np.sum(y == rf.NEGATIVE))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassTraining(f"both classes required, got {n_pos} pos / {n_neg} neg")

    t_pos = (n_pos + 1.0) / (n_pos + 2.0)
    t_neg = 1.0 / (n_neg + 2.0)
    t = np.where(y == rf.POSITIVE, t_pos, t_neg)

    a = 0.0
    b = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    grad_norm = np.inf
    for _ in range(max_iter):
        p = sigmoid_probability(scores, a, b)
        # d(loss)/dz = t - p for z = a*s + b
        residual = t - p
        grad = np.array([np.dot(residual, scores), residual.sum()])
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < grad_tol:
            return float(a), float(b)
        w = p * (1.0 - p)
        h11 = float(np.dot(w, scores * scores))
        h12 = float(np.dot(w, scores))
        h22 = float(w.sum())
        det = h11 * h22 - h12 * h12
        if det <= 1e-300:
            # degenerate curvature (e.g. constant scores): damp the Hessian
            h11 += 1e-6
            h22 += 1e-6
            det = h11 * h22 - h12 * h12
        a -= (h22 * grad[0] - h12 * grad[1]) / det
        b -= (h11 * grad[1] - h12 * grad[0]) / det
    raise NonConvergence(grad_norm)


def calibrate_forest(
    model: rf.RandomForestModel,
    X_train: np.ndarray,
    y_train: np.ndarray,
    gate: GateConfig = GateConfig(),
) -> CalibratedModel:
    scores = rf.predict_proba_matrix(model, X_train)
    a, b = fit_platt(scores, y_train)
    return CalibratedModel(model, a, b, gate)


def calibrated_proba(m: CalibratedModel, x) -> float:
    """Calibrated probability of the positive class for one sample."""
    score = rf.predict_proba(m.forest, x)
    return float(sigmoid_probability(score, m.platt_a, m.platt_b))


def calibrated_proba_matrix(m: CalibratedModel, X: np.ndarray) -> np.ndarray:
    return sigmoid_probability(rf.predict_proba_matrix(m.forest, X), m.platt_a, m.platt_b)


@dataclass(frozen=True)
class CalibrationCurve:
    points: list[tuple[float, float, int]]  # (mean predicted p, empirical frac positive, count)
    empty_bins: list[int]
    n_bins: int


def calibration_curve(p: np.ndarray, y: np.ndarray, n_bins: int = 5) -> CalibrationCurve:
    """Equal-width reliability bins on [0, 1]; empty bins are reported, not emitted."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y)
    if p.size == 0 or p.shape != y.shape:
        raise ArityMismatch("probabilities and labels must be equal-length and non-empty")
    bins = np.minimum((p * n_bins).astype(int), n_bins - 1)
    points = []
    empty = []
    for b in range(n_bins):
        mask = bins == b
        count = int(mask.sum())
        if count == 0:
            empty.append(b)
            continue
        points.append((float(p[mask].mean()), float(np.mean(y[mask] == rf.POSITIVE)), count))
    return CalibrationCurve(points, empty, n_bins)


def expected_calibration_error(p: np.ndarray, y: np.ndarray, n_bins: int = 5) -> float:
    """Count-weighted mean absolute gap between predicted and empirical rates."""
    curve = calibration_curve(p, y, n_bins)
    n = sum(c for _, _, c in curve.points)
    return float(sum(c * abs(mp - fp) for mp, fp, c in curve.points) / n)


def gate(m: CalibratedModel, p: float) -> GateDecision:
    """Map a calibrated probability to its confidence region.

    Boundary semantics: p == positive_above is still low confidence, while
    p == negative_at_or_below is already a confident negative.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p > m.gate.positive_above:
        return GateDecision.CONFIDENT_POSITIVE
    if p <= m.gate.negative_at_or_below:
        return GateDecision.CONFIDENT_NEGATIVE
    return GateDecision.LOW_CONFIDENCE
