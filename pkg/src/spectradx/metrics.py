"""Evaluation reports and the component-ablation experiment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import forest as rf
from . import isoforest
from .calibrate import GateConfig, GateDecision, calibrate_forest, calibrated_proba_matrix, gate
from .errors import LengthMismatch


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts plus per-class and macro precision/recall/F1."""

    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    positive: ClassMetrics
    negative: ClassMetrics
    macro: ClassMetrics
    split: str = ""
    warnings: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "accuracy": self.accuracy,
            "per_class": {"positive": self.positive.to_dict(), "negative": self.negative.to_dict()},
            "macro": self.macro.to_dict(),
            "warnings": list(self.warnings),
        }


def _safe_ratio(num: int, den: int, what: str, warnings: list[str]) -> float:
    if den == 0:
        warnings.append(f"zero denominator for {what}; reported as 0")
        return 0.0
    return num / den


def evaluate(predictions, labels, split: str = "") -> EvalReport:
    """Confusion matrix and macro metrics; degenerate denominators score 0
    and raise a warning flag instead of an error."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise LengthMismatch(
            f"predictions {predictions.shape} and labels {labels.shape} must be equal-length and non-empty"
        )
    tp = int(np.sum((predictions == rf.POSITIVE) & (labels == rf.POSITIVE)))
    fp = int(np.sum((predictions == rf.POSITIVE) & (labels == rf.NEGATIVE)))
    fn = int(np.sum((predictions == rf.NEGATIVE) & (labels == rf.POSITIVE)))
    tn = int(np.sum((predictions == rf.NEGATIVE) & (labels == rf.NEGATIVE)))

    warnings: list[str] = []
    prec_pos = _safe_ratio(tp, tp + fp, "positive precision", warnings)
    rec_pos = _safe_ratio(tp, tp + fn, "positive recall", warnings)
    prec_neg = _safe_ratio(tn, tn + fn, "negative precision", warnings)
    rec_neg = _safe_ratio(tn, tn + fp, "negative recall", warnings)

    def f1(p: float, r: float) -> float:
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    pos = ClassMetrics(prec_pos, rec_pos, f1(prec_pos, rec_pos))
    neg = ClassMetrics(prec_neg, rec_neg, f1(prec_neg, rec_neg))
    macro = ClassMetrics(
        (pos.precision + neg.precision) / 2,
        (pos.recall + neg.recall) / 2,
        (pos.f1 + neg.f1) / 2,
    )
    return EvalReport(
        tp, fp, fn, tn,
        accuracy=(tp + tn) / predictions.size,
        positive=pos, negative=neg, macro=macro,
        split=split, warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class AblationConfig:
    hyperparameters: rf.Hyperparameters = rf.Hyperparameters()
    gate: GateConfig = GateConfig()
    test_fraction: float = 0.3
    contamination: float = 20.0 / 152.0
    iso_n_trees: int = 100
    iso_subsample: int | None = None
    split_seed: int = 0
    iso_seed: int = 0


@dataclass(frozen=True)
class AblationRow:
    components: tuple[str, ...]
    report: EvalReport
    low_confidence: int = 0
    n_train: int = 0
    n_test: int = 0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "components": list(self.components),
            "report": self.report.to_dict(),
            "low_confidence": self.low_confidence,
            "n_train": self.n_train,
            "n_test": self.n_test,
            **self.extras,
        }


def run_ablation(
    X: np.ndarray,
    y: np.ndarray,
    config: AblationConfig = AblationConfig(),
    outlier_features: np.ndarray | None = None,
) -> list[AblationRow]:
    """Three pipeline variants on one shared stratified split.

    Row 1 trains the bare forest; row 2 first drops isolation-forest outliers
    from both sides of the split; row 3 additionally calibrates and applies
    the probability gate, scoring only gate-confident test samples and
    reporting the excluded low-confidence count. All rows share the same
    hyperparameters; the accuracy denominator of the gated row excludes the
    low-confidence samples, which is exactly how the gate trades coverage for
    accuracy. ``outlier_features`` optionally supplies a different feature
    view for the filtering step (e.g. log-ratios); the models always train on
    ``X`` itself.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if outlier_features is None:
        outlier_features = X
    train_idx, test_idx = rf.stratified_split(y, config.test_fraction, config.split_seed)

    rows: list[AblationRow] = []

    # row 1: forest only
    model = rf.fit_forest(X[train_idx], y[train_idx], config.hyperparameters)
    preds = rf.predict_matrix(model, X[test_idx])
    rows.append(
        AblationRow(
            ("rf",),
            evaluate(preds, y[test_idx], split="test"),
            n_train=train_idx.size,
            n_test=test_idx.size,
        )
    )

    # row 2: outlier filtering on the full corpus, removed from both splits
    kept, removed = isoforest.filter_outliers(
        outlier_features,
        contamination=config.contamination,
        n_trees=config.iso_n_trees,
        subsample_size=config.iso_subsample,
        seed=config.iso_seed,
    )
    kept_set = set(kept)
    train_f = np.array([i for i in train_idx if i in kept_set], dtype=np.int64)
    test_f = np.array([i for i in test_idx if i in kept_set], dtype=np.int64)
    model_f = rf.fit_forest(X[train_f], y[train_f], config.hyperparameters)
    preds_f = rf.predict_matrix(model_f, X[test_f])
    rows.append(
        AblationRow(
            ("rf", "outlier_filter"),
            evaluate(preds_f, y[test_f], split="test"),
            n_train=train_f.size,
            n_test=test_f.size,
            extras={"outliers_removed": [int(i) for i in removed]},
        )
    )

    # row 3: calibrated forest plus probability gate on the filtered split
    calibrated = calibrate_forest(model_f, X[train_f], y[train_f], config.gate)
    probs = calibrated_proba_matrix(calibrated, X[test_f])
    decisions = [gate(calibrated, float(p)) for p in probs]
    confident = np.array([d is not GateDecision.LOW_CONFIDENCE for d in decisions])
    gated_preds = np.array(
        [rf.POSITIVE if d is GateDecision.CONFIDENT_POSITIVE else rf.NEGATIVE for d in decisions]
    )
    n_low = int(np.sum(~confident))
    if confident.any():
        report = evaluate(gated_preds[confident], y[test_f][confident], split="test-gated")
    else:
        report = EvalReport(
            0, 0, 0, 0, 0.0,
            ClassMetrics(0.0, 0.0, 0.0), ClassMetrics(0.0, 0.0, 0.0), ClassMetrics(0.0, 0.0, 0.0),
            split="test-gated", warnings=("no gate-confident samples",),
        )
    rows.append(
        AblationRow(
            ("rf", "outlier_filter", "calibration", "gate"),
            report,
            low_confidence=n_low,
            n_train=train_f.size,
            n_test=test_f.size,
            extras={"outliers_removed": [int(i) for i in removed]},
        )
    )
    return rows
