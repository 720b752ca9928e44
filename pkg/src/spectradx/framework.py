"""Four-stage decision framework: prediction, probability gate, three
attribution checks, and the final validity verdict.

Stage 1 is the raw forest prediction, stage 2 the calibrated probability and
its confidence gate, stage 3 three checks that compare the sample's local
attribution against the model's global behaviour, and stage 4 a pure decision
table over the gate state and check pattern. Checks always run, even when the
gate already demands re-inspection, so reports stay complete.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import forest as rf
from .calibrate import CalibratedModel, GateDecision, calibrated_proba, gate
from .errors import AllZeroAttributions, EmptySummary, NameMismatch
from .explain import GlobalImportance, ShapExplanation, ShapMatrix, shap_values, value_quantiles


class FinalDecision(enum.Enum):
    VALID_TEST = "valid_test"
    RE_INSPECT = "re_inspect"
    RE_INSPECT_OR_VALID = "re_inspect_or_valid"


@dataclass(frozen=True)
class CheckConfig:
    """Quantitative thresholds behind the three qualitative checks."""

    k_local: int = 2
    k_global: int = 5
    central_mass: float = 0.8
    min_pass: int = 8
    value_quantile_band: tuple[float, float] = (0.1, 0.9)
    negligible_fraction: float = 0.05
    salience: float = 0.10
    agreement: float = 0.75
    dominant_opposition_share: float = 0.40

    def to_dict(self) -> dict:
        return {
            "k_local": self.k_local,
            "k_global": self.k_global,
            "central_mass": self.central_mass,
            "min_pass": self.min_pass,
            "value_quantile_band": list(self.value_quantile_band),
            "negligible_fraction": self.negligible_fraction,
            "salience": self.salience,
            "agreement": self.agreement,
            "dominant_opposition_share": self.dominant_opposition_share,
        }


@dataclass(frozen=True)
class CheckOutcome:
    check_id: str  # "check1" | "check2" | "check3"
    passed: bool
    evidence: dict

    def to_dict(self) -> dict:
        return {"check_id": self.check_id, "passed": self.passed, "evidence": self.evidence}


def _top_by_magnitude(names: tuple[str, ...], phi: np.ndarray, k: int) -> list[str]:
    order = np.argsort(-np.abs(phi), kind="stable")
    return [names[i] for i in order[:k]]


def check1(
    local: ShapExplanation,
    global_rank: GlobalImportance,
    k_local: int = 2,
    k_global: int = 5,
) -> CheckOutcome:
    """Do the sample's strongest attributions sit among the globally most
    important features?"""
    if tuple(local.feature_names) != tuple(global_rank.feature_names):
        raise NameMismatch("local and global feature names differ")
    global_top = list(global_rank.ranking[:k_global])
    if float(np.max(np.abs(local.phi))) == 0.0:
        return CheckOutcome(
            "check1",
            False,
            {
                "local_top": [],
                "global_top": global_top,
                "note": "no salient local features",
            },
        )
    local_top = _top_by_magnitude(local.feature_names, local.phi, k_local)
    passed = set(local_top).issubset(global_top)
    return CheckOutcome("check1", passed, {"local_top": local_top, "global_top": global_top})


def check2(
    local: ShapExplanation,
    summary: ShapMatrix,
    central_mass: float = 0.8,
    min_pass: int = 8,
    value_quantile_band: tuple[float, float] = (0.1, 0.9),
    negligible_fraction: float = 0.05,
) -> CheckOutcome:
    """Does the sample resemble the population majority, feature by feature?

    A feature conforms when its attribution lies inside the population's
    central attribution interval and its value sits away from the extreme
    quantiles; features with negligible attribution are exempt.
    """
    if len(summary) == 0:
        raise EmptySummary("population summary is empty")
    if tuple(local.feature_names) != tuple(summary.feature_names):
        raise NameMismatch("local and summary feature names differ")
    tail = (1.0 - central_mass) / 2.0
    max_abs_phi = float(np.max(np.abs(local.phi)))
    q_lo, q_hi = value_quantile_band
    per_feature = []
    n_pass = 0
    for f, name in enumerate(local.feature_names):
        phi = float(local.phi[f])
        phi_lo, phi_hi = np.quantile(summary.phi[:, f], [tail, 1.0 - tail])
        vq = float(value_quantiles(summary.values[:, f], local.feature_values[f])[0])
        negligible = abs(phi) < negligible_fraction * max_abs_phi
        central = bool(phi_lo <= phi <= phi_hi) and bool(q_lo <= vq <= q_hi)
        ok = negligible or central
        n_pass += ok
        per_feature.append(
            {
                "feature": name,
                "phi": phi,
                "phi_interval": [float(phi_lo), float(phi_hi)],
                "value_quantile": vq,
                "negligible": bool(negligible),
                "passed": bool(ok),
            }
        )
    return CheckOutcome(
        "check2",
        n_pass >= min_pass,
        {"per_feature": per_feature, "n_pass": int(n_pass), "min_pass": int(min_pass)},
    )


def check3(
    local: ShapExplanation,
    predicted: int,
    salience: float = 0.10,
    agreement: float = 0.75,
    dominant_opposition_share: float = 0.40,
) -> CheckOutcome:
    """Do the salient attributions agree on the predicted outcome?

    Positive attributions support a positive call and vice versa. The check
    fails outright when the single strongest feature opposes the prediction
    while carrying at least ``dominant_opposition_share`` of the total
    attribution mass, regardless of how the remaining features vote.
    """
    abs_phi = np.abs(local.phi)
    max_abs = float(abs_phi.max())
    if max_abs == 0.0:
        raise AllZeroAttributions("check3 needs at least one nonzero attribution")
    salient = np.flatnonzero(abs_phi >= salience * max_abs)
    wanted_sign = 1.0 if predicted == rf.POSITIVE else -1.0
    supporting = [int(i) for i in salient if np.sign(local.phi[i]) == wanted_sign]
    fraction = len(supporting) / salient.size

    top = int(np.argmax(abs_phi))  # first maximum on ties
    top_share = max_abs / float(abs_phi.sum())
    dominant_opposes = (
        np.sign(local.phi[top]) == -wanted_sign and top_share >= dominant_opposition_share
    )
    passed = fraction >= agreement and not dominant_opposes
    return CheckOutcome(
        "check3",
        bool(passed),
        {
            "salient": [local.feature_names[i] for i in salient],
            "supporting": [local.feature_names[i] for i in supporting],
            "agreement_fraction": float(fraction),
            "required_agreement": float(agreement),
            "dominant_feature": local.feature_names[top],
            "dominant_share": float(top_share),
            "dominant_opposes": bool(dominant_opposes),
        },
    )


def recompute_check(outcome: CheckOutcome) -> bool:
    """Re-derive a check verdict from its evidence record alone."""
    ev = outcome.evidence
    if outcome.check_id == "check1":
        if not ev["local_top"]:
            return False
        return set(ev["local_top"]).issubset(set(ev["global_top"]))
    if outcome.check_id == "check2":
        n_pass = sum(1 for rec in ev["per_feature"] if rec["passed"])
        return n_pass >= ev["min_pass"]
    if outcome.check_id == "check3":
        if ev["dominant_opposes"]:
            return False
        return ev["agreement_fraction"] >= ev["required_agreement"]
    raise ValueError(f"unknown check id {outcome.check_id!r}")


def decide(gate_decision: GateDecision, checks: tuple[CheckOutcome, ...]) -> FinalDecision:
    """The stage-4 decision table.

    Low confidence always re-inspects. A confident call with all checks
    passing is a valid test; a confident call failing only the first check
    may be valid pending review; any other failure pattern re-inspects.
    """
    if gate_decision is GateDecision.LOW_CONFIDENCE:
        return FinalDecision.RE_INSPECT
    pattern = tuple(c.passed for c in checks)
    if pattern == (True, True, True):
        return FinalDecision.VALID_TEST
    if pattern == (False, True, True):
        return FinalDecision.RE_INSPECT_OR_VALID
    return FinalDecision.RE_INSPECT


@dataclass(frozen=True)
class DiagnosisReport:
    sample_id: str
    stage1_prediction: int
    stage2_probability: float
    stage2_gate: GateDecision
    checks: tuple[CheckOutcome, CheckOutcome, CheckOutcome]
    final: FinalDecision
    explanation: ShapExplanation
    config: CheckConfig = field(default_factory=CheckConfig)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "stage1_prediction": "positive" if self.stage1_prediction == rf.POSITIVE else "negative",
            "stage2_probability": self.stage2_probability,
            "stage2_gate": self.stage2_gate.value,
            "checks": [c.to_dict() for c in self.checks],
            "final": self.final.value,
            "explanation": self.explanation.to_dict(),
            "check_config": self.config.to_dict(),
        }


def diagnose(
    x,
    m: CalibratedModel,
    global_rank: GlobalImportance,
    summary: ShapMatrix,
    background: np.ndarray,
    sample_id: str = "",
    config: CheckConfig = CheckConfig(),
) -> DiagnosisReport:
    """Run all four stages for one sample."""
    vec = np.asarray(getattr(x, "values", x), dtype=float)
    prediction = rf.predict(m.forest, vec)
    probability = calibrated_proba(m, vec)
    gate_decision = gate(m, probability)
    explanation = shap_values(m, vec, background, sample_id=sample_id)
    checks = (
        check1(explanation, global_rank, config.k_local, config.k_global),
        check2(
            explanation,
            summary,
            config.central_mass,
            config.min_pass,
            config.value_quantile_band,
            config.negligible_fraction,
        ),
        check3(
            explanation,
            prediction,
            config.salience,
            config.agreement,
            config.dominant_opposition_share,
        ),
    )
    return DiagnosisReport(
        sample_id=sample_id,
        stage1_prediction=prediction,
        stage2_probability=probability,
        stage2_gate=gate_decision,
        checks=checks,
        final=decide(gate_decision, checks),
        explanation=explanation,
        config=config,
    )
