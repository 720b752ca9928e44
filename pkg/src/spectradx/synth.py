"""Deterministic synthetic corpus generator.

Each spectrum is a sum of Gaussian protein peaks centred in the biomarker
windows, plus a calibrant peak, a linear baseline drift, and seeded noise on
a uniform m/z grid. Class signal is planted in ratios, not absolute heights:
every sample gets its own dilution and detector-gain factors, so only the
pairwise area ratios — chiefly the viral-to-host ratios R8 and R9 — separate
the classes. A configurable fraction of rows receive 5x height perturbations
on a random subset of biomarkers and are flagged as planted outliers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .features import DEFAULT_BIOMARKERS
from .spectra import ManifestEntry, MassSpectrum, MzRange, serialize_spectrum, write_manifest

SQRT_2PI = math.sqrt(2.0 * math.pi)

DEFAULT_CALIBRANT_WINDOW = MzRange(11000.0, 13000.0, "calibrant")


@dataclass(frozen=True)
class PeakSpec:
    """One biomarker peak: geometry plus per-class mean heights."""

    name: str
    center: float
    width: float
    height_negative: float
    height_positive: float
    height_sd: float = 0.18  # lognormal sigma on the height


def _default_peaks() -> tuple[PeakSpec, ...]:
    centers = {r.name: 0.5 * (r.lo + r.hi) for r in DEFAULT_BIOMARKERS}
    # viral peaks (B2, B3) rise with infection while the host peak B4 drops,
    # so R8 = B2/B4 and R9 = B3/B4 carry a doubled log-shift; the noisier
    # host peaks B0/B1 dilute the residual signal in the remaining ratios
    return (
        PeakSpec("B0", centers["B0"], 150.0, 1.00, 1.00, height_sd=0.35),
        PeakSpec("B1", centers["B1"], 350.0, 1.20, 1.20, height_sd=0.35),
        PeakSpec("B2", centers["B2"], 170.0, 0.35, 0.4494, height_sd=0.12),
        PeakSpec("B3", centers["B3"], 190.0, 0.30, 0.3852, height_sd=0.12),
        PeakSpec("B4", centers["B4"], 400.0, 1.10, 0.8566, height_sd=0.08),
    )


@dataclass(frozen=True)
class GeneratorConfig:
    n_positive: int = 60
    n_negative: int = 92
    seed: int = 0
    mz_lo: float = 2000.0
    mz_hi: float = 200000.0
    mz_step: float = 25.0
    # the rolling-minimum baseline rides ~3 sigma below the noise floor, so
    # window-integrated areas carry a pedestal of ~3 * noise_sd * window width;
    # keep noise small enough that this stays well under the class effect
    noise_sd: float = 0.002
    peaks: tuple[PeakSpec, ...] = field(default_factory=_default_peaks)
    calibrant_center: float = 12000.0
    calibrant_width: float = 120.0
    calibrant_height: float = 2.0
    baseline_drift: float = 0.05
    dilution_range: tuple[float, float] = (0.6, 1.8)
    gain_range: tuple[float, float] = (0.7, 1.5)
    outlier_fraction: float = 20.0 / 152.0
    outlier_multiplier: float = 5.0

    def __post_init__(self):
        if self.n_positive + self.n_negative < 4:
            raise InvalidConfig("need at least 4 samples in total")
        if self.n_positive < 0 or self.n_negative < 0:
            raise InvalidConfig("class counts must be non-negative")
        if self.mz_step <= 0 or self.mz_lo >= self.mz_hi:
            raise InvalidConfig("m/z grid is degenerate")
        if self.noise_sd < 0:
            raise InvalidConfig("noise_sd must be non-negative")
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise InvalidConfig("outlier_fraction must be in [0, 0.5)")

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "n_positive", "n_negative", "seed", "mz_lo", "mz_hi", "mz_step",
                "noise_sd", "calibrant_center", "calibrant_width", "calibrant_height",
                "baseline_drift", "outlier_fraction", "outlier_multiplier",
            )
        }
        d["dilution_range"] = list(self.dilution_range)
        d["gain_range"] = list(self.gain_range)
        d["peaks"] = [
            {
                "name": p.name, "center": p.center, "width": p.width,
                "height_negative": p.height_negative, "height_positive": p.height_positive,
                "height_sd": p.height_sd,
            }
            for p in self.peaks
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "peaks" in d:
            d["peaks"] = tuple(PeakSpec(**p) for p in d["peaks"])
        if "dilution_range" in d:
            d["dilution_range"] = tuple(d["dilution_range"])
        if "gain_range" in d:
            d["gain_range"] = tuple(d["gain_range"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


def gaussian_peak_area(height: float, width: float) -> float:
    """Closed-form area of a full Gaussian peak."""
    return height * width * SQRT_2PI


def generate_dataset(cfg: GeneratorConfig) -> tuple[list[tuple[MassSpectrum, str]], dict]:
    """Generate labelled spectra and the ground-truth parameter log.

    The log records, per sample, the effective height of every peak (class
    mean, lognormal height noise, dilution, and any outlier multiplier — the
    detector gain multiplies the whole trace including the calibrant), the
    drift endpoints, and the planted-outlier flag.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_negative + cfg.n_positive
    labels = ["negative"] * cfg.n_negative + ["positive"] * cfg.n_positive
    n_outliers = int(math.floor(cfg.outlier_fraction * n))
    # split planted rows as evenly as possible between the classes: balanced
    # labels keep the anomaly-marker regions impure, so depth-limited trees
    # cannot learn to "fix" the planted rows from their markers
    n_out_pos = min(n_outliers // 2, cfg.n_positive)
    n_out_neg = min(n_outliers - n_out_pos, cfg.n_negative)
    neg_rows = rng.choice(cfg.n_negative, size=n_out_neg, replace=False)
    pos_rows = cfg.n_negative + rng.choice(cfg.n_positive, size=n_out_pos, replace=False)
    outlier_rows = sorted(int(i) for i in np.concatenate([neg_rows, pos_rows]))
    outlier_set = set(outlier_rows)

    mz = np.arange(cfg.mz_lo, cfg.mz_hi + cfg.mz_step / 2.0, cfg.mz_step)
    t = (mz - cfg.mz_lo) / (cfg.mz_hi - cfg.mz_lo)

    spectra: list[tuple[MassSpectrum, str]] = []
    sample_logs: list[dict] = []
    n_peaks = len(cfg.peaks)
    for i, label in enumerate(labels):
        dilution = rng.uniform(*cfg.dilution_range)
        gain = rng.uniform(*cfg.gain_range)
        height_noise = np.exp(rng.normal(0.0, 1.0, size=n_peaks) * [p.height_sd for p in cfg.peaks])
        drift = cfg.baseline_drift * rng.uniform(0.0, 1.0, size=2)
        # A planted outlier models a mislabeled or badly processed specimen:
        # its class-bearing peaks (B2-B4) are drawn from the OTHER class's
        # distribution, so it sits inside the wrong class's bulk and defeats
        # the classifier, while one host peak gets a 5x (or 1/5x) height
        # perturbation - an anomaly on class-neutral ratio axes that the
        # isolation forest can see.
        pattern: dict[str, float] = {}
        flipped = i in outlier_set
        if flipped:
            up = cfg.outlier_multiplier
            pattern["B0"] = up if rng.integers(2) == 0 else 1.0 / up
            pattern["B1"] = up if rng.integers(2) == 0 else 1.0 / up

        heights = {}
        signal = np.zeros_like(mz)
        signature_positive = (label == "positive") != flipped
        for j, p in enumerate(cfg.peaks):
            base = p.height_positive if signature_positive else p.height_negative
            h = base * height_noise[j] * dilution * pattern.get(p.name, 1.0)
            heights[p.name] = float(h)
            signal += h * np.exp(-0.5 * ((mz - p.center) / p.width) ** 2)
        signal += cfg.calibrant_height * np.exp(
            -0.5 * ((mz - cfg.calibrant_center) / cfg.calibrant_width) ** 2
        )
        signal += drift[0] + (drift[1] - drift[0]) * t
        if cfg.noise_sd > 0:
            signal = signal + rng.normal(0.0, cfg.noise_sd, size=mz.size)
        intensity = gain * np.maximum(signal, 0.0)

        sample_id = f"s{i:04d}"
        spectra.append((MassSpectrum(sample_id, mz, intensity), label))
        sample_logs.append(
            {
                "sample_id": sample_id,
                "label": label,
                "dilution": float(dilution),
                "gain": float(gain),
                "heights": heights,
                "drift": [float(drift[0]), float(drift[1])],
                "outlier": flipped,
                "outlier_pattern": {k: float(v) for k, v in pattern.items()},
                "signature_flipped": flipped,
            }
        )

    truth = {
        "config": cfg.to_dict(),
        "outlier_rows": outlier_rows,
        "samples": sample_logs,
    }
    return spectra, truth


def write_dataset(cfg: GeneratorConfig, out_dir: Path) -> tuple[Path, Path]:
    """Write spectra files, the dataset manifest, and the ground-truth log.

    Returns (manifest_path, truth_path).
    """
    out_dir = Path(out_dir)
    spectra_dir = out_dir / "spectra"
    spectra_dir.mkdir(parents=True, exist_ok=True)
    corpus, truth = generate_dataset(cfg)
    entries = []
    for spectrum, label in corpus:
        rel = f"spectra/{spectrum.sample_id}.txt"
        (out_dir / rel).write_text(serialize_spectrum(spectrum))
        entries.append(ManifestEntry(spectrum.sample_id, rel, label))
    manifest_path = out_dir / "manifest.json"
    write_manifest(entries, manifest_path)
    truth_path = out_dir / "truth.json"
    truth_path.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return manifest_path, truth_path


def generate_shap_toy(
    n_features: int, seed: int, n_samples: int = 40
) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Small labelled tabular set for low-dimensional attribution oracles."""
    if not 1 <= n_features <= 5:
        raise InvalidConfig(f"toy generator supports 1..5 features, got {n_features}")
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.0, size=(n_samples, n_features))
    score = X[:, 0] if n_features == 1 else X[:, 0] + 0.5 * X[:, 1]
    y = (score > np.median(score)).astype(np.int64)  # median split keeps both classes
    return X, y, tuple(f"f{i}" for i in range(n_features))
