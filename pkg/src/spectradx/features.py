"""Feature extraction: biomarker windows to candidate feature schemes.

Five fixed biomarker windows (B0-B4) are integrated and combined. The
pairwise area ratios R0-R9 are the production scheme: they cancel the global
intensity scale of a sample, so protein abundance differences survive while
dilution and instrument gain do not. Raw, binned, statistical, and plain-area
schemes are also provided; one scheme is used at a time, never concatenated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BinTooWide, EmptyRange, NonuniformGrid, ZeroDenominatorAuc
from .spectra import MassSpectrum, MzRange

SCHEMES = ("raw", "binned", "statistical", "auc", "ratio")

DEFAULT_BIOMARKERS = (
    MzRange(27900.0, 29400.0, "B0"),   # human protein 1
    MzRange(55500.0, 59000.0, "B1"),   # human protein 2
    MzRange(66400.0, 68100.0, "B2"),   # viral protein 1
    MzRange(78600.0, 80500.0, "B3"),   # viral protein 2
    MzRange(111500.0, 115500.0, "B4"),  # human protein 3
)

# ratio index -> (numerator window, denominator window)
RATIO_PAIRS = (
    (0, 1), (0, 2), (0, 3), (0, 4),
    (1, 2), (1, 3), (1, 4),
    (2, 3), (2, 4),
    (3, 4),
)
RATIO_NAMES = tuple(f"R{i}" for i in range(len(RATIO_PAIRS)))

_STAT_NAMES = ("min", "max", "std", "var", "skew", "kurt", "n_peaks")


@dataclass(frozen=True)
class BiomarkerPanel:
    """Exactly five named biomarker windows."""

    ranges: tuple[MzRange, ...] = DEFAULT_BIOMARKERS

    def __post_init__(self):
        if len(self.ranges) != 5:
            raise ValueError(f"panel requires exactly 5 ranges, got {len(self.ranges)}")
        names = [r.name for r in self.ranges]
        if len(set(names)) != 5:
            raise ValueError(f"panel range names must be unique, got {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.ranges)


@dataclass(frozen=True)
class FeatureVector:
    """Named numeric features for one sample plus its optional label."""

    sample_id: str
    scheme: str
    names: tuple[str, ...]
    values: np.ndarray
    label: str | None = None  # "positive" | "negative" | None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if len(self.names) != values.size:
            raise ValueError("names and values must have the same length")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        if self.scheme == "ratio" and self.names != RATIO_NAMES:
            raise ValueError(f"ratio scheme requires features {RATIO_NAMES}")
        if self.scheme == "statistical" and len(self.names) != 35:
            raise ValueError("statistical scheme requires exactly 35 features")
        if self.scheme == "auc" and len(self.names) != 5:
            raise ValueError("auc scheme requires exactly 5 features")
        if self.label not in ("positive", "negative", None):
            raise ValueError(f"label must be positive/negative/None, got {self.label!r}")

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


def _window(s: MassSpectrum, r: MzRange, min_points: int) -> tuple[np.ndarray, np.ndarray]:
    mask = r.contains(s.mz)
    if mask.sum() < min_points:
        raise EmptyRange(
            f"range {r.name or (r.lo, r.hi)} holds {int(mask.sum())} points, needs {min_points}"
        )
    return s.mz[mask], s.intensity[mask]


def auc(s: MassSpectrum, r: MzRange) -> float:
    """Trapezoidal area of intensity over the points inside [r.lo, r.hi].

    The trapezoid rule is exact for piecewise-linear signals, which is what a
    profile spectrum is between sampled points.
    """
    mz, y = _window(s, r, min_points=2)
    dx = np.diff(mz)
    return float(np.sum(dx * (y[:-1] + y[1:]) * 0.5))


def panel_aucs(s: MassSpectrum, panel: BiomarkerPanel) -> np.ndarray:
    return np.array([auc(s, r) for r in panel.ranges])


def auc_features(s: MassSpectrum, panel: BiomarkerPanel) -> FeatureVector:
    return FeatureVector(s.sample_id, "auc", panel.names, panel_aucs(s, panel))


def ratio_features(s: MassSpectrum, panel: BiomarkerPanel) -> FeatureVector:
    """The ten pairwise area ratios R0-R9.

    R0=B0/B1, R1=B0/B2, R2=B0/B3, R3=B0/B4, R4=B1/B2, R5=B1/B3, R6=B1/B4,
    R7=B2/B3, R8=B2/B4, R9=B3/B4.
    """
    areas = panel_aucs(s, panel)
    for i, a in enumerate(areas):
        if a <= 0.0:
            raise ZeroDenominatorAuc(panel.ranges[i].name)
    values = np.array([areas[num] / areas[den] for num, den in RATIO_PAIRS])
    return FeatureVector(s.sample_id, "ratio", RATIO_NAMES, values)


def _range_stats(mz: np.ndarray, y: np.ndarray) -> list[float]:
    m = float(np.mean(y))
    centered = y - m
    m2 = float(np.mean(centered**2))
    std = float(np.sqrt(m2))
    if m2 > 0.0:
        skew = float(np.mean(centered**3)) / m2**1.5
        kurt = float(np.mean(centered**4)) / m2**2 - 3.0  # excess kurtosis
    else:
        skew = 0.0
        kurt = 0.0
    median = float(np.median(y))
    interior = y[1:-1]
    peaks = (interior > y[:-2]) & (interior > y[2:]) & (interior > median)
    return [float(y.min()), float(y.max()), std, m2, skew, kurt, float(peaks.sum())]


def statistical_features(s: MassSpectrum, panel: BiomarkerPanel) -> FeatureVector:
    """Seven summary statistics per window: min, max, std, variance,
    skewness, excess kurtosis, and peak count (strict local maxima above the
    window's median intensity)."""
    names: list[str] = []
    values: list[float] = []
    for r in panel.ranges:
        mz, y = _window(s, r, min_points=3)
        names.extend(f"{r.name}_{stat}" for stat in _STAT_NAMES)
        values.extend(_range_stats(mz, y))
    return FeatureVector(s.sample_id, "statistical", tuple(names), np.array(values))


def raw_features(
    s: MassSpectrum, panel: BiomarkerPanel, bin_width: int | None = None
) -> FeatureVector:
    """Concatenated window intensities, optionally averaged in consecutive bins.

    Requires a uniform m/z grid across all panel windows. A trailing group
    shorter than ``bin_width`` is averaged over its actual size.
    """
    steps: list[np.ndarray] = []
    windows: list[tuple[str, np.ndarray]] = []
    for r in panel.ranges:
        mz, y = _window(s, r, min_points=2)
        steps.append(np.diff(mz))
        windows.append((r.name, y))
    all_steps = np.concatenate(steps)
    ref = all_steps[0]
    if not np.allclose(all_steps, ref, rtol=1e-6, atol=0.0):
        raise NonuniformGrid("panel windows are not sampled on a uniform m/z grid")

    names: list[str] = []
    values: list[float] = []
    if bin_width is None:
        for name, y in windows:
            names.extend(f"{name}_{i:04d}" for i in range(y.size))
            values.extend(y.tolist())
        return FeatureVector(s.sample_id, "raw", tuple(names), np.array(values))

    if bin_width < 1:
        raise BinTooWide(f"bin_width must be >= 1, got {bin_width}")
    for name, y in windows:
        if bin_width > y.size:
            raise BinTooWide(
                f"bin_width {bin_width} exceeds the {y.size} points of window {name}"
            )
        for i, start in enumerate(range(0, y.size, bin_width)):
            names.append(f"{name}_b{i:03d}")
            values.append(float(np.mean(y[start : start + bin_width])))
    return FeatureVector(s.sample_id, "binned", tuple(names), np.array(values))


def extract_features(
    s: MassSpectrum,
    panel: BiomarkerPanel,
    scheme: str,
    bin_width: int | None = None,
    label: str | None = None,
) -> FeatureVector:
    if scheme == "ratio":
        fv = ratio_features(s, panel)
    elif scheme == "auc":
        fv = auc_features(s, panel)
    elif scheme == "statistical":
        fv = statistical_features(s, panel)
    elif scheme == "raw":
        fv = raw_features(s, panel, None)
    elif scheme == "binned":
        fv = raw_features(s, panel, bin_width if bin_width is not None else 50)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if label is None:
        return fv
    return FeatureVector(fv.sample_id, fv.scheme, fv.names, fv.values, label)


# --- dataset-level helpers --------------------------------------------------

def feature_matrix(vectors: list[FeatureVector]) -> tuple[np.ndarray, np.ndarray, tuple[str, ...], list[str]]:
    """Stack vectors into (X, y, names, sample_ids); y uses 1=positive, 0=negative."""
    if not vectors:
        raise EmptyRange("no feature vectors")
    names = vectors[0].names
    for v in vectors:
        if v.names != names:
            raise NonuniformGrid("feature vectors carry inconsistent feature names")
    X = np.stack([v.values for v in vectors])
    y = np.array([1 if v.label == "positive" else 0 for v in vectors])
    return X, y, names, [v.sample_id for v in vectors]


def write_features_csv(vectors: list[FeatureVector], path: Path) -> None:
    names = vectors[0].names if vectors else ()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label", *names])
        for v in vectors:
            writer.writerow([v.sample_id, v.label or "", *[f"{x:.17g}" for x in v.values]])


def read_features_csv(path: Path, scheme: str) -> list[FeatureVector]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[2:])
        out = []
        for row in reader:
            label = row[1] or None
            values = np.array([float(x) for x in row[2:]])
            out.append(FeatureVector(row[0], scheme, names, values, label))
    return out
