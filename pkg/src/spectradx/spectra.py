"""Spectrum ingestion, baseline correction, and calibrant normalization.

A spectrum is an ordered intensity-vs-m/z profile acquired in linear positive
mode over 2000-200000 m/z. All operations here are pure: they return new
:class:`MassSpectrum` values and never mutate their inputs, so spectra are
safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CalibrantOutOfRange,
    EmptyInput,
    IoFailure,
    MalformedRow,
    NegativeIntensity,
    WindowTooLarge,
    ZeroCalibrantPeak,
)

INSTRUMENT_MZ_LO = 2000.0
INSTRUMENT_MZ_HI = 200000.0


@dataclass(frozen=True)
class MzRange:
    """Closed m/z interval [lo, hi], typically one biomarker window."""

    lo: float
    hi: float
    name: str = ""

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"MzRange requires lo < hi, got [{self.lo}, {self.hi}]")

    def contains(self, mz: np.ndarray) -> np.ndarray:
        return (mz >= self.lo) & (mz <= self.hi)


@dataclass(frozen=True)
class MassSpectrum:
    """One sample's profile: parallel m/z and intensity arrays.

    Invariants enforced at construction: m/z strictly increasing, all
    intensities finite and non-negative, at least one point. Operations that
    need a minimum point count (baseline correction, integration) check it
    themselves.
    """

    sample_id: str
    mz: np.ndarray
    intensity: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        mz = np.asarray(self.mz, dtype=float)
        intensity = np.asarray(self.intensity, dtype=float)
        object.__setattr__(self, "mz", mz)
        object.__setattr__(self, "intensity", intensity)
        if mz.ndim != 1 or intensity.ndim != 1 or mz.size != intensity.size:
            raise ValueError("mz and intensity must be 1-d arrays of equal length")
        if mz.size == 0:
            raise EmptyInput("spectrum has no points")
        if not np.all(np.diff(mz) > 0):
            raise ValueError("mz values must be strictly increasing")
        if not np.all(np.isfinite(intensity)):
            raise ValueError("intensities must be finite")
        if np.any(intensity < 0):
            raise ValueError("intensities must be non-negative")

    def __len__(self) -> int:
        return int(self.mz.size)

    @property
    def points(self):
        """(mz, intensity) pairs in ascending m/z order."""
        return list(zip(self.mz.tolist(), self.intensity.tolist()))

    def with_intensity(self, intensity: np.ndarray) -> "MassSpectrum":
        return MassSpectrum(self.sample_id, self.mz, intensity, dict(self.metadata))


def parse_spectrum(text_record: str, sample_id: str) -> MassSpectrum:
    """Parse a two-column delimited table (comma or tab autodetected).

    Rows may arrive unsorted; duplicate m/z rows are merged by averaging
    their intensities. Lines starting with ``#`` and blank lines are skipped,
    but still count toward the 1-based line numbers reported in errors.
    """
    mzs: list[float] = []
    intensities: list[float] = []
    for lineno, raw in enumerate(text_record.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = line.split(",") if "," in line else line.split("\t")
        if len(cells) != 2:
            # fall back to whitespace split for space-delimited rows
            cells = line.split()
        if len(cells) != 2:
            raise MalformedRow(lineno, f"expected 2 columns, got {len(cells)}")
        try:
            mz = float(cells[0])
            inten = float(cells[1])
        except ValueError:
            raise MalformedRow(lineno, f"non-numeric cell in {line!r}") from None
        if not (np.isfinite(mz) and np.isfinite(inten)):
            raise MalformedRow(lineno, "non-finite value")
        if inten < 0:
            raise NegativeIntensity(lineno)
        mzs.append(mz)
        intensities.append(inten)
    if not mzs:
        raise EmptyInput("no data rows in spectrum record")

    mz_arr = np.array(mzs)
    int_arr = np.array(intensities)
    order = np.argsort(mz_arr, kind="stable")
    mz_arr = mz_arr[order]
    int_arr = int_arr[order]

    # merge duplicate m/z values by intensity mean
    uniq, inverse, counts = np.unique(mz_arr, return_inverse=True, return_counts=True)
    if uniq.size != mz_arr.size:
        sums = np.zeros(uniq.size)
        np.add.at(sums, inverse, int_arr)
        int_arr = sums / counts
        mz_arr = uniq
    return MassSpectrum(sample_id, mz_arr, int_arr)


def serialize_spectrum(s: MassSpectrum) -> str:
    """Render a spectrum as comma-delimited text, 12 significant digits."""
    lines = [f"{mz:.12g},{y:.12g}" for mz, y in zip(s.mz, s.intensity)]
    return "\n".join(lines) + "\n"


def _rolling_min(y: np.ndarray, half_window: int) -> np.ndarray:
    # windows truncate at the edges; replicate-padding is equivalent for a min
    pad = np.concatenate([np.full(half_window, np.inf), y, np.full(half_window, np.inf)])
    view = np.lib.stride_tricks.sliding_window_view(pad, 2 * half_window + 1)
    return view.min(axis=1)


def _rolling_mean(y: np.ndarray, half_window: int) -> np.ndarray:
    # truncated-window mean via prefix sums, exact at the edges
    n = y.size
    prefix = np.concatenate([[0.0], np.cumsum(y)])
    idx = np.arange(n)
    lo = np.maximum(idx - half_window, 0)
    hi = np.minimum(idx + half_window + 1, n)
    return (prefix[hi] - prefix[lo]) / (hi - lo)


def correct_baseline(s: MassSpectrum, half_window: int = 250) -> MassSpectrum:
    """Subtract a morphological baseline: rolling minimum, then rolling mean.

    Both passes use the same window of ``2 * half_window + 1`` points,
    truncated at the spectrum edges. The corrected intensities clamp at zero;
    negative ion counts are physically meaningless and destabilize the area
    ratios downstream.
    """
    if half_window < 1:
        raise WindowTooLarge(f"half_window must be >= 1, got {half_window}")
    if half_window >= len(s):
        raise WindowTooLarge(
            f"half_window {half_window} must be smaller than the spectrum length {len(s)}"
        )
    baseline = _rolling_mean(_rolling_min(s.intensity, half_window), half_window)
    corrected = np.maximum(s.intensity - baseline, 0.0)
    return s.with_intensity(corrected)


def normalize_to_calibrant(s: MassSpectrum, calibrant: MzRange) -> MassSpectrum:
    """Divide all intensities by the maximum intensity inside the calibrant window."""
    mask = calibrant.contains(s.mz)
    if not mask.any():
        raise CalibrantOutOfRange(
            f"calibrant window [{calibrant.lo}, {calibrant.hi}] contains no spectrum points"
        )
    peak = float(s.intensity[mask].max())
    if peak <= 0.0:
        raise ZeroCalibrantPeak(
            f"no positive intensity inside calibrant window [{calibrant.lo}, {calibrant.hi}]"
        )
    out = s.with_intensity(s.intensity / peak)
    out.metadata["calibrant_peak_intensity"] = peak
    return out


# --- dataset manifest ------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    path: str
    label: str | None  # "positive" | "negative" | None


def write_manifest(entries: list[ManifestEntry], path: Path) -> None:
    records = [
        {"sample_id": e.sample_id, "path": e.path, "label": e.label} for e in entries
    ]
    path.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Path) -> list[ManifestEntry]:
    try:
        records = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for rec in records:
        label = rec.get("label")
        if label not in ("positive", "negative", None):
            raise IoFailure(f"manifest label must be positive/negative/null, got {label!r}")
        entries.append(ManifestEntry(rec["sample_id"], rec["path"], label))
    return entries


def load_spectrum(path: Path, sample_id: str | None = None) -> MassSpectrum:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read spectrum {path}: {exc}") from exc
    return parse_spectrum(text, sample_id if sample_id is not None else Path(path).stem)
