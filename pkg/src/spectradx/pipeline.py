"""End-to-end pipeline: preprocessing, feature extraction, outlier filtering,
split, model selection, calibration, and artifact persistence.

Every step is seeded from the run configuration, so a (dataset, config) pair
pins down the whole run: re-running produces byte-identical model files,
reports, and manifests. The configuration snapshot is embedded in the model
file, which lets evaluation and diagnosis reconstruct the exact
preprocessing and split without extra state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import forest as rf
from . import isoforest
from .calibrate import CalibratedModel, GateConfig, calibrate_forest
from .errors import ConfigParse, IoFailure, SchemeMismatch, SingleClassTraining
from .features import (
    SCHEMES,
    BiomarkerPanel,
    FeatureVector,
    extract_features,
    feature_matrix,
)
from .framework import CheckConfig
from .spectra import (
    INSTRUMENT_MZ_HI,
    INSTRUMENT_MZ_LO,
    ManifestEntry,
    MassSpectrum,
    MzRange,
    correct_baseline,
    load_spectrum,
    normalize_to_calibrant,
    read_manifest,
)

MODEL_FORMAT_VERSION = 1

DEFAULT_GRID = {
    "n_estimators": [50, 100, 200],
    "max_depth": [2, 3, 5],
    "min_samples_leaf": [1, 2],
}


@dataclass(frozen=True)
class PipelineConfig:
    """Full run configuration. The calibrant window has no default: it is the
    one instrument-specific quantity that must be declared."""

    calibrant_window: tuple[float, float]
    scheme: str = "ratio"
    bin_width: int | None = None
    baseline_half_window: int = 250
    panel: BiomarkerPanel = BiomarkerPanel()
    test_fraction: float = 0.3
    contamination: float = 20.0 / 152.0
    iso_n_trees: int = 100
    iso_subsample: int | None = None
    grid: dict = field(default_factory=lambda: dict(DEFAULT_GRID))
    cv_folds: int = 5
    seed: int = 0
    gate: GateConfig = GateConfig()
    background_cap: int = 100
    pfi_repeats: int = 1000
    checks: CheckConfig = CheckConfig()

    def __post_init__(self):
        lo, hi = self.calibrant_window
        if not lo < hi:
            raise ConfigParse(f"calibrant_window must satisfy lo < hi, got {self.calibrant_window}")
        if self.scheme not in SCHEMES:
            raise ConfigParse(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for r in self.panel.ranges:
            if r.lo < INSTRUMENT_MZ_LO or r.hi > INSTRUMENT_MZ_HI:
                raise ConfigParse(
                    f"panel window {r.name} [{r.lo}, {r.hi}] outside the instrument "
                    f"range [{INSTRUMENT_MZ_LO}, {INSTRUMENT_MZ_HI}]"
                )

    @property
    def calibrant(self) -> MzRange:
        return MzRange(self.calibrant_window[0], self.calibrant_window[1], "calibrant")

    def to_dict(self) -> dict:
        return {
            "calibrant_window": list(self.calibrant_window),
            "scheme": self.scheme,
            "bin_width": self.bin_width,
            "baseline_half_window": self.baseline_half_window,
            "panel": [{"name": r.name, "lo": r.lo, "hi": r.hi} for r in self.panel.ranges],
            "test_fraction": self.test_fraction,
            "contamination": self.contamination,
            "isolation": {"n_trees": self.iso_n_trees, "subsample": self.iso_subsample},
            "grid": self.grid,
            "cv_folds": self.cv_folds,
            "seed": self.seed,
            "gate": {
                "positive_above": self.gate.positive_above,
                "negative_at_or_below": self.gate.negative_at_or_below,
            },
            "background_cap": self.background_cap,
            "pfi_repeats": self.pfi_repeats,
            "checks": self.checks.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "calibrant_window" not in d:
            raise ConfigParse("missing required key 'calibrant_window'")
        kwargs: dict = {}
        try:
            kwargs["calibrant_window"] = tuple(float(v) for v in d.pop("calibrant_window"))
            if "panel" in d:
                kwargs["panel"] = BiomarkerPanel(
                    tuple(MzRange(p["lo"], p["hi"], p["name"]) for p in d.pop("panel"))
                )
            if "isolation" in d:
                iso = d.pop("isolation")
                kwargs["iso_n_trees"] = int(iso.get("n_trees", 100))
                sub = iso.get("subsample")
                kwargs["iso_subsample"] = None if sub is None else int(sub)
            if "gate" in d:
                g = d.pop("gate")
                kwargs["gate"] = GateConfig(
                    positive_above=g["positive_above"],
                    negative_at_or_below=g["negative_at_or_below"],
                )
            if "checks" in d:
                c = dict(d.pop("checks"))
                if "value_quantile_band" in c:
                    c["value_quantile_band"] = tuple(c["value_quantile_band"])
                kwargs["checks"] = CheckConfig(**c)
            known = {
                "scheme", "bin_width", "baseline_half_window", "test_fraction",
                "contamination", "grid", "cv_folds", "seed", "background_cap", "pfi_repeats",
            }
            for key, value in d.items():
                if key not in known:
                    raise ConfigParse(f"unknown config key {key!r}")
                kwargs[key] = value
            return cls(**kwargs)
        except ConfigParse:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigParse(f"invalid config value: {exc}") from exc


def load_config(path: Path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParse(f"cannot parse config {path}: {exc}") from exc
    return PipelineConfig.from_dict(raw)


# --- dataset loading ---------------------------------------------------------

def preprocess_spectrum(s: MassSpectrum, config: PipelineConfig) -> MassSpectrum:
    return normalize_to_calibrant(
        correct_baseline(s, config.baseline_half_window), config.calibrant
    )


def load_features(
    manifest_path: Path, config: PipelineConfig, require_labels: bool = True
) -> list[FeatureVector]:
    manifest_path = Path(manifest_path)
    entries = read_manifest(manifest_path)
    if not entries:
        raise IoFailure(f"dataset manifest {manifest_path} is empty")
    vectors = []
    for entry in entries:
        if require_labels and entry.label is None:
            raise IoFailure(f"sample {entry.sample_id} has no label; training needs labels")
        spectrum = load_spectrum(manifest_path.parent / entry.path, entry.sample_id)
        processed = preprocess_spectrum(spectrum, config)
        vectors.append(
            extract_features(processed, config.panel, config.scheme, config.bin_width, entry.label)
        )
    return vectors


# --- training ----------------------------------------------------------------

@dataclass
class TrainResult:
    model: CalibratedModel
    config: PipelineConfig
    feature_names: tuple[str, ...]
    sample_ids: list[str]
    X: np.ndarray
    y: np.ndarray
    kept: list[int]
    removed: list[int]
    train_idx: np.ndarray  # indices into the full corpus
    test_idx: np.ndarray
    best_hp: rf.Hyperparameters
    grid_table: list[dict]
    background: np.ndarray


def outlier_view(X: np.ndarray, scheme: str) -> np.ndarray:
    """Feature view used for outlier filtering.

    Ratio and area features are strictly positive and multiplicative, so the
    isolation forest sees their logs: a 5x and a 1/5x perturbation are then
    equally far from the bulk, where on the raw scale the low side compresses
    toward zero and hides.
    """
    if scheme in ("ratio", "auc"):
        return np.log(X)
    return X


def _split_filtered(
    y: np.ndarray, kept: list[int], config: PipelineConfig
) -> tuple[np.ndarray, np.ndarray]:
    kept_arr = np.asarray(kept, dtype=np.int64)
    train_local, test_local = rf.stratified_split(y[kept_arr], config.test_fraction, config.seed)
    return kept_arr[train_local], kept_arr[test_local]


def run_training(manifest_path: Path, config: PipelineConfig) -> TrainResult:
    """Preprocess, filter outliers over the full corpus, split, grid-search,
    fit, and calibrate.

    The isolation forest sees the whole labelled corpus (it is unsupervised),
    and flagged rows are dropped before the stratified split, so both the
    train and test sides are outlier-free.
    """
    vectors = load_features(manifest_path, config, require_labels=True)
    X, y, names, sample_ids = feature_matrix(vectors)
    if np.unique(y).size < 2:
        raise SingleClassTraining("corpus holds a single class")

    kept, removed = isoforest.filter_outliers(
        outlier_view(X, config.scheme),
        contamination=config.contamination,
        n_trees=config.iso_n_trees,
        subsample_size=config.iso_subsample,
        seed=config.seed,
    )
    train_idx, test_idx = _split_filtered(y, kept, config)

    base_hp = rf.Hyperparameters(seed=config.seed)
    best_hp, table = rf.grid_search_cv(
        X[train_idx], y[train_idx], config.grid, k=config.cv_folds, seed=config.seed, base=base_hp
    )
    model = rf.fit_forest(X[train_idx], y[train_idx], best_hp, names)
    calibrated = calibrate_forest(model, X[train_idx], y[train_idx], config.gate)

    rng = np.random.default_rng(config.seed)
    if train_idx.size > config.background_cap:
        pick = np.sort(rng.choice(train_idx.size, size=config.background_cap, replace=False))
        background = X[train_idx[pick]]
    else:
        background = X[train_idx]

    return TrainResult(
        model=calibrated,
        config=config,
        feature_names=names,
        sample_ids=sample_ids,
        X=X,
        y=y,
        kept=kept,
        removed=removed,
        train_idx=train_idx,
        test_idx=test_idx,
        best_hp=best_hp,
        grid_table=table,
        background=background,
    )


# --- model persistence ---------------------------------------------------------

def model_to_dict(result_model: CalibratedModel, config: PipelineConfig, background: np.ndarray) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "package_version": __version__,
        "pipeline_config": config.to_dict(),
        "forest": rf.forest_to_dict(result_model.forest),
        "platt": {"a": result_model.platt_a, "b": result_model.platt_b},
        "gate": {
            "positive_above": result_model.gate.positive_above,
            "negative_at_or_below": result_model.gate.negative_at_or_below,
        },
        "background": np.asarray(background, dtype=float).tolist(),
    }


def save_model(result: TrainResult, path: Path) -> None:
    payload = model_to_dict(result.model, result.config, result.background)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclass
class LoadedModel:
    model: CalibratedModel
    config: PipelineConfig
    background: np.ndarray

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.model.forest.feature_names


def load_model(path: Path) -> LoadedModel:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read model {path}: {exc}") from exc
    version = d.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise IoFailure(f"unsupported model format_version {version!r}")
    forest_model = rf.forest_from_dict(d["forest"])
    config = PipelineConfig.from_dict(d["pipeline_config"])
    gate = GateConfig(
        positive_above=d["gate"]["positive_above"],
        negative_at_or_below=d["gate"]["negative_at_or_below"],
    )
    model = CalibratedModel(forest_model, d["platt"]["a"], d["platt"]["b"], gate)
    return LoadedModel(model, config, np.asarray(d["background"], dtype=float))


def check_scheme(loaded: LoadedModel, scheme: str | None) -> None:
    if scheme is not None and scheme != loaded.config.scheme:
        raise SchemeMismatch(
            f"model was trained with scheme {loaded.config.scheme!r}, requested {scheme!r}"
        )


# --- evaluation-side reconstruction ---------------------------------------------

@dataclass
class DatasetSplit:
    X: np.ndarray
    y: np.ndarray
    sample_ids: list[str]
    kept: list[int]
    removed: list[int]
    train_idx: np.ndarray
    test_idx: np.ndarray


def reconstruct_split(manifest_path: Path, config: PipelineConfig) -> DatasetSplit:
    """Recompute the exact filtered split a training run used; deterministic
    because every stochastic step derives from the config seed."""
    vectors = load_features(manifest_path, config, require_labels=True)
    X, y, _, sample_ids = feature_matrix(vectors)
    kept, removed = isoforest.filter_outliers(
        outlier_view(X, config.scheme),
        contamination=config.contamination,
        n_trees=config.iso_n_trees,
        subsample_size=config.iso_subsample,
        seed=config.seed,
    )
    train_idx, test_idx = _split_filtered(y, kept, config)
    return DatasetSplit(X, y, sample_ids, kept, removed, train_idx, test_idx)


# --- run manifest ----------------------------------------------------------------

def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_run_manifest(
    command: str,
    config: PipelineConfig | None,
    seeds: dict,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
    extra: dict | None = None,
) -> dict:
    manifest = {
        "command": command,
        "package_version": __version__,
        "model_format_version": MODEL_FORMAT_VERSION,
        "forest_format_version": rf.FOREST_FORMAT_VERSION,
        "config": config.to_dict() if config is not None else None,
        "seeds": seeds,
        "inputs": {name: file_digest(p) for name, p in sorted(inputs.items())},
        "outputs": {name: file_digest(p) for name, p in sorted(outputs.items())},
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_json(payload: dict, path: Path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
