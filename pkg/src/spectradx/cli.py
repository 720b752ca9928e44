"""Command-line front end: simulate | train | evaluate | explain | diagnose | ablate.

All configuration lives in JSON files plus flag overrides; no environment
variables, so the run manifest written next to every output captures the full
run state. Outputs are deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import forest as rf
from . import pipeline, synth, viz
from .calibrate import GateDecision, calibrated_proba_matrix, calibration_curve, expected_calibration_error, gate
from .errors import MissingArtifact, PipelineError, StageError
from .explain import (
    ShapMatrix,
    build_shap_matrix,
    global_shap_importance,
    impurity_importance,
    permutation_importance,
    shap_summary,
)
from .framework import diagnose
from .metrics import AblationConfig, run_ablation
from .spectra import load_spectrum

SUMMARY_ARTIFACT = "explain_summary.json"


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except PipelineError as exc:
        raise StageError(name, exc) from exc


def _write_importance(imp, out_dir: Path, stem: str) -> list[Path]:
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "score", "rank"])
        rank_of = {name: i + 1 for i, name in enumerate(imp.ranking)}
        for name, score in zip(imp.feature_names, imp.scores):
            writer.writerow([name, f"{score:.17g}", rank_of[name]])
    svg_path = out_dir / f"{stem}.svg"
    viz.write_svg(viz.importance_bar_svg(imp, title=imp.method), svg_path)
    return [csv_path, svg_path]


def _write_shap_tables(mat: ShapMatrix, out_dir: Path) -> list[Path]:
    matrix_path = out_dir / "shap_matrix.csv"
    with open(matrix_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "feature", "phi", "value", "quantile"])
        for i, sid in enumerate(mat.sample_ids):
            for f, name in enumerate(mat.feature_names):
                writer.writerow(
                    [sid, name, f"{mat.phi[i, f]:.17g}", f"{mat.values[i, f]:.17g}", f"{mat.quantiles[i, f]:.17g}"]
                )
    summary_path = out_dir / "shap_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "sample_id", "phi", "value", "quantile"])
        for name, sid, phi, value, quantile in shap_summary(mat):
            writer.writerow([name, sid, f"{phi:.17g}", f"{value:.17g}", f"{quantile:.17g}"])
    svg_path = out_dir / "shap_summary.svg"
    viz.write_svg(viz.shap_summary_svg(mat), svg_path)
    return [matrix_path, summary_path, svg_path]


def _gate_regions(model, probs: np.ndarray, y: np.ndarray) -> dict:
    regions = {d.value: {"positive": 0, "negative": 0} for d in GateDecision}
    for p, label in zip(probs, y):
        decision = gate(model, float(p))
        regions[decision.value]["positive" if label == rf.POSITIVE else "negative"] += 1
    return regions


def _eval_payload(model, X, y, idx, split_name: str) -> tuple[dict, list[tuple[float, float, int]]]:
    raw = rf.predict_proba_matrix(model.forest, X[idx])
    calibrated = calibrated_proba_matrix(model, X[idx])
    preds = rf.predict_matrix(model.forest, X[idx])
    from .metrics import evaluate  # local import to keep module load light

    report = evaluate(preds, y[idx], split=split_name)
    curve = calibration_curve(calibrated, y[idx], n_bins=5)
    payload = {
        "report": report.to_dict(),
        "ece_raw": expected_calibration_error(raw, y[idx], n_bins=5),
        "ece_calibrated": expected_calibration_error(calibrated, y[idx], n_bins=5),
        "calibration_empty_bins": curve.empty_bins,
        "gate_regions": _gate_regions(model, calibrated, y[idx]),
    }
    return payload, curve.points


def _write_ablation(rows, out_dir: Path) -> list[Path]:
    json_path = out_dir / "ablation.json"
    pipeline.write_json({"rows": [r.to_dict() for r in rows]}, json_path)
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["components", "accuracy", "macro_precision", "macro_recall", "macro_f1",
             "n_train", "n_test", "low_confidence"]
        )
        for row in rows:
            writer.writerow(
                ["+".join(row.components), f"{row.report.accuracy:.6f}",
                 f"{row.report.macro.precision:.6f}", f"{row.report.macro.recall:.6f}",
                 f"{row.report.macro.f1:.6f}", row.n_train, row.n_test, row.low_confidence]
            )
    return [csv_path, json_path]


# --- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError("simulate:config", PipelineError(f"cannot parse {args.config}: {exc}"))
        cfg = _stage("simulate:config", synth.GeneratorConfig.from_dict, raw)
    else:
        cfg = synth.GeneratorConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    manifest_path, truth_path = _stage("simulate:generate", synth.write_dataset, cfg, out_dir)
    outputs = {"manifest": manifest_path, "truth": truth_path}
    for rec in json.loads(manifest_path.read_text()):
        outputs[rec["path"]] = out_dir / rec["path"]
    run_manifest = pipeline.build_run_manifest(
        "simulate", None, {"generator": cfg.seed}, {}, outputs, extra={"generator_config": cfg.to_dict()}
    )
    pipeline.write_json(run_manifest, out_dir / "run_manifest.json")
    print(f"wrote {len(outputs) - 2} spectra, manifest, and truth log to {out_dir}")
    return 0


def _load_train_config(args) -> pipeline.PipelineConfig:
    config = _stage("train:config", pipeline.load_config, Path(args.config))
    if args.scheme:
        config = replace(config, scheme=args.scheme)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "grid", None):
        try:
            grid = json.loads(Path(args.grid).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError("train:config", PipelineError(f"cannot parse grid {args.grid}: {exc}"))
        config = replace(config, grid=grid)
    return config


def cmd_train(args) -> int:
    config = _load_train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = _stage("train:fit", pipeline.run_training, Path(args.manifest), config)

    model_path = out_dir / "model.json"
    pipeline.save_model(result, model_path)
    grid_path = out_dir / "grid_scores.json"
    pipeline.write_json({"table": result.grid_table, "winner": result.best_hp.to_dict()}, grid_path)

    run_manifest = pipeline.build_run_manifest(
        "train",
        config,
        {"pipeline": config.seed, "forest": result.best_hp.seed},
        {"manifest": Path(args.manifest)},
        {"model": model_path, "grid_scores": grid_path},
        extra={
            "outliers": result.removed,
            "outlier_sample_ids": [result.sample_ids[i] for i in result.removed],
            "chosen_hyperparameters": result.best_hp.to_dict(),
            "split": {
                "train_size": int(result.train_idx.size),
                "test_size": int(result.test_idx.size),
            },
        },
    )
    pipeline.write_json(run_manifest, out_dir / "run_manifest.json")
    print(
        f"trained on {result.train_idx.size} samples ({len(result.removed)} outliers removed); "
        f"model at {model_path}"
    )
    return 0


def cmd_evaluate(args) -> int:
    loaded = _stage("evaluate:load", pipeline.load_model, Path(args.model))
    _stage("evaluate:load", pipeline.check_scheme, loaded, args.scheme)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = _stage("evaluate:features", pipeline.reconstruct_split, Path(args.manifest), loaded.config)

    outputs: dict[str, Path] = {}
    for name, idx in (("train", split.train_idx), ("test", split.test_idx)):
        payload, points = _stage("evaluate:metrics", _eval_payload, loaded.model, split.X, split.y, idx, name)
        path = out_dir / f"eval_{name}.json"
        pipeline.write_json(payload, path)
        outputs[f"eval_{name}"] = path
        if name == "train":
            curve_csv = out_dir / "calibration_curve.csv"
            with open(curve_csv, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["mean_p", "frac_pos", "count"])
                for mp, fp, c in points:
                    writer.writerow([f"{mp:.17g}", f"{fp:.17g}", c])
            curve_svg = out_dir / "calibration_curve.svg"
            viz.write_svg(viz.calibration_curve_svg(points, title="train-split calibration"), curve_svg)
            outputs["calibration_curve_csv"] = curve_csv
            outputs["calibration_curve_svg"] = curve_svg

    if args.ablate:
        rows = _stage(
            "evaluate:ablate",
            run_ablation,
            split.X,
            split.y,
            AblationConfig(
                hyperparameters=loaded.model.forest.hyperparameters,
                gate=loaded.model.gate,
                test_fraction=loaded.config.test_fraction,
                contamination=loaded.config.contamination,
                iso_n_trees=loaded.config.iso_n_trees,
                iso_subsample=loaded.config.iso_subsample,
                split_seed=loaded.config.seed,
                iso_seed=loaded.config.seed,
            ),
            outlier_features=pipeline.outlier_view(split.X, loaded.config.scheme),
        )
        for p in _write_ablation(rows, out_dir):
            outputs[p.name] = p

    run_manifest = pipeline.build_run_manifest(
        "evaluate", loaded.config, {"pipeline": loaded.config.seed},
        {"manifest": Path(args.manifest), "model": Path(args.model)}, outputs,
    )
    pipeline.write_json(run_manifest, out_dir / "run_manifest.json")
    print(f"evaluation reports in {out_dir}")
    return 0


def cmd_explain(args) -> int:
    loaded = _stage("explain:load", pipeline.load_model, Path(args.model))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = _stage("explain:features", pipeline.reconstruct_split, Path(args.manifest), loaded.config)

    ifi = _stage("explain:ifi", impurity_importance, loaded.model.forest)
    pfi = _stage(
        "explain:pfi",
        permutation_importance,
        loaded.model.forest,
        split.X[split.test_idx],
        split.y[split.test_idx],
        loaded.config.pfi_repeats,
        loaded.config.seed,
    )
    kept = np.asarray(split.kept, dtype=np.int64)
    mat = _stage(
        "explain:shap",
        build_shap_matrix,
        loaded.model,
        split.X[kept],
        [split.sample_ids[i] for i in kept],
        loaded.background,
    )
    shap_imp = global_shap_importance(mat)

    outputs: dict[str, Path] = {}
    for imp, stem in ((ifi, "importance_ifi"), (pfi, "importance_pfi"), (shap_imp, "importance_shap")):
        for p in _write_importance(imp, out_dir, stem):
            outputs[p.name] = p
    for p in _write_shap_tables(mat, out_dir):
        outputs[p.name] = p

    summary_path = out_dir / SUMMARY_ARTIFACT
    pipeline.write_json(
        {
            "format_version": 1,
            "global_shap": {
                "feature_names": list(shap_imp.feature_names),
                "scores": shap_imp.scores.tolist(),
                "ranking": list(shap_imp.ranking),
            },
            "matrix": mat.to_dict(),
        },
        summary_path,
    )
    outputs[SUMMARY_ARTIFACT] = summary_path

    run_manifest = pipeline.build_run_manifest(
        "explain", loaded.config, {"pipeline": loaded.config.seed},
        {"manifest": Path(args.manifest), "model": Path(args.model)}, outputs,
    )
    pipeline.write_json(run_manifest, out_dir / "run_manifest.json")
    print(f"importance rankings and attribution tables in {out_dir}")
    return 0


def load_summary_artifact(path: Path):
    from .explain import GlobalImportance, _make_importance

    if not Path(path).is_file():
        raise MissingArtifact("summary")
    d = json.loads(Path(path).read_text())
    mat = ShapMatrix.from_dict(d["matrix"])
    g = d["global_shap"]
    imp = _make_importance("SHAP", tuple(g["feature_names"]), np.asarray(g["scores"], dtype=float))
    return imp, mat


def cmd_diagnose(args) -> int:
    loaded = _stage("diagnose:load", pipeline.load_model, Path(args.model))
    artifacts_dir = Path(args.artifacts) if args.artifacts else Path(args.model).parent
    global_imp, mat = _stage("diagnose:load", load_summary_artifact, artifacts_dir / SUMMARY_ARTIFACT)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs: dict[str, Path] = {}
    reports = []
    for spec_path in args.spectra:
        spectrum = _stage("diagnose:parse", load_spectrum, Path(spec_path))
        processed = _stage("diagnose:preprocess", pipeline.preprocess_spectrum, spectrum, loaded.config)
        from .features import extract_features

        fv = _stage(
            "diagnose:features",
            extract_features,
            processed,
            loaded.config.panel,
            loaded.config.scheme,
            loaded.config.bin_width,
        )
        report = _stage(
            "diagnose:framework",
            diagnose,
            fv.values,
            loaded.model,
            global_imp,
            mat,
            loaded.background,
            spectrum.sample_id,
            loaded.config.checks,
        )
        reports.append(report)
        report_path = out_dir / f"{spectrum.sample_id}.json"
        pipeline.write_json(report.to_dict(), report_path)
        svg_path = out_dir / f"{spectrum.sample_id}.svg"
        viz.write_svg(
            viz.local_explanation_svg(
                report.explanation,
                title=f"{spectrum.sample_id}: {report.final.value} (p={report.stage2_probability:.2f})",
            ),
            svg_path,
        )
        outputs[report_path.name] = report_path
        outputs[svg_path.name] = svg_path
        print(f"{spectrum.sample_id}: {report.final.value} (p={report.stage2_probability:.3f})")

    batch_path = out_dir / "diagnoses.jsonl"
    with open(batch_path, "w") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    outputs[batch_path.name] = batch_path

    run_manifest = pipeline.build_run_manifest(
        "diagnose", loaded.config, {"pipeline": loaded.config.seed},
        {"model": Path(args.model)}, outputs,
    )
    pipeline.write_json(run_manifest, out_dir / "run_manifest.json")
    return 0


def cmd_ablate(args) -> int:
    loaded = _stage("ablate:load", pipeline.load_model, Path(args.model))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = _stage("ablate:features", pipeline.reconstruct_split, Path(args.manifest), loaded.config)
    rows = _stage(
        "ablate:run",
        run_ablation,
        split.X,
        split.y,
        AblationConfig(
            hyperparameters=loaded.model.forest.hyperparameters,
            gate=loaded.model.gate,
            test_fraction=loaded.config.test_fraction,
            contamination=loaded.config.contamination,
            iso_n_trees=loaded.config.iso_n_trees,
            iso_subsample=loaded.config.iso_subsample,
            split_seed=loaded.config.seed,
            iso_seed=loaded.config.seed,
        ),
        outlier_features=pipeline.outlier_view(split.X, loaded.config.scheme),
    )
    outputs = {p.name: p for p in _write_ablation(rows, out_dir)}
    run_manifest = pipeline.build_run_manifest(
        "ablate", loaded.config, {"pipeline": loaded.config.seed},
        {"manifest": Path(args.manifest), "model": Path(args.model)}, outputs,
    )
    pipeline.write_json(run_manifest, out_dir / "run_manifest.json")
    for row in rows:
        print(f"{'+'.join(row.components)}: accuracy={row.report.accuracy:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectradx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic labelled corpus")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train and calibrate a model from a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True, help="pipeline config JSON (calibrant window!)")
    p.add_argument("--scheme", choices=["raw", "binned", "statistical", "auc", "ratio"])
    p.add_argument("--grid", help="hyperparameter lattice JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="train/test reports and calibration curve")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", choices=["raw", "binned", "statistical", "auc", "ratio"])
    p.add_argument("--ablate", action="store_true", help="also run the component ablation")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("explain", help="global importance rankings and attribution matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("diagnose", help="four-stage diagnosis reports for spectra")
    p.add_argument("--model", required=True)
    p.add_argument("--artifacts", help="directory holding explain outputs (default: model dir)")
    p.add_argument("--out", required=True)
    p.add_argument("spectra", nargs="+", help="spectrum text files")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("ablate", help="component ablation table")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error at {exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
