"""Command-line interface.

Subcommands mirror the pipeline stages so each can run standalone from the
previous stage's files: segment, resolve, features, grade, evaluate,
agreement, synth, and run (the whole chain over a manifest).

Exit codes: 0 success, 1 bad configuration/arguments, 2 when more than 10%
of manifest entries fail.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from cadas.config import ConfigError, PipelineConfig
from cadas.features import read_features_csv, write_features_csv, build_feature_vector
from cadas.grading import TrainingSet, wknn_classify
from cadas.model import Grade, SepImage, load_annotation
from cadas.overlap import resolve_cells, write_cells_csv
from cadas.pipeline import (
    PipelineError,
    _build_report,
    _cross_validated_predictions,
    _write_predictions,
    format_agreement,
    format_report,
    load_manifest,
    rater_agreement,
    run,
    segment_image,
)
from cadas.segmentation import BinaryMask
from cadas.synth import SynthSpec, generate, write_sample


def _load_config(path: Optional[str], slic_distance: Optional[str] = None) -> PipelineConfig:
    config = PipelineConfig() if path is None else PipelineConfig.from_file(path)
    if slic_distance:
        config = dataclasses.replace(
            config, slic=dataclasses.replace(config.slic, distance=slic_distance)
        )
    return config


def _cmd_segment(args) -> int:
    config = _load_config(args.config, args.slic_distance)
    img = SepImage.from_file(args.image)
    mask = segment_image(img, config)
    mask.save(args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_resolve(args) -> int:
    config = _load_config(args.config)
    mask = BinaryMask.from_file(args.mask)
    cells = resolve_cells(
        mask,
        r=config.overlap.r,
        scale=config.overlap.scale,
        em_tol=config.overlap.em_tol,
        em_max_iter=config.overlap.em_max_iter,
        alpha_cap=config.overlap.alpha_cap,
    )
    sep_id = args.sep_id or Path(args.mask).stem
    write_cells_csv(cells, sep_id, args.out)
    print(f"wrote {args.out} ({len(cells)} cells)")
    return 0


def _cmd_features(args) -> int:
    config = _load_config(args.config)
    img = SepImage.from_file(args.image, sep_id=args.sep_id)
    annotation = load_annotation(args.annotation, width=img.width, height=img.height)
    mask = BinaryMask.from_file(args.mask)
    cells = resolve_cells(
        mask,
        r=config.overlap.r,
        scale=config.overlap.scale,
        em_tol=config.overlap.em_tol,
        em_max_iter=config.overlap.em_max_iter,
        alpha_cap=config.overlap.alpha_cap,
    )
    label = Grade.parse(args.label) if args.label else None
    fv = build_feature_vector(img, annotation, cells, mask, label=label)
    write_features_csv([fv], args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_grade(args) -> int:
    config = _load_config(args.config)
    vectors = read_features_csv(args.features)
    labeled = [v for v in vectors if v.label is not None]
    if len(labeled) < max(2, config.evaluation.n_folds):
        print("not enough labeled vectors for cross-validated grading", file=sys.stderr)
        return 1
    predictions = _cross_validated_predictions(labeled, config)
    unlabeled = [v for v in vectors if v.label is None]
    tset = None
    if unlabeled:
        tset = TrainingSet.fit(labeled)
        k = min(config.grading.k, len(tset))
        for fv in unlabeled:
            result = wknn_classify(fv, tset, k=k)
            predictions.append((fv.sep_id, None, result.predicted))
    if args.model_out:
        # model file = training CSV + normalizer JSON sidecar
        tset = tset or TrainingSet.fit(labeled)
        write_features_csv(labeled, f"{args.model_out}.csv")
        tset.normalizer.save(f"{args.model_out}.normalizer.json")
    _write_predictions(predictions, Path(args.out))
    print(f"wrote {args.out} ({len(predictions)} predictions)")
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r["label"]]
    if not rows:
        print("predictions file has no labeled rows", file=sys.stderr)
        return 1
    predictions = [
        (r["sep_id"], Grade.parse(r["label"]), Grade.parse(r["predicted"]))
        for r in rows
    ]
    report = _build_report([], predictions, [], config, None)
    report["n_entries"] = len(predictions)
    out_prefix = Path(args.out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out_prefix}.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    Path(f"{out_prefix}.txt").write_text(format_report(report), encoding="utf-8")
    print(f"wrote {out_prefix}.txt and {out_prefix}.json")
    return 0


def _cmd_agreement(args) -> int:
    entries = load_manifest(args.manifest)
    report = rater_agreement(entries)
    out_prefix = Path(args.out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out_prefix}.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    Path(f"{out_prefix}.txt").write_text(format_agreement(report), encoding="utf-8")
    print(f"wrote {out_prefix}.txt and {out_prefix}.json")
    return 0


def _cmd_synth(args) -> int:
    grades = [Grade.parse(g) for g in args.grades.split(",")]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    seed = args.seed
    for grade in grades:
        for i in range(args.per_grade):
            spec = SynthSpec(
                grade=grade,
                width=args.width,
                height=args.height,
                cell_count=args.cells,
                overlap_fraction=args.overlap,
                papilla_count=args.papillae,
                seed=seed,
            )
            sample = generate(spec, sep_id=f"synth-{grade.value.lower()}-{i:03d}")
            paths = write_sample(sample, out_dir)
            manifest_rows.append(
                (
                    sample.image.id,
                    paths["image"].name,
                    paths["annotation"].name,
                    grade.value,
                    "",
                )
            )
            seed += 1
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sep_id", "image", "annotation", "label", "label2"])
        writer.writerows(manifest_rows)
    print(f"wrote {len(manifest_rows)} samples and {manifest_path}")
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args.config, args.slic_distance)
    result = run(
        args.manifest,
        config,
        args.out_dir,
        cache_dir=args.cache_dir,
        jobs=args.jobs,
    )
    for sep_id, err in result.failures:
        print(f"failed: {sep_id}: {err}", file=sys.stderr)
    print(f"processed {len(result.features)}/{result.report['n_entries']} entries")
    print(f"report: {result.out_dir / 'report.txt'}")
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadas",
        description="Morphometric grading pipeline for epithelium image patches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="image -> cleaned nucleus mask (1-bit PNG)")
    p.add_argument("--image", required=True)
    p.add_argument("--config")
    p.add_argument("--slic-distance", choices=["standard", "paper-literal"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("resolve", help="mask -> resolved cell ellipses (CSV)")
    p.add_argument("--mask", required=True)
    p.add_argument("--config")
    p.add_argument("--sep-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_resolve)

    p = sub.add_parser("features", help="image+annotation+mask -> feature CSV")
    p.add_argument("--image", required=True)
    p.add_argument("--annotation", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--sep-id")
    p.add_argument("--label")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("grade", help="feature CSV -> cross-validated predictions")
    p.add_argument("--features", required=True)
    p.add_argument("--config")
    p.add_argument("--model-out", help="also write <prefix>.csv + <prefix>.normalizer.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_grade)

    p = sub.add_parser("evaluate", help="predictions CSV -> evaluation report")
    p.add_argument("--predictions", required=True)
    p.add_argument("--config")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("agreement", help="dual-labeled manifest -> agreement report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_agreement)

    p = sub.add_parser("synth", help="generate synthetic patches with ground truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grades", default="Normal,CIN1,CIN2,CIN3")
    p.add_argument("--per-grade", type=int, default=3)
    p.add_argument("--width", type=int, default=360)
    p.add_argument("--height", type=int, default=260)
    p.add_argument("--cells", type=int, default=55)
    p.add_argument("--overlap", type=float, default=0.1)
    p.add_argument("--papillae", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="full pipeline over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--slic-distance", choices=["standard", "paper-literal"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PipelineError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
