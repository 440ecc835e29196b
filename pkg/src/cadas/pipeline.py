"""End-to-end orchestration over a dataset manifest.

For every entry: median filter, superpixels, thresholding, cleanup, overlap
resolution, feature extraction. Labeled entries then get cross-validated
weighted-kNN predictions and a CIN/SIL evaluation report. Per-entry failures
are recorded and skipped; the run only fails (exit code 2) when more than 10%
of entries fail. Feature vectors are cached per sep_id keyed by the config
fingerprint; CADAS_CACHE_DIR overrides the cache location.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from cadas.config import PipelineConfig
from cadas.evaluation import (
    CIN_LABELS,
    SIL_LABELS,
    ConfusionMatrix,
    accuracy,
    cohen_kappa,
    matrix_block,
    off_by_one_accuracy,
    per_class_recall,
    stratified_folds,
)
from cadas.features import (
    FeatureVector,
    build_feature_vector,
    write_features_csv,
)
from cadas.grading import TrainingSet, cin_to_sil, wknn_classify
from cadas.model import Grade, SepImage, load_annotation
from cadas.overlap import resolve_cells
from cadas.reference_tables import AGREEMENT_FOOTNOTE
from cadas.segmentation import cleanup_mask, foreground_mask, median_filter, slic_superpixels

MANIFEST_HEADER = ("sep_id", "image", "annotation", "label", "label2")


class PipelineError(Exception):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    sep_id: str
    image: Path
    annotation: Path
    label: Optional[Grade] = None
    label2: Optional[Grade] = None


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read and validate a manifest CSV (sep_id,image,annotation,label,label2).

    Relative file paths resolve against the manifest's directory. Ids must be
    unique and referenced files must exist.
    """
    path = Path(path)
    base = path.parent
    entries = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_HEADER[:3]) - set(reader.fieldnames or ())
        if missing:
            raise PipelineError(f"manifest missing columns: {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            sid = (row.get("sep_id") or "").strip()
            if not sid:
                raise PipelineError(f"{path}:{i}: empty sep_id")
            if sid in seen:
                raise PipelineError(f"{path}:{i}: duplicate sep_id {sid!r}")
            seen.add(sid)
            image = (base / row["image"]).resolve()
            annotation = (base / row["annotation"]).resolve()
            for p in (image, annotation):
                if not p.exists():
                    raise PipelineError(f"{path}:{i}: file not found: {p}")
            entries.append(
                ManifestEntry(
                    sep_id=sid,
                    image=image,
                    annotation=annotation,
                    label=_parse_label(row.get("label"), path, i),
                    label2=_parse_label(row.get("label2"), path, i),
                )
            )
    if not entries:
        raise PipelineError(f"{path}: manifest has no entries")
    return entries


def _parse_label(raw: Optional[str], path: Path, line: int) -> Optional[Grade]:
    raw = (raw or "").strip()
    if not raw:
        return None
    try:
        return Grade.parse(raw)
    except Exception:
        raise PipelineError(f"{path}:{line}: invalid grade label {raw!r}") from None


# --- single-entry processing --------------------------------------------------


def segment_image(img: SepImage, config: PipelineConfig):
    """Median filter + superpixels + thresholding + cleanup; returns the
    cleaned nucleus mask."""
    filtered = median_filter(img, config.median_window)
    sp = slic_superpixels(
        filtered,
        k=config.slic.k,
        m=config.slic.m,
        distance=config.slic.distance,
        max_iter=config.slic.max_iter,
    )
    fg = foreground_mask(sp, filtered, config.threshold.mode, config.threshold.value)
    return cleanup_mask(fg.mask, config.mask.min_area, config.mask.close_radius)


def process_entry(entry: ManifestEntry, config: PipelineConfig) -> FeatureVector:
    """Full per-patch chain from files to the 21-slot feature vector.

    Features are measured on the original (unfiltered) image; the median
    filter only assists segmentation.
    """
    img = SepImage.from_file(entry.image, sep_id=entry.sep_id)
    annotation = load_annotation(entry.annotation, width=img.width, height=img.height)
    mask = segment_image(img, config)
    cells = resolve_cells(
        mask,
        r=config.overlap.r,
        scale=config.overlap.scale,
        em_tol=config.overlap.em_tol,
        em_max_iter=config.overlap.em_max_iter,
        alpha_cap=config.overlap.alpha_cap,
    )
    return build_feature_vector(img, annotation, cells, mask, label=entry.label)


# --- caching ------------------------------------------------------------------


def _cache_dir(out_dir: Path, override: Optional[str | Path]) -> Path:
    env = os.environ.get("CADAS_CACHE_DIR")
    if override is not None:
        return Path(override)
    if env:
        return Path(env)
    return out_dir / "cache"


def _cache_path(cache_root: Path, fingerprint: str, sep_id: str) -> Path:
    return cache_root / fingerprint / f"{sep_id}.json"


def _cache_load(path: Path, sep_id: str, label: Optional[Grade]) -> Optional[FeatureVector]:
    if not path.exists():
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return FeatureVector(
            values=tuple(float(x) for x in doc["values"]),
            region_valid=tuple(bool(b) for b in doc["region_valid"]),
            sep_id=sep_id,
            label=label,
        )
    except Exception:
        return None  # stale/corrupt cache entries are recomputed


def _cache_store(path: Path, fv: FeatureVector) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"values": list(fv.values), "region_valid": list(fv.region_valid)}
    path.write_text(json.dumps(doc), encoding="utf-8")


# --- run ----------------------------------------------------------------------


@dataclass(eq=False)
class RunResult:
    features: list[FeatureVector]
    predictions: list[tuple[str, Optional[Grade], Grade]]  # sep_id, label, predicted
    report: dict
    failures: list[tuple[str, str]]
    exit_code: int
    out_dir: Path


def run(
    manifest: str | Path | Sequence[ManifestEntry],
    config: PipelineConfig,
    out_dir: str | Path,
    cache_dir: Optional[str | Path] = None,
    jobs: int = 1,
) -> RunResult:
    """Process a manifest end to end and write features, predictions and the
    evaluation report under out_dir."""
    entries = (
        load_manifest(manifest)
        if isinstance(manifest, (str, Path))
        else list(manifest)
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = config.fingerprint()
    cache_root = _cache_dir(out_dir, cache_dir)

    features: dict[str, FeatureVector] = {}
    failures: list[tuple[str, str]] = []

    def work(entry: ManifestEntry) -> tuple[str, Optional[FeatureVector], Optional[str]]:
        cpath = _cache_path(cache_root, fingerprint, entry.sep_id)
        cached = _cache_load(cpath, entry.sep_id, entry.label)
        if cached is not None:
            return entry.sep_id, cached, None
        try:
            fv = process_entry(entry, config)
        except Exception as e:
            return entry.sep_id, None, f"{type(e).__name__}: {e}"
        _cache_store(cpath, fv)
        return entry.sep_id, fv, None

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]
    for sep_id, fv, err in results:
        if err is not None:
            failures.append((sep_id, err))
        else:
            features[sep_id] = fv

    ordered = [features[e.sep_id] for e in entries if e.sep_id in features]
    write_features_csv(ordered, out_dir / "features.csv")

    labeled = [fv for fv in ordered if fv.label is not None]
    predictions: list[tuple[str, Optional[Grade], Grade]] = []
    grading_note = None
    if len(labeled) >= max(2, config.evaluation.n_folds):
        predictions = _cross_validated_predictions(labeled, config)
    else:
        grading_note = (
            f"grading skipped: {len(labeled)} labeled entries, "
            f"need at least {max(2, config.evaluation.n_folds)}"
        )

    report = _build_report(entries, predictions, failures, config, grading_note)
    _write_predictions(predictions, out_dir / "predictions.csv")
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "report.txt").write_text(format_report(report), encoding="utf-8")

    exit_code = 2 if len(failures) > 0.10 * len(entries) else 0
    return RunResult(
        features=ordered,
        predictions=predictions,
        report=report,
        failures=failures,
        exit_code=exit_code,
        out_dir=out_dir,
    )


def _cross_validated_predictions(
    labeled: Sequence[FeatureVector], config: PipelineConfig
) -> list[tuple[str, Optional[Grade], Grade]]:
    labels = [fv.label.value for fv in labeled]
    assignment = stratified_folds(labels, config.evaluation.n_folds, config.evaluation.seed)
    predictions = []
    for fold in range(config.evaluation.n_folds):
        train = [fv for fv, f in zip(labeled, assignment.folds) if f != fold]
        test = [fv for fv, f in zip(labeled, assignment.folds) if f == fold]
        if len(train) < 2 or not test:
            continue
        tset = TrainingSet.fit(train)
        k = min(config.grading.k, len(tset))
        for fv in test:
            result = wknn_classify(fv, tset, k=k)
            predictions.append((fv.sep_id, fv.label, result.predicted))
    order = {fv.sep_id: i for i, fv in enumerate(labeled)}
    predictions.sort(key=lambda p: order[p[0]])
    return predictions


def _write_predictions(
    predictions: Sequence[tuple[str, Optional[Grade], Grade]], path: Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sep_id", "label", "predicted", "predicted_sil"])
        for sep_id, label, predicted in predictions:
            writer.writerow(
                [
                    sep_id,
                    label.value if label else "",
                    predicted.value,
                    cin_to_sil(predicted).value,
                ]
            )


def _metrics_section(matrix: ConfusionMatrix) -> dict:
    kappa = cohen_kappa(matrix)
    section = {
        "labels": list(matrix.labels),
        "matrix": matrix.counts.tolist(),
        "total": matrix.total,
        "accuracy": accuracy(matrix),
        "kappa": kappa.value,
        "kappa_degenerate": kappa.degenerate,
        "recall": per_class_recall(matrix),
    }
    if matrix.labels in (CIN_LABELS, SIL_LABELS):
        section["off_by_one"] = off_by_one_accuracy(matrix)
    return section


def _build_report(
    entries: Sequence[ManifestEntry],
    predictions: Sequence[tuple[str, Optional[Grade], Grade]],
    failures: Sequence[tuple[str, str]],
    config: PipelineConfig,
    grading_note: Optional[str],
) -> dict:
    report = {
        "config_fingerprint": config.fingerprint(),
        "n_entries": len(entries),
        "n_failures": len(failures),
        "failures": [{"sep_id": s, "error": e} for s, e in failures],
        "cv_folds": config.evaluation.n_folds,
        "cv_seed": config.evaluation.seed,
        "notes": [grading_note] if grading_note else [],
    }
    if predictions:
        ref = [p[1].value for p in predictions]
        pred = [p[2].value for p in predictions]
        cin = ConfusionMatrix.from_pairs(ref, pred, CIN_LABELS)
        sil_ref = [cin_to_sil(p[1]).value for p in predictions]
        sil_pred = [cin_to_sil(p[2]).value for p in predictions]
        sil = ConfusionMatrix.from_pairs(sil_ref, sil_pred, SIL_LABELS)
        report["cin"] = _metrics_section(cin)
        report["sil"] = _metrics_section(sil)
    return report


def format_report(report: dict) -> str:
    lines = [
        "evaluation report",
        f"config fingerprint: {report['config_fingerprint']}",
        f"entries: {report['n_entries']}  failures: {report['n_failures']}",
        f"cross-validation: {report['cv_folds']} folds, seed {report['cv_seed']}",
    ]
    for note in report.get("notes", []):
        lines.append(f"note: {note}")
    for sep_id_err in report.get("failures", []):
        lines.append(f"failed: {sep_id_err['sep_id']}: {sep_id_err['error']}")
    for key, title in (("cin", "CIN grading"), ("sil", "SIL grading")):
        section = report.get(key)
        if not section:
            continue
        lines.append("")
        matrix = ConfusionMatrix(
            labels=tuple(section["labels"]),
            counts=np.asarray(section["matrix"]),
        )
        lines.extend(matrix_block(matrix, title))
        lines.append(f"accuracy: {section['accuracy']:.4f}")
        if "off_by_one" in section:
            lines.append(f"off-by-one accuracy: {section['off_by_one']:.4f}")
        lines.append(f"cohen kappa: {section['kappa']:.4f}")
        recalls = "  ".join(f"{lab}={v:.3f}" for lab, v in section["recall"].items())
        lines.append(f"per-class recall: {recalls}")
    return "\n".join(lines) + "\n"


# --- rater agreement ------------------------------------------------------------


def rater_agreement(entries: Sequence[ManifestEntry]) -> dict:
    """Agreement report between the two label columns of a manifest."""
    dual = [e for e in entries if e.label is not None and e.label2 is not None]
    if not dual:
        raise PipelineError("no entries carry both rater labels")
    ref = [e.label.value for e in dual]
    other = [e.label2.value for e in dual]
    cin = ConfusionMatrix.from_pairs(ref, other, CIN_LABELS)
    sil = ConfusionMatrix.from_pairs(
        [cin_to_sil(e.label).value for e in dual],
        [cin_to_sil(e.label2).value for e in dual],
        SIL_LABELS,
    )
    return {
        "n_dual_labeled": len(dual),
        "cin": _metrics_section(cin),
        "sil": _metrics_section(sil),
        "footnotes": [AGREEMENT_FOOTNOTE],
    }


def format_agreement(report: dict) -> str:
    lines = [
        "rater agreement report",
        f"dual-labeled entries: {report['n_dual_labeled']}",
    ]
    for key, title in (("cin", "CIN grading"), ("sil", "SIL grading")):
        section = report[key]
        lines.append("")
        matrix = ConfusionMatrix(
            labels=tuple(section["labels"]),
            counts=np.asarray(section["matrix"]),
        )
        lines.extend(matrix_block(matrix, title))
        lines.append(f"agreement: {section['accuracy']:.4f}")
        lines.append(f"cohen kappa: {section['kappa']:.4f}")
    lines.append("")
    for note in report["footnotes"]:
        lines.append(note)
    return "\n".join(lines) + "\n"
