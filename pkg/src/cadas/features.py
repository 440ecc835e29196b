"""Per-cell morphometrics and the 21-slot per-patch feature vector.

Seven features per epithelial band: mean nucleus area (ana), cytoplasm area
(aca), nucleus/cytoplasm ratio (ncr), mean nucleus perimeter (np), border
irregularity (bi), hyperchromasia (hi) and polarity-loss angle (pli). Bands
are ordered Lower, Middle, Upper; the vector is their concatenation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from cadas.model import (
    EpithelialRegion,
    Grade,
    MembraneAnnotation,
    REGIONS,
    SepImage,
    grayscale_intensity,
    in_papilla,
    nearest_segment,
    papilla_mask,
    region_map,
    region_of_point,
)
from cadas.overlap import CellEllipse
from cadas.segmentation import EIGHT_CONNECTED, BinaryMask

FEATURE_NAMES = ("ana", "aca", "ncr", "np", "bi", "hi", "pli")
REGION_NAMES = ("lower", "middle", "upper")
COLUMN_NAMES = tuple(f"{r}_{f}" for r in REGION_NAMES for f in FEATURE_NAMES)
NCR_CAP = 1e6


class FeatureError(Exception):
    pass


@dataclass(frozen=True)
class CellMetrics:
    area: float
    perimeter: float
    border_irregularity: float
    hyperchromasia: float
    polarity_angle: float  # degrees in [0, 90]
    region: Optional[EpithelialRegion]  # None when the center is outside
    excluded: bool  # center inside a papilla disk


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]  # 21 values, (lower, middle, upper) x 7
    region_valid: tuple[bool, bool, bool]
    sep_id: str
    label: Optional[Grade] = None

    def __post_init__(self) -> None:
        if len(self.values) != 21:
            raise FeatureError(f"feature vector must have 21 values, got {len(self.values)}")
        if len(self.region_valid) != 3:
            raise FeatureError("region_valid must have 3 flags")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def ellipse_perimeter(a: float, b: float) -> float:
    """Ramanujan's approximation of the ellipse circumference."""
    return math.pi * (3.0 * (a + b) - math.sqrt((3.0 * a + b) * (a + 3.0 * b)))


def trace_perimeter(pixels: np.ndarray) -> float:
    """Outer boundary length of a pixel set.

    Moore-neighbor tracing over each 8-connected piece, orthogonal steps
    counting 1 and diagonal steps sqrt(2). Degenerate sets (single pixels)
    clamp to 1 so the perimeter stays positive.
    """
    pixels = np.asarray(pixels)
    if len(pixels) == 0:
        raise FeatureError("cannot trace an empty pixel set")
    r0, c0 = pixels[:, 0].min(), pixels[:, 1].min()
    bitmap = np.zeros(
        (pixels[:, 0].max() - r0 + 3, pixels[:, 1].max() - c0 + 3), dtype=bool
    )
    bitmap[pixels[:, 0] - r0 + 1, pixels[:, 1] - c0 + 1] = True
    lab, n = ndimage.label(bitmap, structure=EIGHT_CONNECTED)
    total = sum(_trace_one(lab == i) for i in range(1, n + 1))
    return max(total, 1.0)


_CLOCKWISE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def _trace_one(bm: np.ndarray) -> float:
    rows, cols = np.nonzero(bm)
    start = (int(rows[0]), int(cols[0]))  # nonzero scans row-major
    first_move = None
    cur = start
    back = (start[0], start[1] - 1)  # west neighbor of the raster-first pixel is background
    perimeter = 0.0
    for _ in range(8 * bm.size):
        step = _next_boundary_step(bm, cur, back)
        if step is None:
            return 0.0  # isolated pixel
        nxt, nback = step
        if cur == start:
            if first_move is None:
                first_move = nxt
            elif nxt == first_move:
                return perimeter  # re-entering the cycle the same way
        perimeter += math.sqrt(2.0) if nxt[0] != cur[0] and nxt[1] != cur[1] else 1.0
        cur, back = nxt, nback
    raise FeatureError("boundary tracing failed to close")


def _next_boundary_step(bm, cur, back):
    di = _CLOCKWISE.index((back[0] - cur[0], back[1] - cur[1]))
    for s in range(1, 9):
        dr, dc = _CLOCKWISE[(di + s) % 8]
        cand = (cur[0] + dr, cur[1] + dc)
        if bm[cand]:
            pr, pc = _CLOCKWISE[(di + s - 1) % 8]
            return cand, (cur[0] + pr, cur[1] + pc)
    return None


def polarity_angle_deg(cell: CellEllipse, a: MembraneAnnotation) -> float:
    """Acute angle between the cell's major axis and the tangent of the
    nearest basal segment, in degrees."""
    seg = nearest_segment(cell.center, a.basal)
    (x0, y0), (x1, y1) = a.basal[seg], a.basal[seg + 1]
    tangent = math.atan2(y1 - y0, x1 - x0)
    diff = abs(cell.orientation - tangent) % math.pi
    if diff > math.pi / 2:
        diff = math.pi - diff
    return math.degrees(diff)


def compute_cell_metrics(
    cell: CellEllipse,
    mask: Optional[BinaryMask],
    img: SepImage,
    a: MembraneAnnotation,
) -> CellMetrics:
    """Morphometrics of one resolved cell from its assigned pixels."""
    if cell.pixels is None or cell.pixel_count == 0:
        raise FeatureError("cell has no pixel membership")
    pixels = cell.pixels
    traced = trace_perimeter(pixels)
    bi = ellipse_perimeter(cell.semi_major, cell.semi_minor) / traced
    intensities = grayscale_intensity(img.pixels[pixels[:, 0], pixels[:, 1]])
    return CellMetrics(
        area=float(cell.pixel_count),
        perimeter=traced,
        border_irregularity=bi,
        hyperchromasia=float(np.std(intensities)),
        polarity_angle=polarity_angle_deg(cell, a),
        region=region_of_point(cell.center, a),
        excluded=in_papilla(cell.center, a),
    )


@dataclass(frozen=True)
class RegionFeatures:
    values: tuple[float, ...]  # (ana, aca, ncr, np, bi, hi, pli)
    valid: bool
    ncr_saturated: bool = False


def aggregate_region(
    cells: Sequence[CellMetrics], region_area: float
) -> RegionFeatures:
    """The seven per-band features from cells already filtered to one band.

    With no cells the band reports all zeros and valid=False. When nuclei
    fill the whole band (cytoplasm area <= 0) the ratio saturates at NCR_CAP.
    """
    if region_area <= 0:
        raise FeatureError("region_area must be positive")
    if not cells:
        return RegionFeatures(values=(0.0,) * 7, valid=False)
    total_area = math.fsum(m.area for m in cells)
    aca = region_area - total_area
    saturated = aca <= 0
    ncr = NCR_CAP if saturated else total_area / aca

    # fsum is exactly rounded, so aggregation is order-invariant
    def mean(attr: str) -> float:
        return math.fsum(getattr(m, attr) for m in cells) / len(cells)

    return RegionFeatures(
        values=(
            mean("area"),
            aca,
            ncr,
            mean("perimeter"),
            mean("border_irregularity"),
            mean("hyperchromasia"),
            mean("polarity_angle"),
        ),
        valid=True,
        ncr_saturated=saturated,
    )


def region_areas(a: MembraneAnnotation, width: int, height: int) -> dict[EpithelialRegion, int]:
    """Pixel count per band, excluding papilla disks and out-of-epithelium
    pixels."""
    codes = region_map(a, width, height)
    codes = np.where(papilla_mask(a, width, height), -1, codes)
    return {region: int((codes == region.value).sum()) for region in REGIONS}


def build_feature_vector(
    img: SepImage,
    a: MembraneAnnotation,
    cells: Sequence[CellEllipse],
    mask: Optional[BinaryMask] = None,
    label: Optional[Grade] = None,
) -> FeatureVector:
    """Assemble the 21-slot vector for one patch from its resolved cells."""
    if mask is not None and mask.shape != (img.height, img.width):
        raise FeatureError(
            f"mask {mask.shape} does not match image {(img.height, img.width)}"
        )
    areas = region_areas(a, img.width, img.height)
    if sum(areas.values()) == 0:
        raise FeatureError(f"annotation for {img.id!r} encloses no epithelium pixels")
    metrics = [compute_cell_metrics(c, mask, img, a) for c in cells]
    values: list[float] = []
    valid: list[bool] = []
    for region in REGIONS:
        in_band = [m for m in metrics if m.region == region and not m.excluded]
        area = areas[region]
        if area == 0:
            feats = RegionFeatures(values=(0.0,) * 7, valid=False)
        else:
            feats = aggregate_region(in_band, float(area))
        values.extend(feats.values)
        valid.append(feats.valid)
    return FeatureVector(
        values=tuple(values),
        region_valid=(valid[0], valid[1], valid[2]),
        sep_id=img.id,
        label=label,
    )


# --- persistence ------------------------------------------------------------

CSV_HEADER = ("sep_id", "label") + COLUMN_NAMES + tuple(
    f"{r}_valid" for r in REGION_NAMES
)


def write_features_csv(vectors: Sequence[FeatureVector], path: str | Path) -> None:
    """Feature table with 6-significant-digit decimal formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for v in vectors:
            row = [v.sep_id, v.label.value if v.label else ""]
            row.extend(f"{x:.6g}" for x in v.values)
            row.extend(str(int(f)) for f in v.region_valid)
            writer.writerow(row)


def read_features_csv(path: str | Path) -> list[FeatureVector]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                FeatureVector(
                    values=tuple(float(row[c]) for c in COLUMN_NAMES),
                    region_valid=tuple(
                        bool(int(row[f"{r}_valid"])) for r in REGION_NAMES
                    ),
                    sep_id=row["sep_id"],
                    label=Grade.parse(row["label"]) if row["label"] else None,
                )
            )
    return out
