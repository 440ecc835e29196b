"""Synthetic epithelium patches with exact ground truth.

Renders two near-parallel membranes with elliptical dark nuclei on a pale
background. Dysplastic change fills a configurable fraction of the epithelial
thickness measured from the basal membrane: nuclei there are enlarged
(~1.6x area), darker, noisier and randomly oriented, while the rest stay
small and basal-aligned. A mild severity-linked enlargement outside the
dysplastic band mimics reactive change and keeps grade ordering recoverable
from any single band. Output is deterministic in the seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from cadas.model import (
    Grade,
    MembraneAnnotation,
    Papilla,
    REGIONS,
    SepImage,
    relative_depth,
)
from cadas.features import region_areas
from cadas.overlap import CellEllipse
from cadas.segmentation import BinaryMask

BACKGROUND_RGB = (234.0, 205.0, 216.0)  # eosin-pale
PAPILLA_RGB = (222.0, 183.0, 199.0)  # stromal inclusion, slightly deeper pink
NUCLEUS_RGB = (104.0, 74.0, 150.0)  # hematoxylin violet
DYSPLASTIC_SHADE = 0.72  # darker nuclei inside the dysplastic band
DYSPLASIA_AREA_FACTOR = 1.6
REACTIVE_AXIS_STEP = 0.06  # per-severity-rank axis growth outside the band

DEFAULT_BAND = {
    Grade.NORMAL: 0.0,
    Grade.CIN1: 1.0 / 3.0,
    Grade.CIN2: 2.0 / 3.0,
    Grade.CIN3: 1.0,
}


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthSpec:
    grade: Grade
    width: int = 360
    height: int = 260
    cell_count: int = 55
    overlap_fraction: float = 0.0
    dysplasia_band: Optional[float] = None  # default depends on grade
    papilla_count: int = 1
    seed: int = 0
    membrane_waviness: float = 6.0  # px amplitude; 0 gives straight membranes
    orientation_jitter_deg: float = 10.0  # jitter of non-dysplastic axes

    def __post_init__(self) -> None:
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise SynthError("overlap_fraction must be in [0, 1)")
        band = self.band
        if not 0.0 <= band <= 1.0:
            raise SynthError("dysplasia_band must be in [0, 1]")

    @property
    def band(self) -> float:
        return (
            DEFAULT_BAND[self.grade]
            if self.dysplasia_band is None
            else self.dysplasia_band
        )


@dataclass(frozen=True)
class GroundTruthCell:
    cell: CellEllipse
    depth: float  # relative depth t of the center
    dysplastic: bool


@dataclass(frozen=True)
class RegionExpectation:
    cell_count: int
    region_area: float  # band pixels excluding papilla disks
    ana: float  # mean analytic ellipse area (pi*a*b)
    aca: float  # region_area - total analytic nucleus area
    ncr: float


@dataclass(eq=False)
class SynthSample:
    spec: SynthSpec
    image: SepImage
    annotation: MembraneAnnotation
    cells: tuple[GroundTruthCell, ...]
    mask: BinaryMask
    expected: dict  # region name -> RegionExpectation

    def truth_cells(self) -> list[CellEllipse]:
        return [g.cell for g in self.cells]


def generate(spec: SynthSpec, sep_id: Optional[str] = None) -> SynthSample:
    rng = np.random.default_rng(spec.seed)
    sep_id = sep_id or f"synth-{spec.grade.value.lower()}-{spec.seed}"

    annotation = _make_membranes(spec, rng)
    papillae = _place_papillae(spec, annotation, rng)
    annotation = MembraneAnnotation(
        basal=annotation.basal, upper=annotation.upper, papillae=papillae
    )

    cells = _place_cells(spec, annotation, rng)
    image, mask = _render(spec, annotation, cells, rng)
    expected = _expectations(spec, annotation, cells)
    return SynthSample(
        spec=spec,
        image=SepImage(pixels=image, id=sep_id),
        annotation=annotation,
        cells=tuple(cells),
        mask=BinaryMask(bits=mask),
        expected=expected,
    )


def _make_membranes(spec: SynthSpec, rng: np.random.Generator) -> MembraneAnnotation:
    margin = 30.0
    knots = 7
    xs = np.linspace(0, spec.width - 1, knots)
    amp = spec.membrane_waviness
    phase_b, phase_u = rng.uniform(0, 2 * math.pi, size=2)
    basal_y = spec.height - margin + amp * np.sin(xs / spec.width * 2.6 + phase_b)
    upper_y = margin + amp * np.sin(xs / spec.width * 2.6 + phase_u)
    basal = tuple((float(x), float(y)) for x, y in zip(xs, basal_y))
    upper = tuple((float(x), float(y)) for x, y in zip(xs, upper_y))
    return MembraneAnnotation(basal=basal, upper=upper)


def _place_papillae(
    spec: SynthSpec, a: MembraneAnnotation, rng: np.random.Generator
) -> tuple[Papilla, ...]:
    out = []
    for _ in range(spec.papilla_count):
        for _ in range(50):
            cx = rng.uniform(spec.width * 0.15, spec.width * 0.85)
            cy = rng.uniform(spec.height * 0.45, spec.height * 0.8)
            r = rng.uniform(16.0, 24.0)
            t, inside = relative_depth(np.asarray([cx]), np.asarray([cy]), a)
            if inside[0] and 0.1 < t[0] < 0.6:
                out.append(Papilla(cx=float(cx), cy=float(cy), r=float(r)))
                break
    return tuple(out)


_GROWTH_CAP = math.sqrt(DYSPLASIA_AREA_FACTOR)  # worst-case axis growth


def _base_axes(rng: np.random.Generator) -> tuple[float, float]:
    a = rng.uniform(7.5, 9.5)
    b = rng.uniform(5.5, 7.0)
    return (a, b) if a >= b else (b, a)


def _grow_axes(
    spec: SynthSpec, base: tuple[float, float], dysplastic: bool
) -> tuple[float, float]:
    if dysplastic:
        factor = _GROWTH_CAP
    else:
        factor = 1.0 + REACTIVE_AXIS_STEP * spec.grade.severity
    return base[0] * factor, base[1] * factor


def _place_cells(
    spec: SynthSpec, a: MembraneAnnotation, rng: np.random.Generator
) -> list[GroundTruthCell]:
    placed: list[GroundTruthCell] = []
    n_pairs = int(round(spec.cell_count * spec.overlap_fraction / 2.0))
    n_single = spec.cell_count - 2 * n_pairs

    def blocked(x: float, y: float, semi_major: float) -> bool:
        for g in placed:
            min_gap = 1.15 * (g.cell.semi_major + semi_major)
            if (g.cell.center[0] - x) ** 2 + (g.cell.center[1] - y) ** 2 < min_gap**2:
                return True
        return False

    def sample_center(semi_major: float) -> tuple[float, float, float]:
        for _ in range(400):
            x = rng.uniform(semi_major + 2, spec.width - semi_major - 3)
            y = rng.uniform(2, spec.height - 3)
            t, inside = relative_depth(np.asarray([x]), np.asarray([y]), a)
            if not inside[0] or not 0.05 < t[0] < 0.95:
                continue
            if any(
                (x - p.cx) ** 2 + (y - p.cy) ** 2 <= (p.r + semi_major) ** 2
                for p in a.papillae
            ):
                continue
            if blocked(x, y, semi_major):
                continue
            return x, y, float(t[0])
        raise SynthError(
            f"could not place {spec.cell_count} cells on a "
            f"{spec.width}x{spec.height} patch (overlap {spec.overlap_fraction})"
        )

    def make_cell(x: float, y: float, t: float, base: tuple[float, float]) -> GroundTruthCell:
        dysplastic = spec.band > 0 and t < spec.band
        ax, bx = _grow_axes(spec, base, dysplastic)
        if dysplastic:
            theta = rng.uniform(0, math.pi)
        else:
            jitter = math.radians(spec.orientation_jitter_deg)
            theta = (_basal_tangent(a, x) + rng.uniform(-jitter, jitter)) % math.pi
        return GroundTruthCell(
            cell=CellEllipse(
                center=(x, y),
                semi_major=ax,
                semi_minor=bx,
                orientation=theta,
                weight=1.0,
            ),
            depth=t,
            dysplastic=dysplastic,
        )

    # pairs first: their anchor + partner need the most contiguous room
    for _ in range(n_pairs):
        base = _base_axes(rng)
        x, y, t = sample_center(base[0] * _GROWTH_CAP * 1.8)
        first = make_cell(x, y, t, base)
        placed.append(first)
        base2 = _base_axes(rng)
        for _ in range(200):
            gap = rng.uniform(0.55, 0.85)
            angle = rng.uniform(0, 2 * math.pi)
            dist = gap * (first.cell.semi_major + base2[0])
            px_, py_ = x + dist * math.cos(angle), y + dist * math.sin(angle)
            if not (base2[0] + 2 < px_ < spec.width - base2[0] - 3 and 2 < py_ < spec.height - 3):
                continue
            t2, inside = relative_depth(np.asarray([px_]), np.asarray([py_]), a)
            near_other = any(
                g is not first
                and (g.cell.center[0] - px_) ** 2 + (g.cell.center[1] - py_) ** 2
                < (1.15 * (g.cell.semi_major + base2[0] * _GROWTH_CAP)) ** 2
                for g in placed
            )
            if inside[0] and 0.05 < t2[0] < 0.95 and not near_other and not any(
                (px_ - p.cx) ** 2 + (py_ - p.cy) ** 2 <= (p.r + base2[0]) ** 2
                for p in a.papillae
            ):
                placed.append(make_cell(px_, py_, float(t2[0]), base2))
                break

    for _ in range(n_single):
        base = _base_axes(rng)
        x, y, t = sample_center(base[0] * _GROWTH_CAP)
        placed.append(make_cell(x, y, t, base))
    return placed


def _basal_tangent(a: MembraneAnnotation, x: float) -> float:
    xs = [p[0] for p in a.basal]
    i = min(
        range(len(xs) - 1),
        key=lambda j: abs((xs[j] + xs[j + 1]) / 2 - x),
    )
    (x0, y0), (x1, y1) = a.basal[i], a.basal[i + 1]
    return math.atan2(y1 - y0, x1 - x0)


def _render(
    spec: SynthSpec,
    a: MembraneAnnotation,
    cells: Sequence[GroundTruthCell],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.height, spec.width
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = BACKGROUND_RGB
    img += rng.normal(0.0, 3.0, size=img.shape)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for p in a.papillae:
        disk = (xs - p.cx) ** 2 + (ys - p.cy) ** 2 <= p.r * p.r
        img[disk] = np.asarray(PAPILLA_RGB) + rng.normal(0.0, 3.0, size=(int(disk.sum()), 3))

    mask = np.zeros((h, w), dtype=bool)
    for g in cells:
        fill = np.asarray(NUCLEUS_RGB) * (DYSPLASTIC_SHADE if g.dysplastic else 1.0)
        fill = fill + rng.uniform(-12.0, 12.0)  # per-cell brightness jitter
        noise_sd = 7.0 if g.dysplastic else 3.0
        inside = _ellipse_mask(xs, ys, g.cell)
        n_px = int(inside.sum())
        img[inside] = fill + rng.normal(0.0, noise_sd, size=(n_px, 3))
        mask |= inside

    return np.clip(img, 0, 255).astype(np.uint8), mask


def _ellipse_mask(xs: np.ndarray, ys: np.ndarray, cell: CellEllipse) -> np.ndarray:
    dx = xs - cell.center[0]
    dy = ys - cell.center[1]
    ct, st = math.cos(cell.orientation), math.sin(cell.orientation)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return (u / cell.semi_major) ** 2 + (v / cell.semi_minor) ** 2 <= 1.0


def _expectations(
    spec: SynthSpec, a: MembraneAnnotation, cells: Sequence[GroundTruthCell]
) -> dict:
    areas = region_areas(a, spec.width, spec.height)
    out = {}
    for region in REGIONS:
        lo, hi = region.value / 3.0, (region.value + 1) / 3.0
        members = [
            g
            for g in cells
            if lo <= g.depth < hi or (region.value == 2 and g.depth >= hi)
        ]
        analytic = [math.pi * g.cell.semi_major * g.cell.semi_minor for g in members]
        region_area = float(areas[region])
        total = float(sum(analytic))
        aca = region_area - total
        out[region.name.lower()] = RegionExpectation(
            cell_count=len(members),
            region_area=region_area,
            ana=(total / len(members)) if members else 0.0,
            aca=aca,
            ncr=(total / aca) if aca > 0 else float("inf"),
        )
    return out


# --- ground-truth pixel memberships ------------------------------------------


def truth_cells_with_pixels(sample: SynthSample) -> list[CellEllipse]:
    """Ground-truth cells carrying rasterized pixel memberships.

    Pixels covered by several ellipses go to the one whose normalized
    (Mahalanobis-like) ellipse coordinate is smallest.
    """
    h, w = sample.spec.height, sample.spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    best = np.full((h, w), np.inf)
    owner = np.full((h, w), -1, dtype=np.int64)
    for i, g in enumerate(sample.cells):
        cell = g.cell
        dx = xs - cell.center[0]
        dy = ys - cell.center[1]
        ct, st = math.cos(cell.orientation), math.sin(cell.orientation)
        u = dx * ct + dy * st
        v = -dx * st + dy * ct
        q = (u / cell.semi_major) ** 2 + (v / cell.semi_minor) ** 2
        claim = (q <= 1.0) & (q < best)
        owner[claim] = i
        best[claim] = q[claim]
    out = []
    for i, g in enumerate(sample.cells):
        rows, cols = np.nonzero(owner == i)
        if len(rows) == 0:
            continue
        pixels = np.stack([rows, cols], axis=1)
        out.append(
            CellEllipse(
                center=g.cell.center,
                semi_major=g.cell.semi_major,
                semi_minor=g.cell.semi_minor,
                orientation=g.cell.orientation,
                weight=1.0,
                pixel_count=len(pixels),
                pixels=pixels,
            )
        )
    return out


# --- persistence -------------------------------------------------------------


def write_sample(sample: SynthSample, out_dir: str | Path) -> dict[str, Path]:
    """Emit the PNG + annotation JSON + ground-truth CSV for one sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sid = sample.image.id
    image_path = out_dir / f"{sid}.png"
    ann_path = out_dir / f"{sid}.annotation.json"
    truth_path = out_dir / f"{sid}.truth.csv"
    sample.image.save(image_path)
    ann_path.write_text(sample.annotation.serialize(), encoding="utf-8")
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sep_id", "cell_index", "cx", "cy", "a", "b", "theta", "depth", "dysplastic"]
        )
        for i, g in enumerate(sample.cells):
            writer.writerow(
                [
                    sid,
                    i,
                    f"{g.cell.center[0]:.6g}",
                    f"{g.cell.center[1]:.6g}",
                    f"{g.cell.semi_major:.6g}",
                    f"{g.cell.semi_minor:.6g}",
                    f"{g.cell.orientation:.6g}",
                    f"{g.depth:.6g}",
                    int(g.dysplastic),
                ]
            )
    return {"image": image_path, "annotation": ann_path, "truth": truth_path}
