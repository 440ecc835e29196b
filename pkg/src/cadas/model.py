"""Domain types shared across the pipeline.

Images are 8-bit RGB rasters; annotations carry the basal membrane, the upper
membrane and papilla circles in zero-based pixel coordinates (x rightward,
y downward). The relative depth of a point between the membranes decides its
epithelial band.

All types are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

Point = tuple[float, float]

_MEMBRANE_EPS = 1e-9


class ModelError(Exception):
    """Base error for domain-type violations."""


class AnnotationSyntaxError(ModelError):
    """Annotation file content is not well-formed."""


class AnnotationGeometryError(ModelError):
    """Annotation content violates a geometric invariant."""


class Grade(Enum):
    """CIN-based grade of one epithelium patch."""

    NORMAL = "Normal"
    CIN1 = "CIN1"
    CIN2 = "CIN2"
    CIN3 = "CIN3"

    @property
    def severity(self) -> int:
        return _GRADE_ORDER.index(self)

    @classmethod
    def parse(cls, text: str) -> "Grade":
        key = text.strip().lower()
        for g in cls:
            if g.value.lower() == key:
                return g
        raise ModelError(f"unknown grade name: {text!r}")


_GRADE_ORDER = (Grade.NORMAL, Grade.CIN1, Grade.CIN2, Grade.CIN3)


class SilGrade(Enum):
    """SIL-based (two-tier) grade."""

    NORMAL = "Normal"
    LSIL = "LSIL"
    HSIL = "HSIL"

    @property
    def severity(self) -> int:
        return _SIL_ORDER.index(self)


_SIL_ORDER = (SilGrade.NORMAL, SilGrade.LSIL, SilGrade.HSIL)


class EpithelialRegion(Enum):
    """Depth band between the basal and upper membranes."""

    LOWER = 0
    MIDDLE = 1
    UPPER = 2

    def __lt__(self, other: "EpithelialRegion") -> bool:
        if not isinstance(other, EpithelialRegion):
            return NotImplemented
        return self.value < other.value


REGIONS = (EpithelialRegion.LOWER, EpithelialRegion.MIDDLE, EpithelialRegion.UPPER)


@dataclass(eq=False)
class SepImage:
    """One small epithelial piece: an 8-bit RGB raster with an id."""

    pixels: np.ndarray  # (height, width, 3) uint8
    id: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ModelError("pixels must be a (h, w, 3) uint8 array")
        if arr.shape[0] < 32 or arr.shape[1] < 32:
            raise ModelError(
                f"image {self.id!r} is {arr.shape[1]}x{arr.shape[0]}; minimum is 32x32"
            )
        if not self.id:
            raise ModelError("image id must be nonempty")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_file(cls, path: str | Path, sep_id: Optional[str] = None) -> "SepImage":
        """Load a PNG or TIFF image as 8-bit RGB."""
        path = Path(path)
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return cls(pixels=arr, id=sep_id or path.stem)

    def save(self, path: str | Path) -> None:
        Image.fromarray(self.pixels, "RGB").save(str(path))

    def grayscale(self) -> np.ndarray:
        """Luma intensities (0.299 r + 0.587 g + 0.114 b), float64 in [0, 255]."""
        return grayscale_intensity(self.pixels)


def grayscale_intensity(rgb: np.ndarray) -> np.ndarray:
    arr = np.asarray(rgb, dtype=np.float64)
    return arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114


@dataclass(frozen=True)
class Papilla:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True)
class MembraneAnnotation:
    """Basal polyline, upper polyline and papilla circles of one patch.

    Polylines are ordered with at least two points each and must not intersect
    one another. Papilla disks are closed (boundary counts as inside).
    """

    basal: tuple[Point, ...]
    upper: tuple[Point, ...]
    papillae: tuple[Papilla, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        _check_polyline(self.basal, "basal")
        _check_polyline(self.upper, "upper")
        for i, p in enumerate(self.papillae):
            if not p.r > 0:
                raise AnnotationGeometryError(
                    f"papillae[{i}]: radius must be positive, got {p.r}"
                )
        if _polylines_intersect(self.basal, self.upper):
            raise AnnotationGeometryError("basal and upper polylines intersect")

    def validate_bounds(self, width: int, height: int) -> None:
        """Ensure every annotated point lies inside a width x height raster."""
        for name, pts in (("basal", self.basal), ("upper", self.upper)):
            for i, (x, y) in enumerate(pts):
                if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
                    raise AnnotationGeometryError(
                        f"{name}[{i}]: point ({x}, {y}) outside {width}x{height} image"
                    )
        for i, p in enumerate(self.papillae):
            if not (0 <= p.cx <= width - 1 and 0 <= p.cy <= height - 1):
                raise AnnotationGeometryError(
                    f"papillae[{i}]: center ({p.cx}, {p.cy}) outside {width}x{height} image"
                )

    def serialize(self) -> str:
        doc = {
            "basal": [[x, y] for x, y in self.basal],
            "upper": [[x, y] for x, y in self.upper],
            "papillae": [{"cx": p.cx, "cy": p.cy, "r": p.r} for p in self.papillae],
        }
        return json.dumps(doc, indent=2)


def _check_polyline(points: Sequence[Point], name: str) -> None:
    if len(points) < 2:
        raise AnnotationGeometryError(
            f"{name}: polyline needs at least 2 points, got {len(points)}"
        )


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool:
    d1 = _orient(*p3, *p4, *p1)
    d2 = _orient(*p3, *p4, *p2)
    d3 = _orient(*p1, *p2, *p3)
    d4 = _orient(*p1, *p2, *p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_segment(px, py, qx, qy, rx, ry):
        return min(px, qx) <= rx <= max(px, qx) and min(py, qy) <= ry <= max(py, qy)

    if d1 == 0 and on_segment(*p3, *p4, *p1):
        return True
    if d2 == 0 and on_segment(*p3, *p4, *p2):
        return True
    if d3 == 0 and on_segment(*p1, *p2, *p3):
        return True
    if d4 == 0 and on_segment(*p1, *p2, *p4):
        return True
    return False


def _polylines_intersect(a: Sequence[Point], b: Sequence[Point]) -> bool:
    for i in range(len(a) - 1):
        for j in range(len(b) - 1):
            if _segments_intersect(a[i], a[i + 1], b[j], b[j + 1]):
                return True
    return False


def parse_annotation(
    text: str, *, width: Optional[int] = None, height: Optional[int] = None
) -> MembraneAnnotation:
    """Parse annotation JSON; validate bounds when image dims are given.

    Raises AnnotationSyntaxError for malformed content (with line number) and
    AnnotationGeometryError for invariant violations (naming the offending
    key/index).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationSyntaxError(f"line {e.lineno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise AnnotationSyntaxError("top-level value must be a JSON object")

    def read_polyline(key: str) -> tuple[Point, ...]:
        raw = doc.get(key)
        if not isinstance(raw, list):
            raise AnnotationSyntaxError(f"{key}: expected a list of [x, y] pairs")
        pts = []
        for i, item in enumerate(raw):
            if (
                not isinstance(item, list)
                or len(item) != 2
                or not all(isinstance(v, (int, float)) for v in item)
            ):
                raise AnnotationSyntaxError(f"{key}[{i}]: expected an [x, y] pair")
            pts.append((float(item[0]), float(item[1])))
        return tuple(pts)

    basal = read_polyline("basal")
    upper = read_polyline("upper")
    papillae = []
    raw_pap = doc.get("papillae", [])
    if not isinstance(raw_pap, list):
        raise AnnotationSyntaxError("papillae: expected a list of circle objects")
    for i, item in enumerate(raw_pap):
        if not isinstance(item, dict) or not {"cx", "cy", "r"} <= set(item):
            raise AnnotationSyntaxError(f"papillae[{i}]: expected keys cx, cy, r")
        papillae.append(Papilla(float(item["cx"]), float(item["cy"]), float(item["r"])))

    ann = MembraneAnnotation(basal=basal, upper=upper, papillae=tuple(papillae))
    if width is not None and height is not None:
        ann.validate_bounds(width, height)
    return ann


def load_annotation(
    path: str | Path, *, width: Optional[int] = None, height: Optional[int] = None
) -> MembraneAnnotation:
    return parse_annotation(
        Path(path).read_text(encoding="utf-8"), width=width, height=height
    )


# --- geometry ---------------------------------------------------------------


def polyline_distance(
    px: np.ndarray, py: np.ndarray, polyline: Sequence[Point]
) -> np.ndarray:
    """Exact min distance from points to a polyline (min over its segments)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    best = np.full(px.shape, np.inf)
    for (x0, y0), (x1, y1) in zip(polyline[:-1], polyline[1:]):
        dx, dy = x1 - x0, y1 - y0
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            d = np.hypot(px - x0, py - y0)
        else:
            t = ((px - x0) * dx + (py - y0) * dy) / seg2
            t = np.clip(t, 0.0, 1.0)
            d = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
        np.minimum(best, d, out=best)
    return best


def nearest_segment(p: Point, polyline: Sequence[Point]) -> int:
    """Index i of the polyline segment (i, i+1) nearest to p."""
    px = np.asarray([p[0]])
    py = np.asarray([p[1]])
    best_i, best_d = 0, np.inf
    for i in range(len(polyline) - 1):
        d = polyline_distance(px, py, polyline[i : i + 2])[0]
        if d < best_d:
            best_i, best_d = i, d
    return best_i


def epithelium_polygon(a: MembraneAnnotation) -> np.ndarray:
    """Closed polygon bounded by the two membranes, as an (n, 2) xy array.

    The upper polyline is walked in whichever direction yields the shorter
    pair of connecting side edges, so annotations drawn in either direction
    produce a simple polygon.
    """
    b = np.asarray(a.basal, dtype=np.float64)
    u = np.asarray(a.upper, dtype=np.float64)

    def seglen(p, q):
        return float(np.hypot(p[0] - q[0], p[1] - q[1]))

    same_direction = seglen(b[-1], u[-1]) + seglen(b[0], u[0]) <= seglen(
        b[-1], u[0]
    ) + seglen(b[0], u[-1])
    top = u[::-1] if same_direction else u
    return np.vstack([b, top])


def points_in_polygon(
    px: np.ndarray, py: np.ndarray, polygon: np.ndarray
) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorized over points."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        crosses = (y0 > py) != (y1 > py)
        if not crosses.any():
            continue
        denom = np.where(crosses, y1 - y0, 1.0)
        x_int = x0 + (x1 - x0) * (py - y0) / denom
        inside ^= crosses & (px < x_int)
    return inside


def relative_depth(
    px: np.ndarray, py: np.ndarray, a: MembraneAnnotation
) -> tuple[np.ndarray, np.ndarray]:
    """Relative depth t = d_basal / (d_basal + d_upper) and insidedness.

    A point counts as inside when it falls within the membrane-bounded
    polygon or lies exactly on a membrane (distance below a tiny epsilon,
    so on-membrane points are never lost to ray-cast boundary ambiguity).
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    db = polyline_distance(px, py, a.basal)
    du = polyline_distance(px, py, a.upper)
    inside = points_in_polygon(px, py, epithelium_polygon(a))
    inside |= (db <= _MEMBRANE_EPS) | (du <= _MEMBRANE_EPS)
    t = db / np.maximum(db + du, _MEMBRANE_EPS)
    return t, inside


def region_codes(px: np.ndarray, py: np.ndarray, a: MembraneAnnotation) -> np.ndarray:
    """Band code per point: 0/1/2 for Lower/Middle/Upper, -1 outside.

    Bands split relative depth at exactly 1/3 and 2/3 with lower-closed
    intervals: Lower is t < 1/3, Middle is 1/3 <= t < 2/3, Upper is t >= 2/3.
    """
    t, inside = relative_depth(px, py, a)
    codes = np.where(t < 1.0 / 3.0, 0, np.where(t < 2.0 / 3.0, 1, 2)).astype(np.int8)
    codes[~inside] = -1
    return codes


def region_of_point(p: Point, a: MembraneAnnotation) -> Optional[EpithelialRegion]:
    """Band of a single point, or None when outside the epithelium."""
    code = int(region_codes(np.asarray([p[0]]), np.asarray([p[1]]), a)[0])
    if code < 0:
        return None
    return REGIONS[code]


def region_map(a: MembraneAnnotation, width: int, height: int) -> np.ndarray:
    """(height, width) int8 array of band codes at pixel centers (-1 outside)."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return region_codes(xs.ravel(), ys.ravel(), a).reshape(height, width)


def in_papilla(p: Point, a: MembraneAnnotation) -> bool:
    """True iff p lies within (closed-disk) any papilla circle."""
    x, y = p
    return any((x - q.cx) ** 2 + (y - q.cy) ** 2 <= q.r * q.r for q in a.papillae)


def papilla_mask(a: MembraneAnnotation, width: int, height: int) -> np.ndarray:
    """(height, width) bool array marking pixels inside any papilla disk."""
    mask = np.zeros((height, width), dtype=bool)
    if not a.papillae:
        return mask
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    for q in a.papillae:
        mask |= (xs[None, :] - q.cx) ** 2 + (ys[:, None] - q.cy) ** 2 <= q.r * q.r
    return mask
