"""Binary nucleus-mask extraction from an RGB patch.

Chain: 9x9 median filter, SLIC superpixels in RGB space, per-superpixel
intensity thresholding (nuclei are the dark population), then small-component
removal and morphological closing. Connectivity is 8-connected throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from cadas.model import SepImage, grayscale_intensity

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class SegmentationError(Exception):
    pass


@dataclass(eq=False)
class BinaryMask:
    """Per-pixel foreground flags; foreground marks nucleus candidates."""

    bits: np.ndarray  # (h, w) bool

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise SegmentationError("mask must be 2-D")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def save(self, path: str | Path) -> None:
        """Write as a 1-bit PNG."""
        Image.fromarray(self.bits).convert("1").save(str(path), "PNG")

    @classmethod
    def from_file(cls, path: str | Path) -> "BinaryMask":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("1"), dtype=bool)
        return cls(bits=arr)


@dataclass(eq=False)
class SuperpixelMap:
    """Superpixel labeling of one image.

    labels are dense ids in [0, n); centers holds one row per superpixel:
    (mean r, mean g, mean b, mean x, mean y).
    """

    labels: np.ndarray  # (h, w) int32
    k: int  # requested count
    centers: np.ndarray  # (n, 5) float64

    def __post_init__(self) -> None:
        self.labels.setflags(write=False)
        self.centers.setflags(write=False)

    @property
    def n_superpixels(self) -> int:
        return len(self.centers)


# --- median filter ----------------------------------------------------------


def median_filter_array(arr: np.ndarray, window: int = 9) -> np.ndarray:
    """Per-channel square median filter with edge replication at borders."""
    if window < 3 or window % 2 == 0:
        raise SegmentationError(f"window must be odd and >= 3, got {window}")
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return ndimage.median_filter(arr, size=(window, window), mode="nearest")
    return ndimage.median_filter(arr, size=(window, window, 1), mode="nearest")


def median_filter(img: SepImage, window: int = 9) -> SepImage:
    out = median_filter_array(img.pixels, window)
    return SepImage(pixels=out.astype(np.uint8), id=img.id)


# --- SLIC -------------------------------------------------------------------


def grid_interval(width: int, height: int, k: int) -> float:
    """Superpixel grid spacing for k superpixels on a width x height image."""
    return math.sqrt(width * height / k)


def combined_distance(
    d_rgb: np.ndarray,
    d_xy: np.ndarray,
    n: float,
    m: float,
    mode: str = "standard",
) -> np.ndarray:
    """Joint color/plane distance used by the superpixel assignment step.

    "standard" scales the plane distance by the grid interval:
    d_rgb + (m / n) * d_xy. "paper-literal" keeps the published form
    d_rgb + m / (n * d_xy), which blows up as d_xy -> 0; that case maps
    to +inf so a same-position candidate never wins under this mode.
    """
    if mode == "standard":
        return d_rgb + (m / n) * np.asarray(d_xy)
    if mode == "paper-literal":
        d_xy = np.asarray(d_xy, dtype=np.float64)
        with np.errstate(divide="ignore"):
            plane = np.where(d_xy > 0, m / (n * d_xy), np.inf)
        return d_rgb + plane
    raise SegmentationError(f"unknown distance mode: {mode!r}")


def slic_superpixels(
    img: SepImage,
    k: int = 3000,
    m: float = 10.0,
    distance: str = "standard",
    max_iter: int = 10,
) -> SuperpixelMap:
    """Iterative local clustering on (r, g, b, x, y) with grid-seeded centers.

    Centers start on an N-spaced grid (N = sqrt(w*h/k)); each iteration
    assigns pixels within a 2Nx2N window around every center to the center of
    least combined distance, then recenters. Stops when no center moves a
    full pixel or after max_iter rounds. Connectivity enforcement reattaches
    orphan fragments to the nearest adjacent superpixel and renumbers labels
    densely, so every output superpixel is one 8-connected region.
    """
    h, w = img.height, img.width
    npx = h * w
    if not 1 <= k <= npx:
        raise SegmentationError(f"k must be in [1, {npx}], got {k}")

    arr = img.pixels.astype(np.float64)
    n_interval = grid_interval(w, h, k)
    nx = max(1, int(w / n_interval))
    ny = max(1, int(h / n_interval))
    gx = np.clip(np.round((np.arange(nx) + 0.5) * w / nx - 0.5), 0, w - 1).astype(int)
    gy = np.clip(np.round((np.arange(ny) + 0.5) * h / ny - 0.5), 0, h - 1).astype(int)
    cx, cy = [g.ravel().astype(np.float64) for g in np.meshgrid(gx, gy)]
    crgb = arr[cy.astype(int), cx.astype(int)]
    n_centers = len(cx)

    win = max(1, int(math.ceil(n_interval)))
    labels = np.full((h, w), -1, dtype=np.int32)
    for _ in range(max_iter):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for ci in range(n_centers):
            x0 = max(0, int(cx[ci]) - win)
            x1 = min(w, int(cx[ci]) + win + 1)
            y0 = max(0, int(cy[ci]) - win)
            y1 = min(h, int(cy[ci]) + win + 1)
            sub = arr[y0:y1, x0:x1]
            d_rgb = np.sqrt(((sub - crgb[ci]) ** 2).sum(axis=-1))
            ys, xs = np.ogrid[y0:y1, x0:x1]
            d_xy = np.hypot(xs - cx[ci], ys - cy[ci])
            d = combined_distance(d_rgb, d_xy, n_interval, m, distance)
            region = best[y0:y1, x0:x1]
            better = d < region
            region[better] = d[better]
            labels[y0:y1, x0:x1][better] = ci

        _assign_stragglers(labels, cx, cy)

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n_centers).astype(np.float64)
        ys, xs = np.divmod(np.arange(npx), w)
        new_cx = np.bincount(flat, weights=xs, minlength=n_centers)
        new_cy = np.bincount(flat, weights=ys, minlength=n_centers)
        new_rgb = np.stack(
            [
                np.bincount(flat, weights=arr[..., c].ravel(), minlength=n_centers)
                for c in range(3)
            ],
            axis=1,
        )
        occupied = counts > 0
        new_cx[occupied] /= counts[occupied]
        new_cy[occupied] /= counts[occupied]
        new_rgb[occupied] /= counts[occupied, None]
        new_cx[~occupied] = cx[~occupied]
        new_cy[~occupied] = cy[~occupied]
        new_rgb[~occupied] = crgb[~occupied]

        movement = np.hypot(new_cx - cx, new_cy - cy).max()
        cx, cy, crgb = new_cx, new_cy, new_rgb
        if movement < 1.0:
            break

    labels = _enforce_connectivity(labels, cx, cy)
    centers = _superpixel_centers(labels, arr)
    return SuperpixelMap(labels=labels, k=k, centers=centers)


def _assign_stragglers(labels: np.ndarray, cx: np.ndarray, cy: np.ndarray) -> None:
    """Label any pixel left uncovered with its nearest center in the plane."""
    miss_r, miss_c = np.nonzero(labels < 0)
    if len(miss_r) == 0:
        return
    for r, c in zip(miss_r, miss_c):
        labels[r, c] = int(np.argmin(np.hypot(cx - c, cy - r)))


def _partition_components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected components of equal-label regions, ids dense from 0."""
    comp = np.full(labels.shape, -1, dtype=np.int32)
    next_id = 0
    slices = ndimage.find_objects(labels + 1)
    for lab, sl in enumerate(slices):
        if sl is None:
            continue
        mask = labels[sl] == lab
        cc, num = ndimage.label(mask, structure=EIGHT_CONNECTED)
        view = comp[sl]
        view[mask] = cc[mask] - 1 + next_id
        next_id += num
    return comp, next_id


def _enforce_connectivity(
    labels: np.ndarray, cx: np.ndarray, cy: np.ndarray
) -> np.ndarray:
    """Merge label fragments so each final label is a single region.

    Components are walked in raster order of their first pixel. The first
    component of each label keeps it; later fragments are merged into the
    already-finalized adjacent superpixel whose center is nearest to the
    fragment centroid. Output labels are renumbered densely in raster order.
    """
    comp, ncomp = _partition_components(labels)
    flat = comp.ravel()
    order_ids, first_idx = np.unique(flat, return_index=True)
    raster_order = order_ids[np.argsort(first_idx)]

    h, w = labels.shape
    sizes = np.bincount(flat, minlength=ncomp).astype(np.float64)
    ys, xs = np.divmod(np.arange(flat.size), w)
    cen_x = np.bincount(flat, weights=xs, minlength=ncomp) / sizes
    cen_y = np.bincount(flat, weights=ys, minlength=ncomp) / sizes
    old_of_comp = np.empty(ncomp, dtype=np.int64)
    old_of_comp[flat[first_idx]] = labels.ravel()[first_idx]

    adjacency = _component_adjacency(comp)

    final = np.full(ncomp, -1, dtype=np.int64)
    keeper_center: list[tuple[float, float]] = []
    used_old: set[int] = set()
    for cid in raster_order:
        ol = int(old_of_comp[cid])
        if ol not in used_old:
            used_old.add(ol)
            final[cid] = len(keeper_center)
            keeper_center.append((float(cx[ol]), float(cy[ol])))
            continue
        candidates = [n for n in adjacency.get(int(cid), ()) if final[n] >= 0]
        if not candidates:
            # isolated duplicate with no finalized neighbor: promote it
            final[cid] = len(keeper_center)
            keeper_center.append((cen_x[cid], cen_y[cid]))
            continue
        fx, fy = cen_x[cid], cen_y[cid]
        best = min(
            candidates,
            key=lambda n: (
                math.hypot(keeper_center[final[n]][0] - fx, keeper_center[final[n]][1] - fy),
                final[n],
            ),
        )
        final[cid] = final[best]
    return final[comp].astype(np.int32)


def _component_adjacency(comp: np.ndarray) -> dict[int, set[int]]:
    slid = (
        (comp[:, :-1], comp[:, 1:]),  # east
        (comp[:-1, :], comp[1:, :]),  # south
        (comp[:-1, :-1], comp[1:, 1:]),  # south-east
        (comp[:-1, 1:], comp[1:, :-1]),  # south-west
    )
    pairs = []
    for a, b in slid:
        diff = a != b
        pairs.append(np.stack([a[diff], b[diff]], axis=1))
    allp = np.vstack(pairs)
    adjacency: dict[int, set[int]] = {}
    for u, v in np.unique(allp, axis=0):
        adjacency.setdefault(int(u), set()).add(int(v))
        adjacency.setdefault(int(v), set()).add(int(u))
    return adjacency


def _superpixel_centers(labels: np.ndarray, arr: np.ndarray) -> np.ndarray:
    n = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    h, w = labels.shape
    ys, xs = np.divmod(np.arange(flat.size), w)
    centers = np.empty((n, 5), dtype=np.float64)
    for c in range(3):
        centers[:, c] = np.bincount(flat, weights=arr[..., c].ravel(), minlength=n) / counts
    centers[:, 3] = np.bincount(flat, weights=xs, minlength=n) / counts
    centers[:, 4] = np.bincount(flat, weights=ys, minlength=n) / counts
    return centers


# --- thresholding -----------------------------------------------------------


def superpixel_mean_intensity(sp: SuperpixelMap, img: SepImage) -> np.ndarray:
    """Mean grayscale intensity per superpixel."""
    intensity = grayscale_intensity(img.pixels).ravel()
    flat = sp.labels.ravel()
    n = sp.n_superpixels
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    return np.bincount(flat, weights=intensity, minlength=n) / counts


def otsu_threshold(values: np.ndarray) -> float:
    """Exact Otsu split of a 1-D sample: the midpoint between consecutive
    distinct values that maximizes between-class variance. Degenerate
    single-valued input returns that value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        raise SegmentationError("otsu_threshold needs at least one value")
    distinct = np.unique(v)
    if len(distinct) == 1:
        return float(distinct[0])
    csum = np.cumsum(v)
    total = csum[-1]
    idx = np.arange(1, n)  # split after v[idx-1]
    w0 = idx / n
    w1 = 1.0 - w0
    mu0 = csum[:-1][idx - 1] / idx
    mu1 = (total - csum[:-1][idx - 1]) / (n - idx)
    var_between = w0 * w1 * (mu0 - mu1) ** 2
    gaps = v[1:] > v[:-1]
    var_between = np.where(gaps, var_between, -np.inf)
    best = int(np.argmax(var_between))
    return float((v[best] + v[best + 1]) / 2.0)


@dataclass(frozen=True)
class ForegroundResult:
    mask: BinaryMask
    threshold: float
    degenerate: bool  # all superpixels identical intensity


def foreground_mask(
    sp: SuperpixelMap,
    img: SepImage,
    mode: str = "otsu",
    value: Optional[float] = None,
) -> ForegroundResult:
    """Mark dark superpixels (nuclei stain dark) as foreground.

    A superpixel is foreground iff its mean intensity is strictly below the
    threshold. Threshold comes from Otsu over superpixel means unless a fixed
    value is configured. When every superpixel has the same intensity the
    mask is empty and the degenerate flag is set.
    """
    if sp.labels.shape != (img.height, img.width):
        raise SegmentationError(
            f"superpixel map {sp.labels.shape} does not match image "
            f"{(img.height, img.width)}"
        )
    means = superpixel_mean_intensity(sp, img)
    degenerate = bool(np.ptp(means) == 0.0)
    if mode == "fixed":
        if value is None:
            raise SegmentationError("fixed threshold mode requires a value")
        thr = float(value)
    elif mode == "otsu":
        thr = otsu_threshold(means) if not degenerate else float(means[0])
    else:
        raise SegmentationError(f"unknown threshold mode: {mode!r}")
    if degenerate:
        bits = np.zeros(sp.labels.shape, dtype=bool)
    else:
        bits = (means < thr)[sp.labels]
    return ForegroundResult(mask=BinaryMask(bits=bits), threshold=thr, degenerate=degenerate)


# --- cleanup ----------------------------------------------------------------


def disk_element(radius: int) -> np.ndarray:
    """Disk structuring element: offsets with dx^2 + dy^2 <= radius^2."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= r * r


def remove_small_components(bits: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected foreground components with area < min_area."""
    lab, n = ndimage.label(bits, structure=EIGHT_CONNECTED)
    if n == 0:
        return bits.copy()
    areas = np.bincount(lab.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[lab]


def binary_closing(bits: np.ndarray, radius: int) -> np.ndarray:
    """Dilation then erosion with a disk, on an implicitly zero-padded canvas,
    cropped back to the image frame."""
    if radius <= 0:
        return bits.copy()
    se = disk_element(radius)
    pad = 2 * radius
    padded = np.pad(bits, pad, mode="constant", constant_values=False)
    dilated = ndimage.binary_dilation(padded, structure=se)
    eroded = ndimage.binary_erosion(dilated, structure=se, border_value=0)
    return eroded[pad:-pad, pad:-pad]


def cleanup_mask(mask: BinaryMask, min_area: int = 50, close_radius: int = 3) -> BinaryMask:
    """Remove components smaller than min_area, then close with a disk."""
    bits = remove_small_components(mask.bits, min_area)
    bits = binary_closing(bits, close_radius)
    return BinaryMask(bits=bits)
