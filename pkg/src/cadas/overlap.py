"""Splitting merged nucleus blobs into individual elliptical cells.

Seeds come from local maxima of the Euclidean distance transform; pixel
coordinates are multiplexed (repeated in proportion to their distance value)
so the point cloud concentrates mass at cell interiors, and a Gaussian
mixture fitted by EM yields one ellipse per seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from cadas.segmentation import EIGHT_CONNECTED, BinaryMask

_LL_SLACK = 1e-9  # float-arithmetic slack on the EM monotonicity check


class OverlapError(Exception):
    pass


@dataclass(eq=False)
class DistanceField:
    """Euclidean distance to the nearest background pixel (0 on background).

    Values are sqrt of exact integer squared distances. A mask with no
    background at all yields +inf everywhere (no nearest background exists).
    """

    values: np.ndarray  # (h, w) float64

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class CellEllipse:
    """One resolved nucleus.

    center is (x, y) in pixels; orientation is the angle from the image
    x-axis to the major axis, in [0, pi). pixels, when present, is an (n, 2)
    array of (row, col) indices of the pixels assigned to this cell.
    """

    center: tuple[float, float]
    semi_major: float
    semi_minor: float
    orientation: float
    weight: float
    pixel_count: int = 0
    pixels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not (self.semi_major >= self.semi_minor > 0):
            raise OverlapError(
                f"invalid semi-axes: major={self.semi_major}, minor={self.semi_minor}"
            )
        if not (0.0 <= self.orientation < math.pi):
            raise OverlapError(f"orientation {self.orientation} outside [0, pi)")
        if self.pixels is not None:
            self.pixels.setflags(write=False)


def distance_transform(mask: BinaryMask) -> DistanceField:
    """Exact Euclidean distance transform of the foreground."""
    bits = mask.bits
    if not bits.any():
        return DistanceField(values=np.zeros(bits.shape, dtype=np.float64))
    if bits.all():
        return DistanceField(values=np.full(bits.shape, np.inf))
    nearest = ndimage.distance_transform_edt(
        bits, return_distances=False, return_indices=True
    )
    rows, cols = np.indices(bits.shape)
    d2 = (rows - nearest[0]) ** 2 + (cols - nearest[1]) ** 2
    return DistanceField(values=np.sqrt(d2.astype(np.float64)))


def find_local_maxima(field: DistanceField, r: float) -> list[tuple[int, int]]:
    """Foreground pixels whose value tops every value in the disk of radius r.

    The disk is {(u, v): (i-u)^2 + (j-v)^2 <= r^2}, clipped at the image
    border. A connected plateau of equal maxima collapses to its first pixel
    in row-major order. Returns (x, y) coordinates in raster order.
    """
    if r < 1:
        raise OverlapError(f"radius must be >= 1, got {r}")
    v = field.values
    footprint = _disk_footprint(r)
    neighborhood_max = ndimage.maximum_filter(
        v, footprint=footprint, mode="constant", cval=0.0
    )
    candidates = (v > 0) & (v >= neighborhood_max)
    if not candidates.any():
        return []

    points: list[tuple[int, int, int]] = []  # (raster index, x, y)
    w = v.shape[1]
    for value in np.unique(v[candidates]):
        plateau = candidates & (v == value)
        lab, n = ndimage.label(plateau, structure=EIGHT_CONNECTED)
        for comp in range(1, n + 1):
            idx = int(np.flatnonzero((lab == comp).ravel())[0])
            points.append((idx, idx % w, idx // w))
    points.sort()
    return [(x, y) for _, x, y in points]


def _disk_footprint(r: float) -> np.ndarray:
    ir = int(math.floor(r))
    yy, xx = np.mgrid[-ir : ir + 1, -ir : ir + 1]
    return (xx * xx + yy * yy) <= r * r


def multiplex_coordinates(
    field: DistanceField, pixels: np.ndarray, alpha_cap: int = 32
) -> np.ndarray:
    """Repeat each pixel's (x, y) coordinate round(distance) times.

    pixels is an (n, 2) array of (row, col) indices of one component. The cap
    bounds the repeat count on pathologically thick blobs. Returns an (M, 2)
    float array of (x, y) points; empty input gives an empty array.
    """
    pixels = np.asarray(pixels)
    if len(pixels) == 0:
        return np.empty((0, 2), dtype=np.float64)
    d = field.values[pixels[:, 0], pixels[:, 1]]
    alpha = np.minimum(np.rint(d), alpha_cap).astype(np.int64)
    xy = np.stack([pixels[:, 1], pixels[:, 0]], axis=1).astype(np.float64)
    return np.repeat(xy, alpha, axis=0)


@dataclass(frozen=True)
class GaussComponent:
    weight: float
    mean: np.ndarray  # (2,)
    cov: np.ndarray  # (2, 2)


@dataclass(frozen=True)
class GmmFit:
    components: tuple[GaussComponent, ...]
    log_likelihoods: tuple[float, ...]
    iterations: int
    converged: bool
    n_dropped: int


def fit_gmm(
    points: np.ndarray,
    n_components: int,
    init: Sequence[tuple[float, float]],
    init_var: float = 50.0,
    tol: float = 1e-4,
    max_iter: int = 100,
    reg: float = 1e-3,
) -> GmmFit:
    """EM fit of a 2-D Gaussian mixture.

    Means start at the given seed centers, covariances at init_var * I,
    weights uniform. Iterates until the log-likelihood improves by less than
    tol or max_iter rounds pass. Each M-step adds reg * I to the covariances.
    Components whose weight collapses below 1e-6 are dropped (weights
    renormalized); the count is reported in the fit. The log-likelihood is
    checked non-decreasing at every step up to float slack.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise OverlapError("points must be an (n, 2) array")
    if n_components < 1:
        raise OverlapError(f"need at least one component, got {n_components}")
    if len(pts) < 3 * n_components:
        raise OverlapError(
            f"need at least {3 * n_components} points for {n_components} components, got {len(pts)}"
        )
    means = np.asarray(init, dtype=np.float64).copy()
    if means.shape != (n_components, 2):
        raise OverlapError("init must supply one (x, y) center per component")
    if len(np.unique(means, axis=0)) != n_components:
        raise OverlapError("init centers must be distinct")

    covs = np.tile(np.eye(2) * float(init_var), (n_components, 1, 1))
    weights = np.full(n_components, 1.0 / n_components)

    ll_trace: list[float] = []
    n_dropped = 0
    converged = False
    iterations = 0
    prev_ll: Optional[float] = None
    for iterations in range(1, max_iter + 1):
        log_resp, ll = _e_step(pts, weights, means, covs)
        ll_trace.append(ll)
        if prev_ll is not None:
            if ll < prev_ll - _LL_SLACK * max(1.0, abs(prev_ll)):
                raise OverlapError(
                    f"EM log-likelihood decreased: {prev_ll} -> {ll}"
                )
            if ll - prev_ll < tol:
                converged = True
                break
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0)
        weights = nk / nk.sum()
        means = (resp.T @ pts) / nk[:, None]
        for k in range(len(weights)):
            diff = pts - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
            covs[k] += np.eye(2) * reg

        alive = weights >= 1e-6
        if not alive.all():
            n_dropped += int((~alive).sum())
            weights = weights[alive]
            weights = weights / weights.sum()
            means = means[alive]
            covs = covs[alive]
            prev_ll = None  # model changed; restart the monotonicity baseline
            if len(weights) == 0:
                raise OverlapError("all mixture components collapsed")
            continue
        prev_ll = ll

    weights = weights / weights.sum()
    comps = tuple(
        GaussComponent(weight=float(w), mean=m.copy(), cov=c.copy())
        for w, m, c in zip(weights, means, covs)
    )
    return GmmFit(
        components=comps,
        log_likelihoods=tuple(ll_trace),
        iterations=iterations,
        converged=converged,
        n_dropped=n_dropped,
    )


def _e_step(
    pts: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: np.ndarray
) -> tuple[np.ndarray, float]:
    """Log responsibilities and total log-likelihood for current parameters."""
    n, k = len(pts), len(weights)
    log_joint = np.empty((n, k))
    for j in range(k):
        log_joint[:, j] = math.log(weights[j]) + _gauss_logpdf(pts, means[j], covs[j])
    top = log_joint.max(axis=1, keepdims=True)
    log_norm = top[:, 0] + np.log(np.exp(log_joint - top).sum(axis=1))
    return log_joint - log_norm[:, None], float(log_norm.sum())


def _gauss_logpdf(pts: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    if det <= 0:
        raise OverlapError("covariance is not positive definite")
    dx = pts[:, 0] - mean[0]
    dy = pts[:, 1] - mean[1]
    maha = (c * dx * dx - 2 * b * dx * dy + a * dy * dy) / det
    return -math.log(2 * math.pi) - 0.5 * math.log(det) - 0.5 * maha


def ellipse_from_moments(
    mean: np.ndarray, cov: np.ndarray, weight: float, scale: float = 2.0
) -> CellEllipse:
    """Ellipse whose axes are the scaled principal standard deviations.

    Isotropic covariances (equal eigenvalues) report orientation 0.
    """
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] <= 0:
        raise OverlapError("covariance is not positive definite")
    major, minor = float(eigvals[1]), float(eigvals[0])
    if major - minor < 1e-12 * max(major, 1.0):
        theta = 0.0
    else:
        vx, vy = eigvecs[0, 1], eigvecs[1, 1]
        theta = math.atan2(vy, vx) % math.pi
        if theta >= math.pi:  # guard against fp wrap at the boundary
            theta = 0.0
    return CellEllipse(
        center=(float(mean[0]), float(mean[1])),
        semi_major=scale * math.sqrt(major),
        semi_minor=scale * math.sqrt(minor),
        orientation=theta,
        weight=float(weight),
    )


def extract_ellipses(
    components: Sequence[GaussComponent], scale: float = 2.0
) -> list[CellEllipse]:
    """Principal-axis ellipses of mixture components at the given
    Mahalanobis radius. Raises naming the component if a covariance is not
    positive definite."""
    out = []
    for i, comp in enumerate(components):
        try:
            out.append(ellipse_from_moments(comp.mean, comp.cov, comp.weight, scale))
        except OverlapError as e:
            raise OverlapError(f"component {i}: {e}") from None
    return out


def resolve_cells(
    mask: BinaryMask,
    r: float = 10.0,
    scale: float = 2.0,
    em_tol: float = 1e-4,
    em_max_iter: int = 100,
    alpha_cap: int = 32,
) -> list[CellEllipse]:
    """Resolve every 8-connected mask component into one or more cells.

    A component with a single distance-transform seed (or none surviving the
    disk test) becomes one ellipse from its pixel moments. Components with
    multiple seeds go through coordinate multiplexing and a seeded GMM; each
    pixel is then assigned to the component of highest posterior
    responsibility, so pixel counts over a component sum to its area.
    """
    bits = mask.bits
    field = distance_transform(mask)
    maxima = find_local_maxima(field, r) if bits.any() else []
    labels, n_comp = ndimage.label(bits, structure=EIGHT_CONNECTED)
    seeds_by_comp: dict[int, list[tuple[float, float]]] = {}
    for x, y in maxima:
        seeds_by_comp.setdefault(int(labels[y, x]), []).append((float(x), float(y)))

    cells: list[CellEllipse] = []
    slices = ndimage.find_objects(labels)
    for comp in range(1, n_comp + 1):
        sl = slices[comp - 1]
        local = labels[sl] == comp
        rows, cols = np.nonzero(local)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        pixels = np.stack([rows, cols], axis=1)
        seeds = seeds_by_comp.get(comp, [])
        if len(seeds) <= 1:
            cells.append(_moment_cell(pixels, scale))
            continue
        points = multiplex_coordinates(field, pixels, alpha_cap)
        fit = fit_gmm(
            points,
            len(seeds),
            init=seeds,
            init_var=r * r / 2.0,
            tol=em_tol,
            max_iter=em_max_iter,
        )
        ellipses = extract_ellipses(fit.components, scale)
        xy = np.stack([cols, rows], axis=1).astype(np.float64)
        log_resp, _ = _e_step(
            xy,
            np.array([c.weight for c in fit.components]),
            np.stack([c.mean for c in fit.components]),
            np.stack([c.cov for c in fit.components]),
        )
        assign = np.argmax(log_resp, axis=1)
        for k, ell in enumerate(ellipses):
            chosen = pixels[assign == k]
            if len(chosen) == 0:
                continue  # claimed no pixels; its mass sits under another cell
            cells.append(replace(ell, pixel_count=len(chosen), pixels=chosen))
    return cells


def _moment_cell(pixels: np.ndarray, scale: float) -> CellEllipse:
    xy = np.stack([pixels[:, 1], pixels[:, 0]], axis=1).astype(np.float64)
    mean = xy.mean(axis=0)
    if len(xy) == 1:
        cov = np.eye(2) * 1e-3
    else:
        cov = np.cov(xy, rowvar=False, bias=True) + np.eye(2) * 1e-3
    ell = ellipse_from_moments(mean, cov, weight=1.0, scale=scale)
    return replace(ell, pixel_count=len(pixels), pixels=pixels)


# --- persistence ------------------------------------------------------------

CELL_CSV_HEADER = [
    "sep_id",
    "cell_index",
    "cx",
    "cy",
    "a",
    "b",
    "theta",
    "weight",
    "pixel_count",
]


def write_cells_csv(cells: Sequence[CellEllipse], sep_id: str, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CELL_CSV_HEADER)
        for i, c in enumerate(cells):
            writer.writerow(
                [
                    sep_id,
                    i,
                    f"{c.center[0]:.6g}",
                    f"{c.center[1]:.6g}",
                    f"{c.semi_major:.6g}",
                    f"{c.semi_minor:.6g}",
                    f"{c.orientation:.6g}",
                    f"{c.weight:.6g}",
                    c.pixel_count,
                ]
            )


def read_cells_csv(path: str | Path) -> dict[str, list[CellEllipse]]:
    """Cells grouped by sep_id; pixel memberships are not persisted."""
    out: dict[str, list[CellEllipse]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.setdefault(row["sep_id"], []).append(
                CellEllipse(
                    center=(float(row["cx"]), float(row["cy"])),
                    semi_major=float(row["a"]),
                    semi_minor=float(row["b"]),
                    orientation=float(row["theta"]),
                    weight=float(row["weight"]),
                    pixel_count=int(row["pixel_count"]),
                )
            )
    return out
