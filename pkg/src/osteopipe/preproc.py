"""Study preprocessing: table removal, leg segmentation, per-leg ROI crops.

Slice-wise flow: grayscale opening with a disk structuring element, Otsu
thresholding of the opened slice, retention of the largest components away
from the table region.  The retained components are then aggregated over
slices into per-leg groups, and each leg is cropped, min-max normalized
slice-wise and resized to a square ROI with nearest-neighbor interpolation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .types import Volume

log = logging.getLogger(__name__)

# Fraction of image height treated as the table region: components whose
# centroid row falls in the bottom 20% are never counted as legs.
TABLE_GUARD_FRACTION = 0.2

# Padding applied to the leg bounding box side before cropping.
CROP_PAD_FRACTION = 0.1

_CONN8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class PreprocConfig:
    opening_radius_px: int = 10
    roi_size: int = 256
    component_count: int = 2
    otsu_bins: int = 256

    def __post_init__(self):
        if self.opening_radius_px < 1:
            raise ValueError("opening_radius_px must be >= 1")
        if self.roi_size < 8:
            raise ValueError("roi_size must be >= 8")
        if self.component_count not in (1, 2):
            raise ValueError("component_count must be 1 or 2")
        if self.otsu_bins < 2:
            raise ValueError("otsu_bins must be >= 2")


def disk_footprint(radius: int) -> np.ndarray:
    """Discrete disk {(dx, dy): dx^2 + dy^2 <= r^2} as a boolean footprint."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (xx * xx + yy * yy) <= radius * radius


def morphological_open_disk(slice2d: np.ndarray, radius: int) -> np.ndarray:
    """Grayscale opening (erosion then dilation) with a disk footprint.

    Reflect borders keep the operation anti-extensive and exactly
    idempotent on the slice.
    """
    fp = disk_footprint(radius)
    eroded = ndimage.grey_erosion(slice2d, footprint=fp, mode="reflect")
    return ndimage.grey_dilation(eroded, footprint=fp, mode="reflect")


def otsu_threshold(slice2d: np.ndarray, bins: int = 256) -> tuple[float, np.ndarray]:
    """Otsu threshold over a bin-quantized histogram.

    Returns ``(threshold, mask)`` where the threshold maximizes
    between-class variance over all histogram cut points (first maximizer
    on ties) and ``mask = slice > threshold``.  Raises on constant input.
    """
    arr = np.asarray(slice2d, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        raise ValueError("degenerate histogram: slice has a single intensity value")
    if bins < 2:
        raise ValueError("bins must be >= 2")

    counts, edges = np.histogram(arr, bins=bins, range=(lo, hi))
    counts = counts.astype(np.int64)
    n_total = int(counts.sum())
    idx = np.arange(bins, dtype=np.int64)
    m_total = int((counts * idx).sum())

    # Between-class variance in bin-index units up to a constant factor:
    #   w0*w1*(mu0-mu1)^2 = (M_t*N - S_t*M)^2 / (S_t*(N-S_t))
    # with integer cumulative mass S_t and first moment M_t, which keeps the
    # argmax deterministic under exact tie conditions.
    s_cum = np.cumsum(counts)[:-1]
    m_cum = np.cumsum(counts * idx)[:-1]
    valid = (s_cum > 0) & (s_cum < n_total)
    diff = (m_cum * n_total - s_cum * m_total).astype(np.float64)
    denom = (s_cum * (n_total - s_cum)).astype(np.float64)
    sigma_b = np.where(valid, diff * diff / np.where(valid, denom, 1.0), -1.0)
    cut = int(np.argmax(sigma_b))
    if sigma_b[cut] < 0:
        raise ValueError("degenerate histogram: all mass in one bin")
    threshold = float(edges[cut + 1])
    return threshold, arr > threshold


def largest_top_components(mask: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest 8-connected components outside the table region.

    Components whose centroid row lies in the bottom
    ``TABLE_GUARD_FRACTION`` of the image are excluded before ranking by
    area (descending, ties by smaller label).  An empty mask passes
    through unchanged.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_CONN8)
    if n == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel())[1:]
    row_sums = ndimage.sum_labels(
        np.arange(mask.shape[0])[:, None] * np.ones_like(mask, dtype=np.float64),
        labels,
        index=np.arange(1, n + 1),
    )
    centroid_rows = row_sums / areas
    guard = TABLE_GUARD_FRACTION
    eligible = [
        lab
        for lab in range(1, n + 1)
        if centroid_rows[lab - 1] < (1.0 - guard) * mask.shape[0]
    ]
    eligible.sort(key=lambda lab: (-areas[lab - 1], lab))
    keep = set(eligible[:k])
    return np.isin(labels, sorted(keep))


@dataclass(frozen=True)
class CropInfo:
    """Geometry of one leg ROI crop, enough to map ROI pixels back."""

    side: str  # "left" or "right"
    x0: int
    y0: int
    size_px: int
    roi_size: int

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "x0": self.x0,
            "y0": self.y0,
            "size_px": self.size_px,
            "roi_size": self.roi_size,
        }


def _nn_index_map(src_size: int, dst_size: int) -> np.ndarray:
    return np.minimum(
        (np.arange(dst_size) * src_size) // dst_size, src_size - 1
    ).astype(np.intp)


def nn_resize(slice2d: np.ndarray, out_size: int) -> np.ndarray:
    """Nearest-neighbor resize of a square slice to out_size x out_size."""
    src = np.asarray(slice2d)
    ry = _nn_index_map(src.shape[0], out_size)
    rx = _nn_index_map(src.shape[1], out_size)
    return src[np.ix_(ry, rx)]


def normalize_slice(slice2d: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; constant slices map to all zeros."""
    arr = np.asarray(slice2d, dtype=np.float32)
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


@dataclass
class _ComponentObs:
    z: int
    area: int
    cx: float
    cy: float
    bbox_side: int


def _slice_components(mask2d: np.ndarray, z: int) -> list[_ComponentObs]:
    labels, n = ndimage.label(mask2d, structure=_CONN8)
    out = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        side = int(max(ys.max() - ys.min() + 1, xs.max() - xs.min() + 1))
        out.append(
            _ComponentObs(z=z, area=len(ys), cx=float(xs.mean()), cy=float(ys.mean()), bbox_side=side)
        )
    out.sort(key=lambda c: c.cx)
    return out


def _group_components(per_slice: list[list[_ComponentObs]], want: int) -> list[list[_ComponentObs]]:
    """Aggregate per-slice components into `want` leg groups by x position."""
    if want == 1:
        merged = [c for comps in per_slice for c in comps]
        return [merged] if merged else []

    groups: list[list[_ComponentObs]] = [[], []]
    deferred: list[_ComponentObs] = []
    for comps in per_slice:
        if len(comps) >= 2:
            groups[0].append(comps[0])
            groups[1].append(comps[-1])
            deferred.extend(comps[1:-1])
        elif len(comps) == 1:
            deferred.append(comps[0])
    if not groups[0]:
        # No slice ever showed two components: everything is one leg.
        merged = deferred
        return [merged] if merged else []
    means = [float(np.mean([c.cx for c in g])) for g in groups]
    for c in deferred:
        nearest = int(np.argmin([abs(c.cx - m) for m in means]))
        groups[nearest].append(c)
    return [g for g in groups if g]


def split_leg_rois(
    volume: Volume, leg_masks: np.ndarray, cfg: PreprocConfig
) -> tuple[list[Volume], list[CropInfo], list[str]]:
    """Crop per-leg square ROIs, normalize slice-wise and resize.

    ``leg_masks`` is the (nz, ny, nx) boolean stack of retained components.
    Components are aggregated over slices by centroid x (smaller mean x =
    left leg); each leg is cropped around its 3D centroid with a fixed
    square window (largest member bounding-box side, padded 10%, clamped to
    the image), then every slice is min-max normalized and NN-resized.

    Returns (rois, crop descriptions, warnings).  Fewer groups than
    ``cfg.component_count`` yields fewer ROIs plus a warning record.
    """
    if leg_masks.shape != volume.data.shape:
        raise ValueError("leg masks must be aligned to the volume")
    nz, ny, nx = volume.data.shape
    per_slice = [_slice_components(leg_masks[z], z) for z in range(nz)]
    groups = _group_components(per_slice, cfg.component_count)

    warnings: list[str] = []
    if len(groups) < cfg.component_count:
        warnings.append(
            f"expected {cfg.component_count} leg components, found {len(groups)}"
        )
        log.warning(warnings[-1])

    groups.sort(key=lambda g: float(np.mean([c.cx for c in g])))
    side_names = ["left", "right"] if len(groups) == 2 else ["left"] * len(groups)

    sx, sy, sz = volume.spacing
    rois: list[Volume] = []
    crops: list[CropInfo] = []
    for name, group in zip(side_names, groups):
        total_area = float(sum(c.area for c in group))
        cx = sum(c.cx * c.area for c in group) / total_area
        cy = sum(c.cy * c.area for c in group) / total_area
        side = int(np.ceil(max(c.bbox_side for c in group) * (1.0 + CROP_PAD_FRACTION)))
        side = max(1, min(side, nx, ny))
        x0 = int(np.clip(round(cx - side / 2), 0, nx - side))
        y0 = int(np.clip(round(cy - side / 2), 0, ny - side))

        out = np.empty((nz, cfg.roi_size, cfg.roi_size), dtype=np.float32)
        for z in range(nz):
            crop = volume.data[z, y0 : y0 + side, x0 : x0 + side]
            out[z] = nn_resize(normalize_slice(crop), cfg.roi_size)
        scale = side / cfg.roi_size
        rois.append(Volume(out, spacing=(sx * scale, sy * scale, sz)))
        crops.append(CropInfo(side=name, x0=x0, y0=y0, size_px=side, roi_size=cfg.roi_size))
    return rois, crops, warnings


def project_mask_to_roi(mask3d: np.ndarray, crop: CropInfo) -> np.ndarray:
    """Apply a leg crop + NN resize to a (nz, ny, nx) boolean mask.

    Useful for carrying ground-truth masks into ROI space for comparison.
    """
    nz = mask3d.shape[0]
    out = np.empty((nz, crop.roi_size, crop.roi_size), dtype=bool)
    for z in range(nz):
        window = mask3d[z, crop.y0 : crop.y0 + crop.size_px, crop.x0 : crop.x0 + crop.size_px]
        out[z] = nn_resize(window, crop.roi_size)
    return out


@dataclass
class PreprocReport:
    """Per-slice thresholds/areas and crop geometry for one study."""

    slice_thresholds: list[float] = field(default_factory=list)
    component_areas: list[list[int]] = field(default_factory=list)
    crops: list[CropInfo] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    leg_masks: np.ndarray | None = None  # not serialized

    def to_dict(self) -> dict:
        return {
            "slice_thresholds": self.slice_thresholds,
            "component_areas": self.component_areas,
            "crops": [c.to_dict() for c in self.crops],
            "warnings": self.warnings,
        }


def preprocess_study(volume: Volume, cfg: PreprocConfig | None = None) -> tuple[list[Volume], PreprocReport]:
    """Run the full preprocessing pipeline on one study.

    Slice-wise opening -> Otsu -> component retention, then leg splitting.
    Degenerate slices surface as errors carrying the slice index.
    """
    cfg = cfg or PreprocConfig()
    nz, ny, nx = volume.data.shape
    report = PreprocReport()
    leg_masks = np.zeros_like(volume.data, dtype=bool)
    for z in range(nz):
        opened = morphological_open_disk(volume.data[z], cfg.opening_radius_px)
        try:
            threshold, mask = otsu_threshold(opened, cfg.otsu_bins)
        except ValueError as exc:
            raise ValueError(f"slice {z}: {exc}") from exc
        kept = largest_top_components(mask, cfg.component_count)
        labels, n = ndimage.label(kept, structure=_CONN8)
        areas = np.bincount(labels.ravel())[1:].tolist() if n else []
        report.slice_thresholds.append(threshold)
        report.component_areas.append([int(a) for a in areas])
        leg_masks[z] = kept

    rois, crops, warnings = split_leg_rois(volume, leg_masks, cfg)
    report.crops = crops
    report.warnings.extend(warnings)
    report.leg_masks = leg_masks
    return rois, report
