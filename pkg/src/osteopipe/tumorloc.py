"""Affected-region localization from per-slice confidences.

The confidence array is smoothed (1D Gaussian), median-filtered, then
thresholded; surviving runs of positive slices define the tumor slice
span, which becomes an axis-aligned annotation box around the bone voxels
in that span.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .bonemesh import gaussian_kernel1d
from .types import BinaryMask, Box, ConfidenceSeries, TriMesh


@dataclass(frozen=True)
class TumorLocConfig:
    threshold: float = 0.95
    gaussian_sigma: float = 2.0
    median_kernel: int = 3
    min_run_length: int = 2
    filter_order: tuple[str, ...] = ("gaussian", "median")

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")
        if self.median_kernel < 1 or self.median_kernel % 2 == 0:
            raise ValueError("median_kernel must be odd and >= 1")
        if sorted(self.filter_order) != ["gaussian", "median"]:
            raise ValueError("filter_order must be a permutation of (gaussian, median)")


def smooth_confidences(series: ConfidenceSeries, sigma: float = 2.0) -> ConfidenceSeries:
    """1D Gaussian smoothing (reflect boundary), clamped back to [0, 1]."""
    if len(series) == 0:
        raise ValueError("cannot smooth an empty confidence series")
    kernel = gaussian_kernel1d(sigma)
    smoothed = ndimage.convolve1d(series.values, kernel, mode="reflect")
    return ConfidenceSeries(series.patient_id, np.clip(smoothed, 0.0, 1.0))


def median_filter_confidences(series: ConfidenceSeries, kernel: int = 3) -> ConfidenceSeries:
    """Sliding-window median with reflect boundary."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"median kernel must be odd, got {kernel}")
    if len(series) == 0:
        raise ValueError("cannot filter an empty confidence series")
    filtered = ndimage.median_filter(series.values, size=kernel, mode="reflect")
    return ConfidenceSeries(series.patient_id, filtered)


def _positive_runs(flags: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def tumor_slice_range(
    series: ConfidenceSeries, cfg: TumorLocConfig | None = None
) -> tuple[int, int] | None:
    """Slice span (first, last) of the predicted tumor region, or None.

    Pipeline: configured filters in order, strict threshold, maximal runs
    of positive slices with short runs dropped; the span covers from the
    earliest surviving run to the latest.
    """
    cfg = cfg or TumorLocConfig()
    filtered = series
    for stage in cfg.filter_order:
        if stage == "gaussian":
            filtered = smooth_confidences(filtered, cfg.gaussian_sigma)
        else:
            filtered = median_filter_confidences(filtered, cfg.median_kernel)
    flags = filtered.values > cfg.threshold
    runs = [r for r in _positive_runs(flags) if r[1] - r[0] + 1 >= cfg.min_run_length]
    if not runs:
        return None
    return (runs[0][0], runs[-1][1])


def tumor_bounding_box(
    bone_mask: BinaryMask,
    span: tuple[int, int],
    spacing=(1.0, 1.0, 1.0),
    xy_inflation: float = 0.05,
) -> Box:
    """Axis-aligned box (voxel extents, millimeters) around the bone
    voxels within the slice span, inflated by ``xy_inflation`` in x/y."""
    first, last = span
    nz = bone_mask.data.shape[0]
    if not (0 <= first <= last < nz):
        raise ValueError(f"span {span} outside slice range [0, {nz - 1}]")
    region = bone_mask.data[first : last + 1]
    zs, ys, xs = np.nonzero(region)
    if len(zs) == 0:
        raise ValueError("empty tumor region: no bone voxels within the slice span")
    sx, sy, sz = spacing

    x_lo, x_hi = xs.min() * sx, (xs.max() + 1) * sx
    y_lo, y_hi = ys.min() * sy, (ys.max() + 1) * sy
    z_lo, z_hi = (first + zs.min()) * sz, (first + zs.max() + 1) * sz

    x_pad = (x_hi - x_lo) * xy_inflation / 2.0
    y_pad = (y_hi - y_lo) * xy_inflation / 2.0
    return Box(
        min_corner=(x_lo - x_pad, y_lo - y_pad, z_lo),
        max_corner=(x_hi + x_pad, y_hi + y_pad, z_hi),
    )


def annotate_tumor_box(
    mesh: TriMesh,
    bone_mask: BinaryMask,
    span: tuple[int, int],
    spacing=(1.0, 1.0, 1.0),
    xy_inflation: float = 0.05,
) -> TriMesh:
    """Append the tumor bounding box to a mesh; geometry is untouched."""
    return mesh.with_boxes([tumor_bounding_box(bone_mask, span, spacing, xy_inflation)])
