import numpy as np
import pytest

from osteopipe import (
    BinaryMask,
    ConfidenceSeries,
    TriMesh,
    TumorLocConfig,
    annotate_tumor_box,
    median_filter_confidences,
    smooth_confidences,
    tumor_slice_range,
)
from osteopipe.bonemesh import gaussian_kernel1d


def conv_oracle_1d(values: np.ndarray, sigma: float) -> np.ndarray:
    """Direct 1D convolution with symmetric (edge-repeating) padding."""
    k = gaussian_kernel1d(sigma)
    radius = len(k) // 2
    padded = np.pad(values, radius, mode="symmetric")
    return np.array(
        [float(np.dot(padded[i : i + len(k)], k[::-1])) for i in range(len(values))]
    )


def series(values, pid="p"):
    return ConfidenceSeries(pid, np.asarray(values, dtype=float))


# -------------------------------------------------------------- smoothing

def test_smooth_constant_is_fixed_point():
    out = smooth_confidences(series([0.8] * 20), 2.0)
    assert np.max(np.abs(out.values - 0.8)) < 1e-9


def test_smooth_impulse_center_equals_kernel_weight():
    values = np.zeros(25)
    values[12] = 1.0
    out = smooth_confidences(series(values), 2.0)
    k = gaussian_kernel1d(2.0)
    assert out.values[12] == pytest.approx(k[len(k) // 2], abs=1e-12)
    assert np.allclose(out.values, conv_oracle_1d(values, 2.0), atol=1e-12)


def test_smooth_empty_series_errors():
    with pytest.raises(ValueError, match="empty"):
        smooth_confidences(series([]), 2.0)


def test_smooth_matches_direct_convolution(rng):
    for _ in range(10):
        values = rng.random(int(rng.integers(8, 40)))
        out = smooth_confidences(series(values), 2.0)
        assert np.allclose(out.values, np.clip(conv_oracle_1d(values, 2.0), 0, 1), atol=1e-12)


# ----------------------------------------------------------------- median

def test_median_golden_vector():
    out = median_filter_confidences(series([0.0, 1.0, 0.0]), 3)
    assert out.values.tolist() == [0.0, 0.0, 0.0]


def test_median_constant_fixed_point():
    out = median_filter_confidences(series([0.3] * 9), 3)
    assert np.array_equal(out.values, np.full(9, 0.3))


def test_median_even_kernel_rejected():
    with pytest.raises(ValueError, match="odd"):
        median_filter_confidences(series([0.1, 0.2]), 2)


def test_median_preserves_monotone_series():
    values = np.linspace(0.0, 1.0, 11)
    out = median_filter_confidences(series(values), 3)
    assert np.all(np.diff(out.values) >= 0)
    assert np.array_equal(out.values[1:-1], values[1:-1])


# ------------------------------------------------------------- slice range

def test_slice_range_interior_block():
    # long interior block of 1.0 among zeros; span must contain the block
    # center and stay within the block dilated by ceil(3*sigma) = 6
    values = np.zeros(64)
    values[20:36] = 1.0  # block [20, 35]
    span = tumor_slice_range(series(values), TumorLocConfig())
    assert span is not None
    first, last = span
    center = (20 + 35) // 2
    assert first <= center <= last
    assert 20 - 3 <= first and last <= 35 + 3


def test_slice_range_all_zero_is_none():
    assert tumor_slice_range(series(np.zeros(32)), TumorLocConfig()) is None


def test_slice_range_all_ones_full_span():
    span = tumor_slice_range(series(np.ones(17)), TumorLocConfig())
    assert span == (0, 16)


def test_slice_range_block_of_4sigma_survives():
    # spec invariant: blocks of length >= 4*sigma yield a span inside the
    # block dilated by ceil(3*sigma) slices
    cfg = TumorLocConfig()
    for start in (10, 25):
        values = np.zeros(60)
        values[start : start + 8] = 1.0
        span = tumor_slice_range(series(values), cfg)
        assert span is not None
        dilation = int(np.ceil(3 * cfg.gaussian_sigma))
        assert start - dilation <= span[0] <= span[1] <= start + 7 + dilation


def test_slice_range_short_runs_dropped():
    cfg = TumorLocConfig(gaussian_sigma=0.1, median_kernel=1, min_run_length=2)
    values = np.zeros(20)
    values[5] = 1.0  # single-slice spike survives weak filters but not run gate
    assert tumor_slice_range(series(values), cfg) is None


def test_slice_range_within_bounds(rng):
    cfg = TumorLocConfig()
    for _ in range(20):
        values = rng.random(int(rng.integers(5, 50)))
        span = tumor_slice_range(series(values), cfg)
        if span is not None:
            assert 0 <= span[0] <= span[1] <= len(values) - 1


def test_filter_order_configurable():
    values = np.zeros(40)
    values[12:30] = 1.0
    a = tumor_slice_range(series(values), TumorLocConfig(filter_order=("gaussian", "median")))
    b = tumor_slice_range(series(values), TumorLocConfig(filter_order=("median", "gaussian")))
    assert a is not None and b is not None


# ------------------------------------------------------------- annotation

def _mesh():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    return TriMesh(verts, np.array([[0, 1, 2]]))


def _cylinder_mask(nz=10, side=12, radius=3):
    zz = np.zeros((nz, side, side), bool)
    yy, xx = np.mgrid[-side // 2 : side - side // 2, -side // 2 : side - side // 2]
    zz[:, :, :] = (xx * xx + yy * yy) <= radius * radius
    return BinaryMask(zz)


def test_box_z_extent_equals_mask_extent_for_full_span():
    mask = _cylinder_mask(nz=10)
    mesh = annotate_tumor_box(_mesh(), mask, (0, 9), spacing=(1, 1, 1))
    assert len(mesh.boxes) == 1
    box = mesh.boxes[0]
    assert box.min_corner[2] == 0.0
    assert box.max_corner[2] == 10.0


def test_box_marks_requested_span_in_mm():
    mask = _cylinder_mask(nz=40)
    spacing = (0.5, 0.5, 2.5)
    mesh = annotate_tumor_box(_mesh(), mask, (10, 20), spacing=spacing)
    box = mesh.boxes[0]
    assert box.min_corner[2] == pytest.approx(10 * 2.5)
    assert box.max_corner[2] == pytest.approx(21 * 2.5)


def test_box_xy_inflated_five_percent():
    mask = _cylinder_mask(nz=4, side=20, radius=5)
    mesh = annotate_tumor_box(_mesh(), mask, (0, 3), spacing=(1, 1, 1))
    box = mesh.boxes[0]
    ys, xs = np.nonzero(mask.data[0])
    width = (xs.max() + 1 - xs.min())
    got = box.max_corner[0] - box.min_corner[0]
    assert got == pytest.approx(width * 1.05)


def test_annotation_does_not_touch_geometry():
    mask = _cylinder_mask()
    base = _mesh()
    out = annotate_tumor_box(base, mask, (2, 5), spacing=(1, 1, 1))
    assert np.array_equal(out.vertices, base.vertices)
    assert np.array_equal(out.faces, base.faces)
    assert len(base.boxes) == 0 and len(out.boxes) == 1


def test_empty_span_region_errors():
    mask = BinaryMask(np.zeros((6, 6, 6), bool))
    with pytest.raises(ValueError, match="empty tumor region"):
        annotate_tumor_box(_mesh(), mask, (1, 3))


def test_span_outside_range_errors():
    mask = _cylinder_mask(nz=5)
    with pytest.raises(ValueError, match="outside slice range"):
        annotate_tumor_box(_mesh(), mask, (3, 7))
