import numpy as np
import pytest

from osteopipe import PhantomSpec, generate_phantom
from osteopipe.phantom import table_mask


def lattice_disk_area(radius: int) -> int:
    """Oracle: integer lattice points with x^2 + y^2 <= r^2."""
    count = 0
    for x in range(-radius, radius + 1):
        for y in range(-radius, radius + 1):
            if x * x + y * y <= radius * radius:
                count += 1
    return count


def test_same_seed_bit_identical():
    spec = PhantomSpec(dims=(64, 64, 4), leg_radius_vox=9, bone_radius_vox=3,
                       table_thickness_vox=3, tumor_slices=(1, 2), seed=99)
    v1, m1, c1 = generate_phantom(spec)
    v2, m2, c2 = generate_phantom(spec)
    assert np.array_equal(v1.data, v2.data)
    assert np.array_equal(m1.data, m2.data)
    assert np.array_equal(c1.values, c2.values)


def test_bone_mask_voxel_count_matches_lattice_oracle():
    spec = PhantomSpec(dims=(64, 64, 5), leg_radius_vox=9, bone_radius_vox=3,
                       table_thickness_vox=3, tumor_slices=None, seed=0)
    _, bone, _ = generate_phantom(spec)
    expected = 2 * 5 * lattice_disk_area(3)
    assert bone.voxel_count == expected


def test_empty_tumor_range_gives_zero_series():
    spec = PhantomSpec(dims=(64, 64, 4), leg_radius_vox=9, bone_radius_vox=3,
                       table_thickness_vox=3, tumor_slices=None, seed=0)
    _, _, conf = generate_phantom(spec)
    assert np.all(conf.values == 0.0)
    # inverted range behaves as empty too
    spec2 = PhantomSpec(dims=(64, 64, 4), leg_radius_vox=9, bone_radius_vox=3,
                        table_thickness_vox=3, tumor_slices=(3, 1), seed=0)
    _, _, conf2 = generate_phantom(spec2)
    assert np.all(conf2.values == 0.0)


def test_tumor_slices_mark_ones_inclusive():
    spec = PhantomSpec(dims=(64, 64, 6), leg_radius_vox=9, bone_radius_vox=3,
                       table_thickness_vox=3, tumor_slices=(2, 4), seed=0)
    _, _, conf = generate_phantom(spec)
    assert conf.values.tolist() == [0, 0, 1, 1, 1, 0]


def test_geometry_validation():
    with pytest.raises(ValueError, match="bone radius"):
        PhantomSpec(dims=(64, 64, 4), leg_radius_vox=5, bone_radius_vox=5,
                    table_thickness_vox=3)
    with pytest.raises(ValueError, match="fit|overlap"):
        PhantomSpec(dims=(32, 32, 4), leg_radius_vox=15, bone_radius_vox=3,
                    table_thickness_vox=3)


def test_table_is_bright_and_located_at_bottom(small_phantom):
    spec, vol, _, _ = small_phantom
    tmask = table_mask(spec)
    assert vol.data[tmask.data].mean() > 0.9
    nz, ny, nx = vol.data.shape
    assert tmask.data[:, : ny - spec.table_thickness_vox, :].sum() == 0


def test_volume_satisfies_invariants(small_phantom):
    _, vol, _, _ = small_phantom
    assert np.all(np.isfinite(vol.data))
    assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0
