import numpy as np
import pytest

from osteopipe import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def small_phantom():
    """Compact phantom shared across tests: 128x128x12, bone r=7."""
    spec = PhantomSpec(
        dims=(128, 128, 12),
        leg_radius_vox=18,
        bone_radius_vox=7,
        table_thickness_vox=5,
        tumor_slices=(2, 9),
        seed=7,
    )
    volume, bone_gt, conf_gt = generate_phantom(spec)
    return spec, volume, bone_gt, conf_gt


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
