import numpy as np
import pytest

from osteopipe import AugmentConfig, DatasetManifest, ManifestRecord, augment_dataset, augment_slice, draw_plan
from osteopipe.volume_io import write_png16

ALL_OFF = AugmentConfig(
    flip_p=0.0, rotate_p=0.0, zoom_p=0.0, noise_p=0.0, shift_p=0.0, dropout_p=0.0, seed=1
)


def test_all_probabilities_zero_is_identity(rng):
    img = rng.random((64, 64))
    out = augment_slice(img, ALL_OFF, ("p", 0, 0))
    assert np.array_equal(out, img)


def test_forced_horizontal_flip_reverses_columns(rng):
    cfg = AugmentConfig(
        flip_p=1.0, rotate_p=0.0, zoom_p=0.0, noise_p=0.0, shift_p=0.0, dropout_p=0.0, seed=0
    )
    img = rng.random((32, 32))
    # find a stream key whose drawn flip is horizontal
    key = None
    for i in range(50):
        plan = draw_plan(cfg, ("p", i, 0), size=32)
        if plan.flip == "h":
            key = ("p", i, 0)
            break
    assert key is not None
    out = augment_slice(img, cfg, key)
    assert np.array_equal(out, img[:, ::-1])


def test_double_flip_both_axes_is_identity(rng):
    cfg = AugmentConfig(
        flip_p=1.0, rotate_p=0.0, zoom_p=0.0, noise_p=0.0, shift_p=0.0, dropout_p=0.0, seed=8
    )
    key = None
    for i in range(60):
        if draw_plan(cfg, ("p", i, 0), size=16).flip == "hv":
            key = ("p", i, 0)
            break
    assert key is not None
    img = rng.random((16, 16))
    once = augment_slice(img, cfg, key)
    twice = augment_slice(once, cfg, key)
    assert not np.array_equal(once, img)
    assert np.array_equal(twice, img)


def test_forced_dropout_zeroes_bounded_area(rng):
    cfg = AugmentConfig(
        flip_p=0.0, rotate_p=0.0, zoom_p=0.0, noise_p=0.0, shift_p=0.0,
        dropout_p=1.0, dropout_patches=(5, 5), seed=3,
    )
    img = np.ones((256, 256))
    key = ("p", 0, 0)
    plan = draw_plan(cfg, key, size=256)
    assert plan.dropout is not None and len(plan.dropout) == 5
    out = augment_slice(img, cfg, key)
    zeros = int((out == 0.0).sum())
    assert 0 < zeros <= 5 * 256
    for top, left in plan.dropout:
        assert np.all(out[top : top + 16, left : left + 16] == 0.0)


def test_output_clamped_to_unit_range(rng):
    cfg = AugmentConfig(seed=5)
    for i in range(20):
        img = rng.random((64, 64))
        out = augment_slice(img, cfg, ("p", i, 0))
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_determinism_pure_function_of_inputs(rng):
    cfg = AugmentConfig(seed=11)
    img = rng.random((64, 64))
    a = augment_slice(img, cfg, ("patient-A", 3, 2))
    b = augment_slice(img, cfg, ("patient-A", 3, 2))
    c = augment_slice(img, cfg, ("patient-A", 3, 3))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_non_square_slice_rejected():
    with pytest.raises(ValueError, match="square"):
        augment_slice(np.zeros((4, 6)), ALL_OFF, ("p", 0, 0))


def test_rotation_uses_zero_fill():
    cfg = AugmentConfig(
        flip_p=0.0, rotate_p=1.0, zoom_p=0.0, noise_p=0.0, shift_p=0.0, dropout_p=0.0, seed=2
    )
    img = np.ones((64, 64))
    key = None
    for i in range(50):
        plan = draw_plan(cfg, ("p", i, 0), size=64)
        if plan.rotate_rad is not None and plan.rotate_rad > 0.1:
            key = ("p", i, 0)
            break
    out = augment_slice(img, cfg, key)
    # rotation of an all-ones image pulls zeros in at the corners
    assert out.min() == 0.0
    assert out[32, 32] == pytest.approx(1.0)


def test_firing_rates_match_probabilities():
    cfg = AugmentConfig(seed=123)
    n = 10_000
    fired = {name: 0 for name in ("flip", "rotate", "zoom", "noise", "shift", "dropout")}
    for i in range(n):
        plan = draw_plan(cfg, ("p", i, 0), size=64)
        for name, hit in plan.fired.items():
            fired[name] += hit
    expected = {
        "flip": 0.5, "rotate": 0.2, "zoom": 0.2,
        "noise": 0.2, "shift": 0.8, "dropout": 0.2,
    }
    for name, p in expected.items():
        assert abs(fired[name] / n - p) < 0.02, name


# ------------------------------------------------------------ dataset io

def _make_dataset(tmp_path, rng, n_train=4, n_test=2):
    records = []
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    for i in range(n_train):
        path = img_dir / f"train_{i}.png"
        write_png16((rng.random((32, 32)) * 65535), path)
        records.append(ManifestRecord("pt", i, str(path), "tumor", "train"))
    for i in range(n_test):
        path = img_dir / f"test_{i}.png"
        write_png16((rng.random((32, 32)) * 65535), path)
        records.append(ManifestRecord("pte", i, str(path), "healthy", "test"))
    return DatasetManifest(tuple(records))


def test_augment_dataset_counts(tmp_path, rng):
    manifest = _make_dataset(tmp_path, rng)
    out = augment_dataset(manifest, AugmentConfig(seed=1), copies=2, out_dir=tmp_path / "aug")
    # 4 train records x 2 copies appended, originals still referenced
    assert len(out) == len(manifest) + 8
    originals = {r.id for r in manifest.records}
    assert originals <= {r.id for r in out.records}


def test_augment_dataset_reruns_byte_identical(tmp_path, rng):
    manifest = _make_dataset(tmp_path, rng)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    augment_dataset(manifest, AugmentConfig(seed=9), copies=1, out_dir=out_a)
    augment_dataset(manifest, AugmentConfig(seed=9), copies=1, out_dir=out_b)
    files_a = sorted(out_a.glob("*.png"))
    files_b = sorted(out_b.glob("*.png"))
    assert len(files_a) == 4
    for fa, fb in zip(files_a, files_b):
        assert fa.name == fb.name
        assert fa.read_bytes() == fb.read_bytes()


def test_augment_dataset_skips_test_split(tmp_path, rng):
    manifest = _make_dataset(tmp_path, rng, n_train=0, n_test=3)
    out = augment_dataset(manifest, AugmentConfig(seed=1), copies=3, out_dir=tmp_path / "aug")
    assert out == manifest
    assert list((tmp_path / "aug").glob("*.png")) == []
