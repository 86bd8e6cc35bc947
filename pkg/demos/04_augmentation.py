"""Seeded augmentation gallery.

Each augmented variant is a pure function of (image, config, stream key);
rerunning this script reproduces the exact same gallery bytes.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from osteopipe import AugmentConfig, PhantomSpec, PreprocConfig, augment_slice, draw_plan, generate_phantom, preprocess_study

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

spec = PhantomSpec(
    dims=(160, 160, 4),
    leg_radius_vox=22,
    bone_radius_vox=9,
    table_thickness_vox=6,
    tumor_slices=None,
    seed=1,
)
volume, _, _ = generate_phantom(spec)
rois, _ = preprocess_study(volume, PreprocConfig(opening_radius_px=6, roi_size=256))
base = rois[0].data[0]

# Crank the gate probabilities up so the panel shows every transform.
cfg = AugmentConfig(
    flip_p=0.7, rotate_p=0.7, zoom_p=0.7, noise_p=0.7, shift_p=0.7, dropout_p=0.7, seed=11
)

fig, axes = plt.subplots(2, 4, figsize=(12, 6))
axes[0, 0].imshow(base, cmap="gray", interpolation="nearest")
axes[0, 0].set_title("original", fontsize=9)
axes[0, 0].set_axis_off()
for i, ax in enumerate(axes.ravel()[1:]):
    key = ("demo", 0, i + 1)
    out = augment_slice(base, cfg, key)
    plan = draw_plan(cfg, key, size=base.shape[0])
    fired = [name for name, hit in plan.fired.items() if hit]
    ax.imshow(out, cmap="gray", interpolation="nearest", vmin=0, vmax=1)
    ax.set_title("+".join(fired) or "identity", fontsize=8)
    ax.set_axis_off()
fig.tight_layout()
fig.savefig(OUT / "04_gallery.png", dpi=110)
print(f"gallery -> {OUT / '04_gallery.png'}")

# Empirical firing rates at the production defaults.
default_cfg = AugmentConfig(seed=99)
n = 5000
fired = dict.fromkeys(("flip", "rotate", "zoom", "noise", "shift", "dropout"), 0)
for i in range(n):
    for name, hit in draw_plan(default_cfg, ("rates", i, 0), size=64).fired.items():
        fired[name] += hit
print("firing rates over", n, "slices:")
for name, count in fired.items():
    print(f"  {name:8s} {count / n:.3f}")
