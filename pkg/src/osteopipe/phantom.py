"""Synthetic leg phantom: the verification oracle for the imaging pipelines.

The phantom is a CT-like volume containing two vertical soft-tissue
cylinders ("legs") with brighter coaxial bone cores, a bright slab across
the bottom rows of every slice (the scanner table) and low-amplitude seeded
noise.  Geometry is an exact function of the parameters, so tests can derive
ground truth (bone mask, table voxels, per-slice tumor confidences) in
closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import BinaryMask, ConfidenceSeries, Volume

AIR = 0.05
TISSUE = 0.35
BONE = 0.85
TABLE = 0.95
NOISE_SIGMA = 0.01


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of the synthetic study.

    ``tumor_slices`` is an inclusive (first, last) axial index range, or
    None for a tumor-free phantom.
    """

    dims: tuple[int, int, int] = (256, 256, 64)  # (nx, ny, nz)
    leg_radius_vox: int = 36
    bone_radius_vox: int = 14
    table_thickness_vox: int = 8
    tumor_slices: tuple[int, int] | None = (20, 35)
    seed: int = 0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        nx, ny, nz = self.dims
        if self.bone_radius_vox >= self.leg_radius_vox:
            raise ValueError("bone radius must be smaller than leg radius")
        if self.bone_radius_vox < 1:
            raise ValueError("bone radius must be >= 1")
        for cx, cy in self.leg_centers():
            if not (self.leg_radius_vox <= cx < nx - self.leg_radius_vox):
                raise ValueError(f"leg at x={cx} does not fit dims {self.dims}")
            if not (self.leg_radius_vox <= cy):
                raise ValueError(f"leg at y={cy} does not fit dims {self.dims}")
            if cy + self.leg_radius_vox >= ny - self.table_thickness_vox:
                raise ValueError("legs overlap the table slab; shrink radii or table")

    def leg_centers(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Integer (cx, cy) centers of the left and right leg."""
        nx, ny, _ = self.dims
        cy = round(ny * 0.42)
        return (round(nx * 0.30), cy), (round(nx * 0.70), cy)


def _disk(nx: int, ny: int, cx: int, cy: int, radius: int) -> np.ndarray:
    xx, yy = np.meshgrid(np.arange(nx), np.arange(ny))
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius


def table_mask(spec: PhantomSpec) -> BinaryMask:
    """Ground-truth scanner-table voxels (bottom rows of every slice)."""
    nx, ny, nz = spec.dims
    mask = np.zeros((nz, ny, nx), dtype=bool)
    mask[:, ny - spec.table_thickness_vox :, :] = True
    return BinaryMask(mask)


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, BinaryMask, ConfidenceSeries]:
    """Build (volume, ground-truth bone mask, ground-truth confidences).

    Deterministic: identical specs produce bit-identical outputs.
    """
    nx, ny, nz = spec.dims

    legs = np.zeros((ny, nx), dtype=bool)
    bones = np.zeros((ny, nx), dtype=bool)
    for cx, cy in spec.leg_centers():
        legs |= _disk(nx, ny, cx, cy, spec.leg_radius_vox)
        bones |= _disk(nx, ny, cx, cy, spec.bone_radius_vox)

    base = np.full((ny, nx), AIR, dtype=np.float32)
    base[legs] = TISSUE
    base[bones] = BONE
    base[ny - spec.table_thickness_vox :, :] = TABLE

    data = np.repeat(base[None, :, :], nz, axis=0)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed & (2**63 - 1))))
    data = data + rng.normal(0.0, NOISE_SIGMA, size=data.shape).astype(np.float32)
    data = np.clip(data, 0.0, 1.0)

    bone_mask = BinaryMask(np.repeat(bones[None, :, :], nz, axis=0))

    conf = np.zeros(nz, dtype=np.float64)
    if spec.tumor_slices is not None:
        first, last = spec.tumor_slices
        if first <= last:
            conf[max(0, first) : min(nz - 1, last) + 1] = 1.0
    return Volume(data, spacing=spec.spacing), bone_mask, ConfidenceSeries("phantom", conf)
