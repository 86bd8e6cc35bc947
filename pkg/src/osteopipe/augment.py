"""Seeded, reproducible training-set augmentation.

Each slice gets its own RNG stream derived from (config seed, patient,
slice index, copy number), so augmenting in parallel or rerunning a job
produces bit-identical outputs.  Transforms fire independently, in a fixed
order: flips, small rotation, center zoom, Gaussian noise, intensity
shift, coarse dropout; the result is clamped back to [0, 1].
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .types import DatasetManifest, ManifestRecord
from .volume_io import read_png16, write_png16

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    flip_p: float = 0.5
    rotate_p: float = 0.2
    rotate_max_rad: float = np.pi / 12
    zoom_p: float = 0.2
    zoom_range: tuple[float, float] = (0.95, 1.05)
    noise_p: float = 0.2
    noise_mu: float = 0.0
    noise_sigma: float = 0.05
    shift_p: float = 0.8
    shift_offset: float = 0.2
    dropout_p: float = 0.2
    dropout_patches: tuple[int, int] = (5, 10)
    dropout_size: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_p", "rotate_p", "zoom_p", "noise_p", "shift_p", "dropout_p"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.zoom_range[0] > self.zoom_range[1]:
            raise ValueError("zoom_range must be ordered")
        lo, hi = self.dropout_patches
        if lo <= 0 or lo > hi:
            raise ValueError("dropout_patches must be ordered and positive")


StreamKey = tuple[str, int, int]  # (patient_id, slice_index, epoch/copy)


def _stream_rng(seed: int, key: StreamKey) -> np.random.Generator:
    pid, slice_index, epoch = key
    pid_hash = int.from_bytes(hashlib.sha256(pid.encode()).digest()[:8], "little")
    ss = np.random.SeedSequence([seed & (2**63 - 1), pid_hash, int(slice_index), int(epoch)])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class TransformPlan:
    """Which transforms fire for one slice, with their drawn parameters."""

    flip: str | None  # None | "h" | "v" | "hv"
    rotate_rad: float | None
    zoom: float | None
    noise: bool
    shift: float | None
    dropout: tuple[tuple[int, int], ...] | None  # (top, left) patch corners

    @property
    def fired(self) -> dict[str, bool]:
        return {
            "flip": self.flip is not None,
            "rotate": self.rotate_rad is not None,
            "zoom": self.zoom is not None,
            "noise": self.noise,
            "shift": self.shift is not None,
            "dropout": self.dropout is not None,
        }


def _draw_plan(rng: np.random.Generator, cfg: AugmentConfig, size: int) -> TransformPlan:
    flip = None
    if rng.random() < cfg.flip_p:
        flip = ("h", "v", "hv")[rng.integers(0, 3)]
    rotate = float(rng.uniform(0.0, cfg.rotate_max_rad)) if rng.random() < cfg.rotate_p else None
    zoom = float(rng.uniform(*cfg.zoom_range)) if rng.random() < cfg.zoom_p else None
    noise = bool(rng.random() < cfg.noise_p)
    shift = (
        float(rng.uniform(-cfg.shift_offset, cfg.shift_offset))
        if rng.random() < cfg.shift_p
        else None
    )
    dropout = None
    if rng.random() < cfg.dropout_p:
        lo, hi = cfg.dropout_patches
        count = int(rng.integers(lo, hi + 1))
        limit = max(1, size - cfg.dropout_size + 1)
        dropout = tuple(
            (int(rng.integers(0, limit)), int(rng.integers(0, limit))) for _ in range(count)
        )
    return TransformPlan(flip, rotate, zoom, noise, shift, dropout)


def draw_plan(cfg: AugmentConfig, stream_key: StreamKey, size: int = 256) -> TransformPlan:
    """The transform plan augment_slice would execute for this stream key."""
    return _draw_plan(_stream_rng(cfg.seed, stream_key), cfg, size)


def _resample(slice2d: np.ndarray, inverse_map) -> np.ndarray:
    """Bilinear resample with zero fill through an inverse coordinate map."""
    h, w = slice2d.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sy, sx = inverse_map(yy, xx)
    return ndimage.map_coordinates(slice2d, [sy, sx], order=1, mode="constant", cval=0.0)


def _rotate(slice2d: np.ndarray, theta: float) -> np.ndarray:
    h, w = slice2d.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    def inverse(yy, xx):
        dy, dx = yy - cy, xx - cx
        return cy + cos_t * dy - sin_t * dx, cx + sin_t * dy + cos_t * dx

    return _resample(slice2d, inverse)


def _zoom(slice2d: np.ndarray, scale: float) -> np.ndarray:
    h, w = slice2d.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    def inverse(yy, xx):
        return cy + (yy - cy) / scale, cx + (xx - cx) / scale

    return _resample(slice2d, inverse)


def _apply_plan(
    slice2d: np.ndarray, plan: TransformPlan, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    out = np.asarray(slice2d, dtype=np.float64).copy()
    if plan.flip:
        if "h" in plan.flip:
            out = out[:, ::-1]
        if "v" in plan.flip:
            out = out[::-1, :]
    if plan.rotate_rad is not None:
        out = _rotate(out, plan.rotate_rad)
    if plan.zoom is not None:
        out = _zoom(out, plan.zoom)
    if plan.noise:
        out = out + rng.normal(cfg.noise_mu, cfg.noise_sigma, size=out.shape)
    if plan.shift is not None:
        out = out + plan.shift
    if plan.dropout is not None:
        size = cfg.dropout_size
        for top, left in plan.dropout:
            out[top : top + size, left : left + size] = 0.0
    return np.clip(out, 0.0, 1.0)


def augment_slice(slice2d: np.ndarray, cfg: AugmentConfig, stream_key: StreamKey) -> np.ndarray:
    """Augment one square slice with values in [0, 1].

    A pure function of (slice, cfg, stream_key): the RNG stream is derived
    solely from the config seed and the stream key.
    """
    arr = np.asarray(slice2d)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"slice must be square 2D, got shape {arr.shape}")
    rng = _stream_rng(cfg.seed, stream_key)
    plan = _draw_plan(rng, cfg, arr.shape[0])
    return _apply_plan(arr, plan, cfg, rng)


def _augmented_patient(pid: str, copy: int) -> str:
    return f"{pid}__aug{copy}"


def augment_dataset(
    manifest: DatasetManifest,
    cfg: AugmentConfig,
    copies: int,
    out_dir: str | Path,
    intensity_scale: float = 65535.0,
) -> DatasetManifest:
    """Write `copies` augmented variants of every train/val record.

    Augmented records join the manifest under patient ids suffixed with
    ``__aug<copy>`` (keeping (patient, slice) ids unique and splits at the
    patient level); test records pass through untouched.  Outputs are
    16-bit PNGs with deterministic names, byte-identical across reruns.
    """
    if copies < 1:
        raise ValueError("copies must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra: list[ManifestRecord] = []
    written = 0
    for rec in manifest.records:
        if rec.split not in ("train", "val"):
            continue
        img = read_png16(rec.image_path) / intensity_scale
        for copy in range(1, copies + 1):
            aug = augment_slice(img, cfg, (rec.patient_id, rec.slice_index, copy))
            name = f"{_augmented_patient(rec.patient_id, copy)}_{rec.slice_index:04d}.png"
            path = out_dir / name
            write_png16(aug * intensity_scale, path)
            extra.append(
                ManifestRecord(
                    patient_id=_augmented_patient(rec.patient_id, copy),
                    slice_index=rec.slice_index,
                    image_path=str(path),
                    label=rec.label,
                    split=rec.split,
                )
            )
            written += 1
    log.info("augmentation wrote %d images to %s", written, out_dir)
    return manifest.extended(extra)
