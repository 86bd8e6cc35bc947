"""Volume and mask file I/O.

Two on-disk containers are supported:

* ``.ostv`` raw volumes: a 64-byte fixed header (magic ``OSTV``, version,
  dims as u32 x3, spacing as f32 x3, dtype tag) followed by little-endian
  voxel data in z-major order.  Bit-exact round trips, used for golden
  artifacts.
* PNG slice stacks: a directory of 16-bit grayscale images named with
  zero-padded slice indices, optionally accompanied by a ``manifest.json``
  holding ``{"spacing": [sx, sy, sz], "slice_order": [...]}``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .types import BinaryMask, Volume

OSTV_MAGIC = b"OSTV"
OSTV_VERSION = 1
OSTV_HEADER_SIZE = 64
_DTYPE_TAGS = {1: np.float32, 2: np.uint8}
_TAG_FOR_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2}


def _pack_header(dims: tuple[int, int, int], spacing: tuple[float, float, float], tag: int) -> bytes:
    head = struct.pack(
        "<4sI3I3fI",
        OSTV_MAGIC,
        OSTV_VERSION,
        *[int(d) for d in dims],
        *[float(s) for s in spacing],
        tag,
    )
    return head + b"\x00" * (OSTV_HEADER_SIZE - len(head))


def _unpack_header(raw: bytes, path: Path):
    if len(raw) < OSTV_HEADER_SIZE:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, nx, ny, nz, sx, sy, sz, tag = struct.unpack_from("<4sI3I3fI", raw)
    if magic != OSTV_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, not an OSTV file")
    if version != OSTV_VERSION:
        raise ValueError(f"{path}: unsupported OSTV version {version}")
    if tag not in _DTYPE_TAGS:
        raise ValueError(f"{path}: unknown dtype tag {tag}")
    if min(nx, ny, nz) < 1:
        raise ValueError(f"{path}: invalid dims ({nx}, {ny}, {nz})")
    return (nx, ny, nz), (sx, sy, sz), _DTYPE_TAGS[tag]


def save_volume(volume: Volume, path: str | Path) -> None:
    """Write a Volume as a raw ``.ostv`` file (float32, bit-exact)."""
    path = Path(path)
    data = np.ascontiguousarray(volume.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_pack_header(volume.dims, volume.spacing, _TAG_FOR_DTYPE[np.dtype(np.float32)]))
        fh.write(data.tobytes())


def save_mask(mask: BinaryMask, path: str | Path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a BinaryMask as a ``.ostv`` file with uint8 payload."""
    path = Path(path)
    data = np.ascontiguousarray(mask.data, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(_pack_header(mask.dims, spacing, _TAG_FOR_DTYPE[np.dtype(np.uint8)]))
        fh.write(data.tobytes())


def _load_raw(path: Path):
    raw = path.read_bytes()
    (nx, ny, nz), spacing, dtype = _unpack_header(raw, path)
    expected = nx * ny * nz * np.dtype(dtype).itemsize
    payload = raw[OSTV_HEADER_SIZE:]
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(payload, dtype=np.dtype(dtype).newbyteorder("<")).reshape(nz, ny, nx)
    return arr, spacing


def load_mask(path: str | Path) -> BinaryMask:
    """Read a uint8 ``.ostv`` file back as a BinaryMask."""
    arr, _ = _load_raw(Path(path))
    return BinaryMask(arr.astype(bool))


def _slice_paths(directory: Path) -> list[Path]:
    manifest = directory / "manifest.json"
    if manifest.exists():
        try:
            meta = json.loads(manifest.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{manifest}: malformed manifest ({exc})") from exc
        order = meta.get("slice_order")
        if order:
            return [directory / name for name in order]
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def _stack_spacing(directory: Path) -> tuple[float, float, float]:
    manifest = directory / "manifest.json"
    if manifest.exists():
        meta = json.loads(manifest.read_text())
        spacing = meta.get("spacing")
        if spacing is not None:
            return tuple(float(s) for s in spacing)
    return (1.0, 1.0, 1.0)


def read_png16(path: str | Path) -> np.ndarray:
    """Read a grayscale PNG as float32 raw intensities (no rescaling)."""
    path = Path(path)
    with Image.open(path) as img:
        if img.mode not in ("I", "I;16", "L", "F"):
            raise ValueError(f"{path}: expected grayscale image, got mode {img.mode!r}")
        arr = np.asarray(img)
    return arr.astype(np.float32)


def write_png16(array: np.ndarray, path: str | Path) -> None:
    """Write a 2D array of values in [0, 65535] as a 16-bit grayscale PNG."""
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise ValueError(f"expected 2D slice, got shape {arr.shape}")
    quantized = np.clip(np.round(arr), 0, 65535).astype(np.uint16)
    Image.fromarray(quantized).save(Path(path), format="PNG")


def _load_png_stack(directory: Path) -> Volume:
    if not directory.is_dir():
        raise ValueError(f"{directory}: not a directory")
    paths = _slice_paths(directory)
    if not paths:
        raise ValueError(f"{directory}: no slices found")
    slices = []
    shape = None
    for p in paths:
        if not p.exists():
            raise ValueError(f"{p}: listed in manifest but missing")
        arr = read_png16(p)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ValueError(
                f"{p}: slice dims {arr.shape} differ from first slice {shape}"
            )
        slices.append(arr)
    return Volume(np.stack(slices, axis=0), spacing=_stack_spacing(directory))


def load_volume(path: str | Path, format: str = "raw_volume") -> Volume:
    """Load a Volume from an ``.ostv`` file or a PNG slice-stack directory.

    Intensities are cast to float32 without rescaling; normalization is an
    explicit preprocessing step, never implicit in the loader.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file or directory")
    if format == "raw_volume":
        arr, spacing = _load_raw(path)
        return Volume(arr.astype(np.float32), spacing=spacing)
    if format == "png_stack":
        return _load_png_stack(path)
    raise ValueError(f"unknown volume format {format!r}")


def save_png_stack(volume: Volume, directory: str | Path, scale: float = 1.0) -> None:
    """Write a volume as zero-padded 16-bit PNG slices plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for z in range(volume.n_slices):
        name = f"{z:04d}.png"
        write_png16(volume.data[z] * scale, directory / name)
        names.append(name)
    meta = {"spacing": list(volume.spacing), "slice_order": names}
    (directory / "manifest.json").write_text(json.dumps(meta, indent=2) + "\n")
