"""Core domain containers shared by every pipeline stage.

Axis convention used throughout: volume arrays are indexed ``[z, y, x]``
where ``z`` is the axial slice index, ``y`` grows downward within a slice
(row 0 is the top of the scan) and ``x`` grows to the right.  Dimension
tuples and voxel spacings are reported in ``(nx, ny, nz)`` /
``(sx, sy, sz)`` order, spacings in millimeters per voxel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

LABELS = ("healthy", "tumor")
SPLITS = ("train", "val", "test", "unassigned")


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume:
    """3D scalar grid with voxel spacing.

    ``data`` has shape ``(nz, ny, nx)`` and finite float32 values.
    Instances are immutable; derive new volumes instead of mutating.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = _frozen_array(self.data, np.float32)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3D (z, y, x), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"volume dims must all be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume contains non-finite intensities")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz) voxel counts."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def n_slices(self) -> int:
        return self.data.shape[0]

    def slice_at(self, z: int) -> np.ndarray:
        return self.data[z]


@dataclass(frozen=True)
class BinaryMask:
    """3D boolean grid aligned to a parent :class:`Volume`."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.data, bool)
        if arr.ndim != 3:
            raise ValueError(f"mask data must be 3D (z, y, x), got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum())

    def matches(self, volume: Volume) -> bool:
        return self.data.shape == volume.data.shape


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in millimeters."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min_corner)
        hi = tuple(float(v) for v in self.max_corner)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must be 3-vectors")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box min_corner must be <= max_corner, got {lo} > {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def to_dict(self) -> dict:
        return {"min": list(self.min_corner), "max": list(self.max_corner)}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(tuple(d["min"]), tuple(d["max"]))


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh in millimeters, with optional annotation boxes."""

    vertices: np.ndarray
    faces: np.ndarray
    boxes: tuple[Box, ...] = ()

    def __post_init__(self):
        verts = _frozen_array(self.vertices, np.float64)
        faces = _frozen_array(self.faces, np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"vertices must have shape (n, 3), got {verts.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must have shape (m, 3), got {faces.shape}")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise ValueError("face index out of range")
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if degenerate.any():
                raise ValueError(f"{int(degenerate.sum())} degenerate faces")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_boxes(self, extra: Iterable[Box]) -> "TriMesh":
        """New mesh sharing geometry, with boxes appended."""
        return TriMesh(self.vertices, self.faces, self.boxes + tuple(extra))


@dataclass(frozen=True)
class ConfidenceSeries:
    """Per-slice tumor probabilities for one patient, slice order 0..n-1."""

    patient_id: str
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen_array(self.values, np.float64)
        if vals.ndim != 1:
            raise ValueError(f"confidence values must be 1D, got shape {vals.shape}")
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise ValueError("confidence values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "patient_id", str(self.patient_id))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ManifestRecord:
    patient_id: str
    slice_index: int
    image_path: str
    label: str
    split: str = "unassigned"

    def __post_init__(self):
        if self.slice_index < 0:
            raise ValueError(f"slice_index must be >= 0, got {self.slice_index}")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def id(self) -> tuple[str, int]:
        return (self.patient_id, self.slice_index)

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "slice_index": self.slice_index,
            "image_path": self.image_path,
            "label": self.label,
            "split": self.split,
        }


@dataclass(frozen=True)
class DatasetManifest:
    """Patient/slice/label records driving splits, curation and evaluation.

    Invariants: ``(patient_id, slice_index)`` pairs are unique and every
    patient belongs to exactly one split (patient-level splitting).
    """

    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        seen: set[tuple[str, int]] = set()
        patient_split: dict[str, str] = {}
        for rec in records:
            if rec.id in seen:
                raise ValueError(f"duplicate record id {rec.id}")
            seen.add(rec.id)
            prev = patient_split.setdefault(rec.patient_id, rec.split)
            if prev != rec.split:
                raise ValueError(
                    f"patient {rec.patient_id!r} appears in splits {prev!r} and {rec.split!r}"
                )
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[tuple[str, int]]:
        return [rec.id for rec in self.records]

    def by_id(self) -> dict[tuple[str, int], ManifestRecord]:
        return {rec.id: rec for rec in self.records}

    def patients(self) -> list[str]:
        out: list[str] = []
        for rec in self.records:
            if rec.patient_id not in out:
                out.append(rec.patient_id)
        return out

    def split_of(self, patient_id: str) -> str:
        for rec in self.records:
            if rec.patient_id == patient_id:
                return rec.split
        raise KeyError(patient_id)

    def without(self, ids: Iterable[tuple[str, int]]) -> "DatasetManifest":
        drop = {(str(p), int(i)) for p, i in ids}
        unknown = drop - set(self.ids())
        if unknown:
            raise ValueError(f"unknown record ids: {sorted(unknown)}")
        return DatasetManifest(tuple(r for r in self.records if r.id not in drop))

    def extended(self, extra: Iterable[ManifestRecord]) -> "DatasetManifest":
        return DatasetManifest(self.records + tuple(extra))

    def to_json(self, path: str | Path) -> None:
        payload = {"records": [rec.to_dict() for rec in self.records]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "DatasetManifest":
        payload = json.loads(Path(path).read_text())
        records = tuple(
            ManifestRecord(
                patient_id=str(r["patient_id"]),
                slice_index=int(r["slice_index"]),
                image_path=str(r.get("image_path", "")),
                label=str(r["label"]),
                split=str(r.get("split", "unassigned")),
            )
            for r in payload["records"]
        )
        return cls(records)
