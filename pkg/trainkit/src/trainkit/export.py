"""Exports consumed by the processing pipeline: TorchScript model files
with class-order metadata, per-slice confidence CSVs computed from ROI
volumes, and embedding CSVs for label curation.

All file formats here are the pipeline's published interchange formats;
they are read and written directly so the training kit stays decoupled
from the pipeline's code.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
import torch

from .data import load_slice
from .models import backbone_features, build_model, feature_width

CLASS_ORDER = "healthy,tumor"
INPUT_CHANNELS = 3

_OSTV_MAGIC = b"OSTV"
_OSTV_HEADER = 64


def export_torchscript(model: torch.nn.Module, path: str | Path) -> Path:
    """Script the model and attach class_order/input_channels metadata."""
    path = Path(path)
    model.eval()
    scripted = torch.jit.script(model)
    torch.jit.save(
        scripted,
        str(path),
        _extra_files={
            "class_order": CLASS_ORDER.encode(),
            "input_channels": str(INPUT_CHANNELS).encode(),
        },
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[torch.nn.Module, str]:
    """Rebuild the native training checkpoint (architecture + weights)."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    name = payload["model"]
    if payload.get("class_order") != CLASS_ORDER:
        raise ValueError(f"checkpoint class_order {payload.get('class_order')!r} unsupported")
    model = build_model(name, pretrained=False)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, name


def read_ostv(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Minimal reader for the pipeline's raw volume container."""
    raw = Path(path).read_bytes()
    if len(raw) < _OSTV_HEADER:
        raise ValueError(f"{path}: truncated header")
    magic, _version, nx, ny, nz, sx, sy, sz, tag = struct.unpack_from("<4sI3I3fI", raw)
    if magic != _OSTV_MAGIC:
        raise ValueError(f"{path}: not an OSTV volume")
    dtype = {1: np.float32, 2: np.uint8}.get(tag)
    if dtype is None:
        raise ValueError(f"{path}: unknown dtype tag {tag}")
    data = np.frombuffer(raw[_OSTV_HEADER:], dtype=np.dtype(dtype).newbyteorder("<"))
    return data.reshape(nz, ny, nx).astype(np.float32), (sx, sy, sz)


@torch.no_grad()
def export_confidences(
    model_file: str | Path,
    rois: list[tuple[str, str | Path]],
    out_csv: str | Path,
    batch_size: int = 16,
) -> None:
    """Per-slice tumor probabilities for (patient_id, roi_path) pairs,
    written in the pipeline's confidence CSV format."""
    extra = {"class_order": b"", "input_channels": b""}
    model = torch.jit.load(str(model_file), map_location="cpu", _extra_files=extra)
    model.eval()
    if extra["class_order"].decode() != CLASS_ORDER:
        raise ValueError(f"{model_file}: unexpected class_order metadata")
    channels = int(extra["input_channels"].decode() or "3")

    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "slice_index", "p_tumor"])
        for patient_id, roi_path in rois:
            volume, _spacing = read_ostv(roi_path)
            for start in range(0, len(volume), batch_size):
                chunk = volume[start : start + batch_size]
                batch = torch.from_numpy(chunk.copy()).unsqueeze(1).repeat(1, channels, 1, 1)
                logits = model(batch)
                if logits.ndim != 2 or logits.shape[1] != 2:
                    raise ValueError(f"model output shape {tuple(logits.shape)} is not (n, 2)")
                probs = torch.softmax(logits, dim=1)[:, 1].numpy()
                for offset, p in enumerate(probs):
                    writer.writerow([patient_id, start + offset, repr(float(p))])


@torch.no_grad()
def compute_embeddings(
    checkpoint_path: str | Path,
    items: list[tuple[str, int, str | Path]],
    out_csv: str | Path,
    batch_size: int = 16,
) -> int:
    """Global-average-pooled backbone features for (patient_id,
    slice_index, image_path) items, in the curation CSV format.
    Returns the embedding width."""
    model, name = load_checkpoint(checkpoint_path)
    width = feature_width(model, name)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "slice_index"] + [f"e{i}" for i in range(width)])
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            arrays = [load_slice(path) for _, _, path in chunk]
            batch = torch.from_numpy(np.stack(arrays)).unsqueeze(1).repeat(1, 3, 1, 1)
            feats = backbone_features(model, name, batch).numpy()
            for (pid, idx, _), row in zip(chunk, feats):
                writer.writerow([pid, idx] + [repr(float(v)) for v in row])
    return width
