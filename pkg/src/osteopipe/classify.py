"""Per-slice tumor confidence providers.

Two pluggable sources produce a :class:`ConfidenceSeries` for a patient's
ROI volume: a CSV of precomputed probabilities keyed by
``(patient_id, slice_index)``, or a TorchScript model file that maps image
batches to 2-class logits (class order ``healthy,tumor`` recorded in the
file's metadata).  Model inference replicates the grayscale slice to the
channel count the model expects and applies softmax to the logits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .types import ConfidenceSeries, Volume

CLASS_ORDER = "healthy,tumor"


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax: exp(x - max(x)) / sum."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax requires finite logits")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ConfidenceProvider:
    kind: str  # "csv" or "model"
    source: Path

    def __post_init__(self):
        if self.kind not in ("csv", "model"):
            raise ValueError(f"provider kind must be csv or model, got {self.kind!r}")
        src = Path(self.source)
        if not src.exists():
            raise FileNotFoundError(f"provider source {src} does not exist")
        object.__setattr__(self, "source", src)


def read_confidence_csv(path: str | Path) -> dict[tuple[str, int], float]:
    """Read ``patient_id,slice_index,p_tumor`` rows with range validation."""
    out: dict[tuple[str, int], float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["patient_id", "slice_index", "p_tumor"]:
            raise ValueError(f"{path}: expected header patient_id,slice_index,p_tumor")
        for row in reader:
            if not row:
                continue
            p = float(row[2])
            if not (0.0 <= p <= 1.0):
                raise ValueError(
                    f"{path}: probability out of range for ({row[0]}, {row[1]}): {p}"
                )
            out[(row[0], int(row[1]))] = p
    return out


def write_confidence_csv(series_list, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "slice_index", "p_tumor"])
        for series in series_list:
            for idx, p in enumerate(series.values):
                writer.writerow([series.patient_id, idx, repr(float(p))])


def _csv_series(provider: ConfidenceProvider, roi: Volume, patient_id: str) -> ConfidenceSeries:
    table = read_confidence_csv(provider.source)
    values = []
    for z in range(roi.n_slices):
        key = (patient_id, z)
        if key not in table:
            raise ValueError(f"{provider.source}: missing slice {z} for patient {patient_id!r}")
        values.append(table[key])
    return ConfidenceSeries(patient_id, np.array(values))


class ModelRunner:
    """TorchScript 2-class inference with metadata validation.

    The model file must carry ``class_order=healthy,tumor`` metadata; an
    optional ``input_channels`` key (default 3) states how many channels
    the grayscale slice is replicated to.
    """

    def __init__(self, path: str | Path):
        try:
            import torch
        except ImportError as exc:  # pragma: no cover - environment guard
            raise RuntimeError(
                "the model provider requires torch; install osteopipe[model]"
            ) from exc
        self._torch = torch
        extra = {"class_order": b"", "input_channels": b""}
        self.model = torch.jit.load(str(path), map_location="cpu", _extra_files=extra)
        self.model.eval()
        order = extra["class_order"].decode() if extra["class_order"] else ""
        if order != CLASS_ORDER:
            raise ValueError(
                f"{path}: model metadata class_order={order!r}, expected {CLASS_ORDER!r}"
            )
        self.channels = int(extra["input_channels"].decode() or "3")

    def logits(self, slices: np.ndarray) -> np.ndarray:
        """Forward (n, h, w) slices; returns (n, 2) logits."""
        torch = self._torch
        batch = torch.from_numpy(np.array(slices, dtype=np.float32, copy=True))
        batch = batch.unsqueeze(1).repeat(1, self.channels, 1, 1)
        with torch.no_grad():
            out = self.model(batch)
        out = out.detach().cpu().numpy()
        if out.ndim != 2 or out.shape[1] != 2:
            raise ValueError(
                f"model produced output shape {out.shape}, expected (n, 2) logits"
            )
        return out


def _model_series(provider: ConfidenceProvider, roi: Volume, patient_id: str, batch_size: int = 16) -> ConfidenceSeries:
    runner = ModelRunner(provider.source)
    probs = []
    for start in range(0, roi.n_slices, batch_size):
        chunk = roi.data[start : start + batch_size]
        p = softmax(runner.logits(chunk))[:, 1]
        probs.append(p)
    return ConfidenceSeries(patient_id, np.concatenate(probs))


def confidences_for_patient(
    provider: ConfidenceProvider, roi: Volume, patient_id: str
) -> ConfidenceSeries:
    """One tumor probability per ROI slice, in slice order."""
    if provider.kind == "csv":
        return _csv_series(provider, roi, patient_id)
    return _model_series(provider, roi, patient_id)
