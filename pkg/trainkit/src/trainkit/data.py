"""Dataset plumbing: manifest records, patient-level split checks and
torch datasets over 16-bit grayscale PNG slices.

The manifest JSON schema is the pipeline's public interchange format
({"records": [{patient_id, slice_index, image_path, label, split}]});
this module reads it independently so the training kit only touches the
pipeline through its published file formats.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch.utils.data import DataLoader, Dataset

LABEL_TO_INDEX = {"healthy": 0, "tumor": 1}


@dataclass(frozen=True)
class SliceRecord:
    patient_id: str
    slice_index: int
    image_path: str
    label: str
    split: str


def read_manifest(path: str | Path) -> list[SliceRecord]:
    payload = json.loads(Path(path).read_text())
    records = [
        SliceRecord(
            patient_id=str(r["patient_id"]),
            slice_index=int(r["slice_index"]),
            image_path=str(r["image_path"]),
            label=str(r["label"]),
            split=str(r.get("split", "unassigned")),
        )
        for r in payload["records"]
    ]
    for rec in records:
        if rec.label not in LABEL_TO_INDEX:
            raise ValueError(f"unknown label {rec.label!r} for {rec.patient_id}")
    return records


def check_split_integrity(records: list[SliceRecord]) -> None:
    """Abort on patient-level split leakage (a patient in two splits)."""
    seen: dict[str, str] = {}
    for rec in records:
        prev = seen.setdefault(rec.patient_id, rec.split)
        if prev != rec.split:
            raise ValueError(
                f"split leakage: patient {rec.patient_id!r} appears in both "
                f"{prev!r} and {rec.split!r}"
            )


def load_slice(path: str | Path) -> np.ndarray:
    """16-bit grayscale PNG to float32 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img).astype(np.float32)
    return arr / 65535.0


class SliceDataset(Dataset):
    """Grayscale slices replicated to 3 channels, labels healthy=0/tumor=1."""

    def __init__(self, records: list[SliceRecord]):
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int):
        rec = self.records[idx]
        arr = load_slice(rec.image_path)
        tensor = torch.from_numpy(arr).unsqueeze(0).repeat(3, 1, 1)
        return tensor, LABEL_TO_INDEX[rec.label]


def build_loaders(
    records: list[SliceRecord], batch_size: int, seed: int
) -> tuple[DataLoader, DataLoader]:
    """Seeded train/val loaders from the manifest's split assignments."""
    check_split_integrity(records)
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    if not train:
        raise ValueError("manifest has no train records")
    if not val:
        raise ValueError("manifest has no val records (patient-level val split required)")
    generator = torch.Generator()
    generator.manual_seed(seed)
    train_loader = DataLoader(
        SliceDataset(train), batch_size=batch_size, shuffle=True, generator=generator
    )
    val_loader = DataLoader(SliceDataset(val), batch_size=batch_size, shuffle=False)
    return train_loader, val_loader


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with half tie credit; 0.5 when one class absent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
