"""Embedding-based detection of near-duplicate slices with conflicting labels.

Embeddings arrive as a CSV artifact (``patient_id,slice_index,e0,e1,...``);
this module scans all pairs for cosine similarity above a threshold with
differing labels and conservatively removes the healthy-labeled member of
each flagged pair.  Test-split slices are reported but never removed.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .types import DatasetManifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingSet:
    """Fixed-length feature vectors keyed by (patient_id, slice_index)."""

    ids: tuple[tuple[str, int], ...]
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[1] < 1:
            raise ValueError(f"vectors must be a (n, d>=1) matrix, got {vec.shape}")
        if len(self.ids) != len(vec):
            raise ValueError("id count does not match vector row count")
        norms = np.linalg.norm(vec, axis=1)
        if np.any(norms == 0):
            raise ValueError("embedding set contains an all-zero row")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "ids", tuple((str(p), int(i)) for p, i in self.ids))


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """(u.v)/(|u||v|), clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"vector lengths differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class ConflictPair:
    id_a: tuple[str, int]
    id_b: tuple[str, int]
    similarity: float
    label_a: str
    label_b: str

    def to_dict(self) -> dict:
        return {
            "id_a": list(self.id_a),
            "id_b": list(self.id_b),
            "similarity": self.similarity,
            "label_a": self.label_a,
            "label_b": self.label_b,
        }


@dataclass(frozen=True)
class ConflictReport:
    pairs: tuple[ConflictPair, ...]
    removed_ids: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "pairs": [p.to_dict() for p in self.pairs],
            "removed_ids": [list(i) for i in self.removed_ids],
        }


def find_conflicts(
    emb: EmbeddingSet, manifest: DatasetManifest, threshold: float = 0.95
) -> ConflictReport:
    """All embedding pairs with similarity strictly above threshold and
    differing labels; the healthy member of each pair is marked for removal
    unless it belongs to the test split.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    by_id = manifest.by_id()
    for rid in emb.ids:
        if rid not in by_id:
            raise ValueError(f"embedding id {rid} missing from manifest")

    norms = np.linalg.norm(emb.vectors, axis=1, keepdims=True)
    unit = emb.vectors / norms
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    labels = np.array([by_id[rid].label for rid in emb.ids])
    splits = np.array([by_id[rid].split for rid in emb.ids])

    iu, ju = np.triu_indices(len(emb.ids), k=1)
    hit = (sims[iu, ju] > threshold) & (labels[iu] != labels[ju])
    pairs = []
    removed: list[tuple[str, int]] = []
    seen: set[tuple[str, int]] = set()
    for i, j in zip(iu[hit], ju[hit]):
        pairs.append(
            ConflictPair(
                id_a=emb.ids[i],
                id_b=emb.ids[j],
                similarity=float(sims[i, j]),
                label_a=str(labels[i]),
                label_b=str(labels[j]),
            )
        )
        healthy = i if labels[i] == "healthy" else j
        rid = emb.ids[healthy]
        if splits[healthy] != "test" and rid not in seen:
            seen.add(rid)
            removed.append(rid)
    return ConflictReport(pairs=tuple(pairs), removed_ids=tuple(removed))


def apply_curation(manifest: DatasetManifest, report: ConflictReport) -> DatasetManifest:
    """Manifest minus the report's removed records (set semantics)."""
    unique = list(dict.fromkeys(report.removed_ids))
    curated = manifest.without(unique)
    counts: dict[str, int] = {}
    by_id = manifest.by_id()
    for rid in unique:
        counts[by_id[rid].split] = counts.get(by_id[rid].split, 0) + 1
    log.info("curation removed %d records (%s)", len(unique), counts or "none")
    return curated


def load_embeddings_csv(path: str | Path) -> EmbeddingSet:
    """Read ``patient_id,slice_index,e0,e1,...`` rows."""
    path = Path(path)
    ids: list[tuple[str, int]] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["patient_id", "slice_index"]:
            raise ValueError(f"{path}: expected header patient_id,slice_index,e0,...")
        for line in reader:
            if not line:
                continue
            ids.append((line[0], int(line[1])))
            rows.append([float(v) for v in line[2:]])
    if not rows:
        raise ValueError(f"{path}: no embedding rows")
    return EmbeddingSet(ids=tuple(ids), vectors=np.array(rows))


def save_embeddings_csv(emb: EmbeddingSet, path: str | Path) -> None:
    dim = emb.vectors.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "slice_index"] + [f"e{i}" for i in range(dim)])
        for (pid, idx), row in zip(emb.ids, emb.vectors):
            writer.writerow([pid, idx] + [repr(float(v)) for v in row])
