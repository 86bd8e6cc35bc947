"""Label curation and fold-aggregated evaluation.

Plants near-duplicate embedding pairs with conflicting labels, runs the
conservative curation pass, then evaluates synthetic fold scores into the
mean (low-high) summary format.
"""
import numpy as np

from osteopipe import (
    DatasetManifest,
    EmbeddingSet,
    ManifestRecord,
    apply_curation,
    evaluate_patientwise,
    find_conflicts,
)

rng = np.random.default_rng(21)

# ----------------------------------------------------------------- curation
records = []
for p in range(10):
    split = "test" if p >= 8 else "train"
    for s in range(12):
        label = "tumor" if (p + s) % 3 == 0 else "healthy"
        records.append(ManifestRecord(f"p{p}", s, f"p{p}_{s}.png", label, split))
manifest = DatasetManifest(tuple(records))

vectors = rng.normal(size=(len(manifest), 64))
ids = [r.id for r in manifest.records]
pos = {rid: i for i, rid in enumerate(ids)}
# make two healthy/tumor pairs visually identical
vectors[pos[("p1", 1)]] = vectors[pos[("p1", 0)]]   # p1: slice0 tumor, slice1 healthy
vectors[pos[("p2", 2)]] = vectors[pos[("p2", 1)]]   # p2: slice1 tumor, slice2 healthy

emb = EmbeddingSet(ids=tuple(ids), vectors=vectors)
report = find_conflicts(emb, manifest, threshold=0.95)
curated = apply_curation(manifest, report)
print(f"records: {len(manifest)} -> {len(curated)} after curation")
for pair in report.pairs:
    print(f"  conflict {pair.id_a} vs {pair.id_b}: similarity {pair.similarity:.3f}")
print(f"  removed: {list(report.removed_ids)}\n")

# ------------------------------------------------------------------ metrics
# Synthetic confidences: strong on most patients, noisier on two of them.
conf = {}
for rec in manifest.records:
    base = 0.8 if rec.label == "tumor" else 0.2
    sigma = 0.45 if rec.patient_id in ("p3", "p6") else 0.12
    conf[rec.id] = float(np.clip(base + rng.normal(0, sigma), 0, 1))

folds = [[f"p{2 * k}", f"p{2 * k + 1}"] for k in range(5)]
result = evaluate_patientwise(manifest, conf, threshold=0.5, folds=folds)
print("fold results (threshold 0.5):")
for i, fold in enumerate(result.folds):
    print(
        f"  fold {i}: auc={fold.auc:.3f} tpr={fold.tpr:.3f} tnr={fold.tnr:.3f} "
        f"confusion tp={fold.counts.tp} fp={fold.counts.fp} tn={fold.counts.tn} fn={fold.counts.fn}"
    )
print("\nsummaries (mean with 95% Student-t interval):")
for name, summary in result.summaries.items():
    print(f"  {name}: {summary.formatted()}")
