"""Command line interface.

Subcommands mirror the pipeline stages (`preprocess`, `curate`, `augment`,
`classify`, `bonemesh`, `localize`, `evaluate`), plus `pipeline` for the
end-to-end run, `phantom` for synthetic test volumes and `init` for a
config template.  The ``OSTEOPIPE_LOG`` environment variable sets the log
level.  Stage failures exit with distinct codes: 1 preproc, 2 classify,
3 bonemesh, 4 localize, 5 io/validation.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import curation, metrics
from .bonemesh import BoneMeshConfig, build_bone_model
from .classify import ConfidenceProvider, confidences_for_patient, read_confidence_csv, write_confidence_csv
from .mesh_io import append_boxes_to_mesh_file, format_for_path, save_mesh
from .phantom import PhantomSpec, generate_phantom
from .pipeline import (
    CONFIG_TEMPLATE,
    PipelineConfig,
    StageError,
    load_config,
    run_pipeline,
)
from .preproc import PreprocConfig, preprocess_study
from .tumorloc import TumorLocConfig, tumor_bounding_box, tumor_slice_range
from .types import ConfidenceSeries, DatasetManifest
from .volume_io import load_mask, load_volume, save_mask, save_volume

log = logging.getLogger("osteopipe")


def _setup_logging() -> None:
    level = os.environ.get("OSTEOPIPE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _cmd_init(args) -> int:
    Path(args.out).write_text(CONFIG_TEMPLATE)
    print(f"wrote config template to {args.out}")
    return 0


def _cmd_phantom(args) -> int:
    first_last = None
    if args.tumor_slices:
        a, b = args.tumor_slices.split(":")
        first_last = (int(a), int(b))
    spec = PhantomSpec(
        dims=tuple(args.dims),
        leg_radius_vox=args.leg_radius,
        bone_radius_vox=args.bone_radius,
        table_thickness_vox=args.table,
        tumor_slices=first_last,
        seed=args.seed,
    )
    volume, bone, conf = generate_phantom(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(volume, out / "phantom.ostv")
    save_mask(bone, out / "bone_gt.ostv", spacing=spec.spacing)
    conf = dataclasses.replace(conf, patient_id=args.patient)
    write_confidence_csv([conf], out / "confidences_gt.csv")
    (out / "phantom.json").write_text(
        json.dumps(
            {
                "dims": list(spec.dims),
                "leg_radius_vox": spec.leg_radius_vox,
                "bone_radius_vox": spec.bone_radius_vox,
                "table_thickness_vox": spec.table_thickness_vox,
                "tumor_slices": list(spec.tumor_slices) if spec.tumor_slices else None,
                "seed": spec.seed,
            },
            indent=2,
        )
        + "\n"
    )
    print(f"phantom written to {out}")
    return 0


def _cmd_preprocess(args) -> int:
    cfg = PreprocConfig(opening_radius_px=args.opening_radius, roi_size=args.roi)
    volume = load_volume(args.input, args.format)
    rois, report = preprocess_study(volume, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for crop, roi in zip(report.crops, rois):
        save_volume(roi, out / f"roi_{crop.side}.ostv")
    (out / "preproc_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"wrote {len(rois)} ROI volume(s) to {out}")
    return 0


def _cmd_curate(args) -> int:
    emb = curation.load_embeddings_csv(args.embeddings)
    manifest = DatasetManifest.from_json(args.manifest)
    report = curation.find_conflicts(emb, manifest, args.threshold)
    curated = curation.apply_curation(manifest, report)
    curated.to_json(args.out)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(
        f"{len(report.pairs)} conflicting pair(s), removed {len(report.removed_ids)} "
        f"record(s); curated manifest has {len(curated)} records"
    )
    return 0


def _cmd_augment(args) -> int:
    manifest = DatasetManifest.from_json(args.manifest)
    cfg = aug.AugmentConfig(seed=args.seed)
    if args.config:
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        with open(args.config, "rb") as fh:
            raw = tomllib.load(fh).get("augment", {})
        if "dropout_patches" in raw:
            raw["dropout_patches"] = tuple(raw["dropout_patches"])
        if "zoom_range" in raw:
            raw["zoom_range"] = tuple(raw["zoom_range"])
        cfg = aug.AugmentConfig(**raw)
    out_manifest = aug.augment_dataset(manifest, cfg, args.copies, args.out)
    path = Path(args.out) / "manifest.json"
    out_manifest.to_json(path)
    print(f"augmented manifest with {len(out_manifest)} records at {path}")
    return 0


def _cmd_classify(args) -> int:
    roi = load_volume(args.roi, "raw_volume")
    provider = ConfidenceProvider(args.provider, Path(args.source))
    series = confidences_for_patient(provider, roi, args.patient)
    write_confidence_csv([series], args.out)
    print(f"wrote {len(series)} confidences to {args.out}")
    return 0


def _cmd_bonemesh(args) -> int:
    roi = load_volume(args.roi, "raw_volume")
    cfg = BoneMeshConfig(
        min_component_voxels=args.min_component, taubin_iterations=args.taubin_iters
    )
    mesh, mask = build_bone_model(roi, cfg)
    save_mesh(mesh, args.out, format_for_path(args.out))
    mask_path = args.mask_out or str(Path(args.out).with_suffix(".mask.ostv"))
    save_mask(mask, mask_path, spacing=roi.spacing)
    print(f"bone mesh: {mesh.n_vertices} vertices, {mesh.n_faces} faces -> {args.out}")
    return 0


def _cmd_localize(args) -> int:
    roi = load_volume(args.roi, "raw_volume")
    table = read_confidence_csv(args.confidences)
    patient_ids = sorted({pid for pid, _ in table})
    pid = args.patient or (patient_ids[0] if len(patient_ids) == 1 else None)
    if pid is None:
        raise ValueError("confidence csv has multiple patients; pass --patient")
    values = [table[(pid, z)] for z in range(roi.n_slices)]
    series = ConfidenceSeries(pid, np.array(values))
    cfg = TumorLocConfig(threshold=args.threshold)
    span = tumor_slice_range(series, cfg)
    boxes = []
    if span is not None:
        mask_path = args.mask or str(Path(args.mesh).with_suffix(".mask.ostv"))
        mask = load_mask(mask_path)
        boxes.append(tumor_bounding_box(mask, span, roi.spacing))
        print(f"tumor span: slices {span[0]}..{span[1]}")
    else:
        print("no tumor span found")
    append_boxes_to_mesh_file(args.mesh, boxes, args.out)
    return 0


def _cmd_evaluate(args) -> int:
    manifest = DatasetManifest.from_json(args.manifest)
    table = read_confidence_csv(args.scores)
    folds = json.loads(Path(args.folds).read_text())["folds"]
    report = metrics.evaluate_patientwise(manifest, table, args.threshold, folds)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    for name, summary in report.summaries.items():
        print(f"{name}: {summary.formatted() if summary else 'n/a'}")
    return 0


def _cmd_pipeline(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.input:
        overrides["input"] = args.input
    if args.out:
        overrides["out_dir"] = args.out
    if args.provider:
        overrides["provider_kind"] = args.provider
    if args.source:
        overrides["provider_source"] = args.source
    if args.patient:
        overrides["patient_id"] = args.patient
    cfg = dataclasses.replace(cfg, **overrides)
    result = run_pipeline(cfg)
    print(f"pipeline complete: {len(result.artifacts)} artifacts in {result.out_dir}")
    for side, span in result.spans.items():
        msg = f"slices {span[0]}..{span[1]}" if span else "none"
        print(f"  tumor span ({side}): {msg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osteopipe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a pipeline config template")
    p.add_argument("--out", default="pipeline.toml")
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("phantom", help="generate a synthetic leg phantom")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", nargs=3, type=int, default=[256, 256, 64], metavar=("NX", "NY", "NZ"))
    p.add_argument("--leg-radius", type=int, default=36)
    p.add_argument("--bone-radius", type=int, default=14)
    p.add_argument("--table", type=int, default=8)
    p.add_argument("--tumor-slices", default="20:35", help="inclusive first:last, empty for none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patient", default="phantom")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("preprocess", help="table removal + leg ROI extraction")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="raw_volume", choices=["raw_volume", "png_stack"])
    p.add_argument("--opening-radius", type=int, default=10)
    p.add_argument("--roi", type=int, default=256)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("curate", help="embedding-based label conflict removal")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("augment", help="write augmented copies of train/val images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="TOML file with an [augment] table")
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("classify", help="per-slice tumor confidences for one ROI")
    p.add_argument("--roi", required=True)
    p.add_argument("--provider", required=True, choices=["csv", "model"])
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patient", default="patient0")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("bonemesh", help="bone mask + smoothed surface mesh")
    p.add_argument("--roi", required=True)
    p.add_argument("--out", required=True, help="mesh path (.stl or .ply)")
    p.add_argument("--mask-out", default=None)
    p.add_argument("--min-component", type=int, default=100)
    p.add_argument("--taubin-iters", type=int, default=10)
    p.set_defaults(func=_cmd_bonemesh)

    p = sub.add_parser("localize", help="tumor slice span + bounding box annotation")
    p.add_argument("--confidences", required=True)
    p.add_argument("--roi", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--mask", default=None, help="bone mask .ostv (default: <mesh>.mask.ostv)")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--patient", default=None)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("evaluate", help="fold-aggregated AUC / TPR / TNR report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="run the full study pipeline")
    p.add_argument("--config", default=None)
    p.add_argument("--input", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--provider", default=None, choices=["csv", "model"])
    p.add_argument("--source", default=None)
    p.add_argument("--patient", default=None)
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
