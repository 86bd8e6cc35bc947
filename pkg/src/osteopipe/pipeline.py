"""End-to-end study pipeline: preprocess -> classify -> bone mesh ->
localize -> annotate, with a reproducible run manifest.

Each stage is also exposed on its own so the CLI subcommands compose to
the exact same artifacts as a full ``run_pipeline`` invocation.
"""
from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bonemesh import BoneMeshConfig, build_bone_model
from .classify import ConfidenceProvider, confidences_for_patient, write_confidence_csv
from .mesh_io import save_boxes, save_mesh
from .preproc import PreprocConfig, preprocess_study
from .tumorloc import TumorLocConfig, annotate_tumor_box, tumor_slice_range
from .volume_io import load_volume, save_mask, save_volume

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version shim
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGE_EXIT_CODES = {"preproc": 1, "classify": 2, "bonemesh": 3, "localize": 4, "io": 5}


class StageError(Exception):
    """Failure attributed to a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = STAGE_EXIT_CODES.get(stage, 5)


@dataclass(frozen=True)
class PipelineConfig:
    input: str = ""
    out_dir: str = "out"
    patient_id: str = "patient0"
    provider_kind: str = "csv"
    provider_source: str = ""
    mesh_format: str = "stl_binary"
    seed: int = 0
    preproc: PreprocConfig = field(default_factory=PreprocConfig)
    bonemesh: BoneMeshConfig = field(default_factory=BoneMeshConfig)
    tumorloc: TumorLocConfig = field(default_factory=TumorLocConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tumorloc"]["filter_order"] = list(self.tumorloc.filter_order)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


CONFIG_TEMPLATE = """\
# osteopipe pipeline configuration

input = ""            # path to the input .ostv volume
out_dir = "out"
patient_id = "patient0"
provider_kind = "csv"   # csv | model
provider_source = ""    # confidence CSV or TorchScript model file
mesh_format = "stl_binary"  # stl_binary | ply_ascii
seed = 0

[preproc]
opening_radius_px = 10
roi_size = 256
component_count = 2
otsu_bins = 256

[bonemesh]
gaussian_sigma = 2.0
kmeans_k = 5
closing_radius_2d = 3
volumetric_radius = 3
min_component_voxels = 100
taubin_lambda = 0.5
taubin_mu = -0.53
taubin_iterations = 10
kmeans_seed = 0

[tumorloc]
threshold = 0.95
gaussian_sigma = 2.0
median_kernel = 3
min_run_length = 2

[augment]
flip_p = 0.5
rotate_p = 0.2
zoom_p = 0.2
noise_p = 0.2
noise_sigma = 0.05
shift_p = 0.8
shift_offset = 0.2
dropout_p = 0.2
seed = 0
"""


def load_config(path: str | Path) -> PipelineConfig:
    """Read a pipeline TOML file into a PipelineConfig."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    pre = raw.get("preproc", {})
    bone = raw.get("bonemesh", {})
    loc = raw.get("tumorloc", {})
    if "filter_order" in loc:
        loc["filter_order"] = tuple(loc["filter_order"])
    return PipelineConfig(
        input=raw.get("input", ""),
        out_dir=raw.get("out_dir", "out"),
        patient_id=raw.get("patient_id", "patient0"),
        provider_kind=raw.get("provider_kind", "csv"),
        provider_source=raw.get("provider_source", ""),
        mesh_format=raw.get("mesh_format", "stl_binary"),
        seed=int(raw.get("seed", 0)),
        preproc=PreprocConfig(**pre),
        bonemesh=BoneMeshConfig(**bone),
        tumorloc=TumorLocConfig(**loc),
    )


def _mesh_suffix(fmt: str) -> str:
    return ".stl" if fmt == "stl_binary" else ".ply"


@dataclass
class RunResult:
    out_dir: Path
    artifacts: dict[str, str]
    timings: dict[str, float]
    spans: dict[str, tuple[int, int] | None]

    def manifest_dict(self, cfg: PipelineConfig) -> dict:
        return {
            "config": cfg.to_dict(),
            "config_sha256": cfg.config_hash(),
            "stage_seconds": self.timings,
            "artifacts": self.artifacts,
            "tumor_spans": {k: (list(v) if v else None) for k, v in self.spans.items()},
        }


def run_pipeline(cfg: PipelineConfig) -> RunResult:
    """Execute the full per-study pipeline and write all artifacts.

    Artifacts per leg ROI <side> in <out_dir>: roi_<side>.ostv,
    confidences_<side>.csv, bone_<side>.<ext> (+ mask), annotated_<side>
    mesh when a tumor span is found, the combined boxes.json, and run.json
    with the config hash and stage timings.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}
    timings: dict[str, float] = {}
    spans: dict[str, tuple[int, int] | None] = {}

    t0 = time.perf_counter()
    try:
        volume = load_volume(cfg.input, "raw_volume")
    except (OSError, ValueError) as exc:
        raise StageError("io", str(exc)) from exc
    timings["io"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        rois, report = preprocess_study(volume, cfg.preproc)
    except ValueError as exc:
        raise StageError("preproc", str(exc)) from exc
    sides = [c.side for c in report.crops]
    for side, roi in zip(sides, rois):
        path = out_dir / f"roi_{side}.ostv"
        save_volume(roi, path)
        artifacts[f"roi_{side}"] = str(path)
    report_path = out_dir / "preproc_report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    artifacts["preproc_report"] = str(report_path)
    timings["preproc"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    series_by_side = {}
    try:
        provider = ConfidenceProvider(cfg.provider_kind, Path(cfg.provider_source))
        for side, roi in zip(sides, rois):
            series = confidences_for_patient(provider, roi, cfg.patient_id)
            series_by_side[side] = series
            path = out_dir / f"confidences_{side}.csv"
            write_confidence_csv([series], path)
            artifacts[f"confidences_{side}"] = str(path)
    except (OSError, ValueError, RuntimeError) as exc:
        raise StageError("classify", str(exc)) from exc
    timings["classify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    meshes, masks = {}, {}
    try:
        for side, roi in zip(sides, rois):
            mesh, mask = build_bone_model(roi, cfg.bonemesh)
            meshes[side], masks[side] = mesh, mask
            mesh_path = out_dir / f"bone_{side}{_mesh_suffix(cfg.mesh_format)}"
            save_mesh(mesh, mesh_path, cfg.mesh_format)
            mask_path = out_dir / f"bone_mask_{side}.ostv"
            save_mask(mask, mask_path, spacing=roi.spacing)
            artifacts[f"bone_{side}"] = str(mesh_path)
            artifacts[f"bone_mask_{side}"] = str(mask_path)
    except ValueError as exc:
        raise StageError("bonemesh", str(exc)) from exc
    timings["bonemesh"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    all_boxes = []
    try:
        for side, roi in zip(sides, rois):
            span = tumor_slice_range(series_by_side[side], cfg.tumorloc)
            spans[side] = span
            if span is None:
                log.info("no tumor span found for %s ROI", side)
                continue
            annotated = annotate_tumor_box(meshes[side], masks[side], span, roi.spacing)
            path = out_dir / f"annotated_{side}{_mesh_suffix(cfg.mesh_format)}"
            save_mesh(annotated, path, cfg.mesh_format)
            artifacts[f"annotated_{side}"] = str(path)
            all_boxes.extend(annotated.boxes)
    except ValueError as exc:
        raise StageError("localize", str(exc)) from exc
    boxes_path = out_dir / "boxes.json"
    save_boxes(all_boxes, boxes_path)
    artifacts["boxes"] = str(boxes_path)
    timings["localize"] = time.perf_counter() - t0

    result = RunResult(out_dir=out_dir, artifacts=artifacts, timings=timings, spans=spans)
    run_path = out_dir / "run.json"
    run_path.write_text(json.dumps(result.manifest_dict(cfg), indent=2) + "\n")
    artifacts["run_manifest"] = str(run_path)
    return result
