import json

import numpy as np
import pytest

from osteopipe import DatasetManifest, ManifestRecord
from osteopipe.cli import main
from osteopipe.curation import EmbeddingSet, save_embeddings_csv
from osteopipe.classify import write_confidence_csv
from osteopipe.types import ConfidenceSeries
from osteopipe.volume_io import write_png16


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantom")
    code = main(
        [
            "phantom", "--out", str(out),
            "--dims", "128", "128", "12",
            "--leg-radius", "18", "--bone-radius", "7", "--table", "5",
            "--tumor-slices", "2:9", "--seed", "7", "--patient", "pat0",
        ]
    )
    assert code == 0
    return out


def test_init_template_loads(tmp_path):
    cfg_path = tmp_path / "pipeline.toml"
    assert main(["init", "--out", str(cfg_path)]) == 0
    from osteopipe.pipeline import load_config

    cfg = load_config(cfg_path)
    assert cfg.preproc.opening_radius_px == 10
    assert cfg.tumorloc.threshold == 0.95


def test_phantom_writes_expected_artifacts(phantom_dir):
    assert (phantom_dir / "phantom.ostv").exists()
    assert (phantom_dir / "bone_gt.ostv").exists()
    assert (phantom_dir / "confidences_gt.csv").exists()
    meta = json.loads((phantom_dir / "phantom.json").read_text())
    assert meta["tumor_slices"] == [2, 9]


def test_pipeline_end_to_end_and_rerun_identical(phantom_dir, tmp_path):
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    base = [
        "pipeline",
        "--input", str(phantom_dir / "phantom.ostv"),
        "--provider", "csv",
        "--source", str(phantom_dir / "confidences_gt.csv"),
        "--patient", "pat0",
    ]
    assert main(base + ["--out", str(out_a)]) == 0
    assert main(base + ["--out", str(out_b)]) == 0
    for name in ("boxes.json", "roi_left.ostv", "annotated_left.stl"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
    run = json.loads((out_a / "run.json").read_text())
    assert set(run["stage_seconds"]) == {"io", "preproc", "classify", "bonemesh", "localize"}
    assert run["config_sha256"]
    boxes = json.loads((out_a / "boxes.json").read_text())["boxes"]
    assert len(boxes) == 2  # one tumor box per leg


def test_subcommand_composition_bit_identical(phantom_dir, tmp_path):
    """Manually piped stage outputs must equal the pipeline run bit-for-bit."""
    pipe_out = tmp_path / "pipe"
    assert main([
        "pipeline",
        "--input", str(phantom_dir / "phantom.ostv"),
        "--provider", "csv",
        "--source", str(phantom_dir / "confidences_gt.csv"),
        "--patient", "pat0",
        "--out", str(pipe_out),
    ]) == 0

    manual = tmp_path / "manual"
    manual.mkdir()
    assert main([
        "preprocess", "--input", str(phantom_dir / "phantom.ostv"), "--out", str(manual),
    ]) == 0
    assert (manual / "roi_left.ostv").read_bytes() == (pipe_out / "roi_left.ostv").read_bytes()

    for side in ("left", "right"):
        roi = manual / f"roi_{side}.ostv"
        conf = manual / f"confidences_{side}.csv"
        assert main([
            "classify", "--roi", str(roi), "--provider", "csv",
            "--source", str(phantom_dir / "confidences_gt.csv"),
            "--patient", "pat0", "--out", str(conf),
        ]) == 0
        assert conf.read_bytes() == (pipe_out / f"confidences_{side}.csv").read_bytes()

        mesh = manual / f"bone_{side}.stl"
        assert main(["bonemesh", "--roi", str(roi), "--out", str(mesh)]) == 0
        assert mesh.read_bytes() == (pipe_out / f"bone_{side}.stl").read_bytes()

        annotated = manual / f"annotated_{side}.stl"
        assert main([
            "localize", "--confidences", str(conf), "--roi", str(roi),
            "--mesh", str(mesh), "--mask", str(mesh.with_suffix(".mask.ostv")),
            "--out", str(annotated),
        ]) == 0
        assert annotated.read_bytes() == (pipe_out / f"annotated_{side}.stl").read_bytes()
        assert (
            annotated.with_name(f"annotated_{side}.boxes.json").read_bytes()
            == (pipe_out / f"annotated_{side}.boxes.json").read_bytes()
        )


def test_pipeline_exit_code_missing_input(tmp_path):
    code = main([
        "pipeline", "--input", str(tmp_path / "absent.ostv"),
        "--provider", "csv", "--source", str(tmp_path / "absent.csv"),
        "--out", str(tmp_path / "out"),
    ])
    assert code == 5  # io stage


def test_pipeline_exit_code_missing_provider(phantom_dir, tmp_path):
    code = main([
        "pipeline", "--input", str(phantom_dir / "phantom.ostv"),
        "--provider", "csv", "--source", str(tmp_path / "absent.csv"),
        "--out", str(tmp_path / "out"),
    ])
    assert code == 2  # classify stage


def test_pipeline_exit_code_degenerate_volume(tmp_path):
    from osteopipe import Volume
    from osteopipe.volume_io import save_volume

    flat = tmp_path / "flat.ostv"
    save_volume(Volume(np.zeros((3, 64, 64), dtype=np.float32)), flat)
    conf = tmp_path / "conf.csv"
    write_confidence_csv([ConfidenceSeries("p", np.zeros(3))], conf)
    code = main([
        "pipeline", "--input", str(flat), "--provider", "csv",
        "--source", str(conf), "--out", str(tmp_path / "out"),
    ])
    assert code == 1  # preproc stage


def test_curate_command(tmp_path):
    records = (
        ManifestRecord("a", 0, "a0.png", "healthy", "train"),
        ManifestRecord("b", 0, "b0.png", "tumor", "train"),
        ManifestRecord("c", 0, "c0.png", "tumor", "train"),
    )
    DatasetManifest(records).to_json(tmp_path / "manifest.json")
    emb = EmbeddingSet(
        ids=(("a", 0), ("b", 0), ("c", 0)),
        vectors=np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    )
    save_embeddings_csv(emb, tmp_path / "emb.csv")
    code = main([
        "curate", "--embeddings", str(tmp_path / "emb.csv"),
        "--manifest", str(tmp_path / "manifest.json"),
        "--threshold", "0.95",
        "--out", str(tmp_path / "curated.json"),
        "--report", str(tmp_path / "report.json"),
    ])
    assert code == 0
    curated = DatasetManifest.from_json(tmp_path / "curated.json")
    assert len(curated) == 2
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["removed_ids"] == [["a", 0]]


def test_augment_command(tmp_path, rng):
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    records = []
    for i in range(3):
        p = img_dir / f"s{i}.png"
        write_png16(rng.random((32, 32)) * 65535, p)
        records.append(ManifestRecord("p0", i, str(p), "tumor", "train"))
    DatasetManifest(tuple(records)).to_json(tmp_path / "manifest.json")
    out = tmp_path / "aug"
    code = main([
        "augment", "--manifest", str(tmp_path / "manifest.json"),
        "--copies", "2", "--out", str(out), "--seed", "5",
    ])
    assert code == 0
    assert len(list(out.glob("*.png"))) == 6
    out_manifest = DatasetManifest.from_json(out / "manifest.json")
    assert len(out_manifest) == 9


def test_evaluate_command(tmp_path):
    records = []
    for pid in ("a", "b", "c", "d"):
        for s in range(4):
            label = "tumor" if s % 2 == 0 else "healthy"
            records.append(ManifestRecord(pid, s, f"{pid}{s}.png", label, "train"))
    manifest = DatasetManifest(tuple(records))
    manifest.to_json(tmp_path / "manifest.json")
    series = [
        ConfidenceSeries(pid, np.array([0.9, 0.1, 0.8, 0.2])) for pid in ("a", "b", "c", "d")
    ]
    write_confidence_csv(series, tmp_path / "scores.csv")
    (tmp_path / "folds.json").write_text(json.dumps({"folds": [["a", "b"], ["c", "d"]]}))
    code = main([
        "evaluate", "--manifest", str(tmp_path / "manifest.json"),
        "--scores", str(tmp_path / "scores.csv"),
        "--threshold", "0.5", "--folds", str(tmp_path / "folds.json"),
        "--out", str(tmp_path / "report.json"),
    ])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["summaries"]["auc"]["mean"] == 1.0
    assert report["summaries"]["auc"]["formatted"].startswith("1.000 (")


def test_classify_model_provider_cli(phantom_dir, tmp_path):
    torch = pytest.importorskip("torch")
    from tests.test_classify import save_stub_model

    model = tmp_path / "stub.pt"
    save_stub_model(model)
    # classify one preprocessed ROI with the stub model
    manual = tmp_path / "pre"
    assert main(["preprocess", "--input", str(phantom_dir / "phantom.ostv"), "--out", str(manual)]) == 0
    out_csv = tmp_path / "model_conf.csv"
    code = main([
        "classify", "--roi", str(manual / "roi_left.ostv"),
        "--provider", "model", "--source", str(model),
        "--patient", "pat0", "--out", str(out_csv),
    ])
    assert code == 0
    from osteopipe.classify import read_confidence_csv

    table = read_confidence_csv(out_csv)
    assert len(table) == 12
    assert all(v == pytest.approx(0.5, abs=1e-6) for v in table.values())
