"""Cross-component contract tests: the exported model file and CSVs must
pass validation on the pipeline side (imported here as the consumer)."""
import numpy as np
import pytest
import torch

from trainkit import TrainConfig, compute_embeddings, export_confidences, train
from trainkit.export import read_ostv
from trainkit.models import backbone_features, build_model

osteopipe = pytest.importorskip("osteopipe")


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    manifest, records = tiny_dataset
    out = tmp_path_factory.mktemp("run")
    cfg = TrainConfig(
        model="resnet18", strategy="FT", epochs=2, batch_size=16,
        lr=1e-3, seed=1, pretrained=False,
    )
    return train(cfg, manifest, out), records


@pytest.fixture(scope="module")
def roi_file(tmp_path_factory):
    from osteopipe import Volume
    from osteopipe.volume_io import save_volume

    rng = np.random.default_rng(5)
    path = tmp_path_factory.mktemp("roi") / "roi.ostv"
    save_volume(Volume(rng.random((6, 32, 32)).astype(np.float32)), path)
    return path


def test_ostv_reader_matches_primary_writer(roi_file):
    from osteopipe import load_volume

    ours, spacing = read_ostv(roi_file)
    theirs = load_volume(roi_file)
    assert np.array_equal(ours, theirs.data)
    assert spacing == pytest.approx(theirs.spacing)


def test_exported_confidences_load_in_pipeline(trained, roi_file, tmp_path):
    result, _ = trained
    out_csv = tmp_path / "conf.csv"
    export_confidences(result.model_path, [("pat0", roi_file)], out_csv)

    from osteopipe.classify import read_confidence_csv

    table = read_confidence_csv(out_csv)  # validates header and [0,1] range
    assert len(table) == 6
    assert all((pid == "pat0") for pid, _ in table)


def test_model_file_runs_in_pipeline_provider(trained, roi_file, tmp_path):
    result, _ = trained
    from osteopipe import ConfidenceProvider, confidences_for_patient, load_volume

    roi = load_volume(roi_file)
    provider = ConfidenceProvider("model", result.model_path)
    series = confidences_for_patient(provider, roi, "pat0")
    assert len(series) == 6

    out_csv = tmp_path / "conf.csv"
    export_confidences(result.model_path, [("pat0", roi_file)], out_csv)
    from osteopipe.classify import read_confidence_csv

    ours = [read_confidence_csv(out_csv)[("pat0", z)] for z in range(6)]
    assert series.values == pytest.approx(ours, abs=1e-6)


def test_embeddings_load_in_curation(trained, tmp_path):
    result, records = trained
    items = [(r["patient_id"], r["slice_index"], r["image_path"]) for r in records[:8]]
    out_csv = tmp_path / "emb.csv"
    width = compute_embeddings(result.checkpoint_path, items, out_csv)
    assert width == 512  # resnet18 backbone width

    from osteopipe.curation import load_embeddings_csv

    emb = load_embeddings_csv(out_csv)
    assert len(emb.ids) == 8
    assert emb.vectors.shape == (8, 512)


def test_embeddings_deterministic_for_identical_inputs(trained, tmp_path):
    result, records = trained
    rec = records[0]
    items = [
        (rec["patient_id"], 0, rec["image_path"]),
        (rec["patient_id"], 1, rec["image_path"]),  # same image twice
    ]
    out_csv = tmp_path / "emb.csv"
    compute_embeddings(result.checkpoint_path, items, out_csv)
    from osteopipe.curation import load_embeddings_csv

    emb = load_embeddings_csv(out_csv)
    assert np.array_equal(emb.vectors[0], emb.vectors[1])


def test_densenet_embedding_width_is_1024():
    model = build_model("densenet121", pretrained=False)
    x = torch.zeros(2, 3, 64, 64)
    with torch.no_grad():
        feats = backbone_features(model, "densenet121", x)
    assert feats.shape == (2, 1024)
