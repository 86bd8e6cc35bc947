import json

import numpy as np
import pytest
from PIL import Image


def write_png16(arr, path):
    Image.fromarray(np.clip(np.round(arr), 0, 65535).astype(np.uint16)).save(path, "PNG")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """20 synthetic 32x32 slices: 4 train patients x 4 slices + 1 val
    patient x 4 slices, both classes present everywhere."""
    root = tmp_path_factory.mktemp("dataset")
    rng = np.random.default_rng(11)
    records = []
    for p in range(5):
        split = "val" if p == 4 else "train"
        for s in range(4):
            label = "tumor" if s % 2 == 0 else "healthy"
            img = rng.random((32, 32)) * 30000
            if label == "tumor":
                img[8:24, 8:24] += 25000  # bright core so the task is learnable
            path = root / f"p{p}_{s}.png"
            write_png16(img, path)
            records.append(
                {
                    "patient_id": f"p{p}",
                    "slice_index": s,
                    "image_path": str(path),
                    "label": label,
                    "split": split,
                }
            )
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"records": records}, indent=2))
    return manifest, records
