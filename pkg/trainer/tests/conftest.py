import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from particletrainer.data import encode_rle, mask_feret


def make_disk_dataset(out_dir: Path, n_images: int, size: int = 64,
                      seed: int = 0) -> Path:
    """Hand-drawn disk dataset in the shared annotations schema (no
    dependency on the generator package)."""
    rng = np.random.default_rng(seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    ann_id = 1
    for image_id in range(1, n_images + 1):
        img = np.full((size, size), 0.15, np.float32)
        ys, xs = np.mgrid[0:size, 0:size]
        n_disks = int(rng.integers(2, 4))
        for p in range(n_disks):
            r = float(rng.uniform(size * 0.09, size * 0.16))
            cx = float(rng.uniform(r + 2, size - r - 2))
            cy = float(rng.uniform(r + 2, size - r - 2))
            raster = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
            img[raster] = float(rng.uniform(0.6, 0.9))
            x0, y0 = int(xs[raster].min()), int(ys[raster].min())
            annotations.append({
                "id": ann_id, "image_id": image_id, "particle_id": p,
                "category_id": 1, "rle": encode_rle(raster),
                "bbox": [x0, y0, int(xs[raster].max()) - x0 + 1,
                         int(ys[raster].max()) - y0 + 1],
                "visible_fraction": 1.0,
                "max_feret": mask_feret(raster),
            })
            ann_id += 1
        file_name = f"image_{image_id:05d}.png"
        Image.fromarray((img * 255).astype(np.uint8), mode="L").save(
            out_dir / file_name)
        images.append({"id": image_id, "file_name": file_name,
                       "width": size, "height": size})
    doc = {"schema_version": "1", "images": images, "annotations": annotations,
           "categories": [{"id": 1, "name": "primary_particle"}]}
    path = out_dir / "annotations.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture(scope="session")
def disk_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("disks")
    return {
        "train": make_disk_dataset(root / "train", 6, seed=1),
        "val": make_disk_dataset(root / "val", 3, seed=2),
    }


@pytest.fixture
def lr_range_file(tmp_path):
    path = tmp_path / "lr_range.json"
    path.write_text(json.dumps({
        "m": -100.0, "b": 1.0, "c": 0.4,
        "alpha_min": 0.0008, "alpha_max": 0.006, "rms_residual": 0.0,
    }))
    return path
