"""Inference: checkpoint + images -> detections.json in the shared schema."""

import json
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import encode_rle, mask_bbox, mask_feret, write_detections
from .model import TrainConfig, build_model

logger = logging.getLogger(__name__)


def _collect_images(source) -> list[tuple[int, str, np.ndarray]]:
    path = Path(source)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        out = []
        for i, f in enumerate(files):
            with Image.open(f) as im:
                out.append((i + 1, f.name,
                            np.asarray(im.convert("L"), np.float32) / 255.0))
        return out
    doc = json.loads(path.read_text())
    out = []
    for im in doc["images"]:
        with Image.open(path.parent / im["file_name"]) as handle:
            out.append((im["id"], im["file_name"],
                        np.asarray(handle.convert("L"), np.float32) / 255.0))
    return out


def load_checkpoint(checkpoint_path):
    payload = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    cfg_dict = dict(payload["config"])
    cfg_dict["anchor_sizes"] = tuple(cfg_dict["anchor_sizes"])
    config = TrainConfig(**cfg_dict)
    model = build_model(config)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, config


def infer(checkpoint_path, images_source, out_path,
          score_threshold: float | None = None) -> dict:
    """Run the checkpoint on a directory of PNGs or an annotations.json
    image list; writes and returns the detections document."""
    model, config = load_checkpoint(checkpoint_path)
    threshold = (config.score_threshold if score_threshold is None
                 else score_threshold)
    images = _collect_images(images_source)

    entries: list[dict] = []
    image_records: list[dict] = []
    resized: list[int] = []
    next_id = 1
    with torch.no_grad():
        for image_id, file_name, image in images:
            height, width = image.shape
            image_records.append({"id": image_id, "file_name": file_name,
                                  "width": width, "height": height})
            if max(height, width) != config.image_size:
                # the detector's transform resizes keeping aspect ratio and
                # maps masks back; note the deviation in the metadata
                resized.append(image_id)
            tensor = torch.from_numpy(image).unsqueeze(0).repeat(3, 1, 1)
            (output,) = model([tensor])
            scores = output["scores"].numpy()
            masks = output["masks"].numpy()  # (N, 1, H, W) float
            for i in range(len(scores)):
                if scores[i] < threshold:
                    continue
                raster = masks[i, 0] > 0.5
                if not raster.any():
                    continue
                entries.append({
                    "id": next_id,
                    "image_id": image_id,
                    "particle_id": next_id - 1,
                    "category_id": 1,
                    "rle": encode_rle(raster),
                    "bbox": list(mask_bbox(raster)),
                    "visible_fraction": 1.0,
                    "max_feret": mask_feret(raster),
                    "score": float(np.clip(scores[i], 0.0, 1.0)),
                })
                next_id += 1

    meta = {"checkpoint": str(checkpoint_path),
            "score_threshold": threshold,
            "model_image_size": config.image_size}
    if resized:
        meta["resized_image_ids"] = resized
    doc = write_detections(entries, image_records, out_path, meta=meta)
    logger.info("saved %d detections over %d images", len(entries), len(images))
    return doc
