"""Dataset loading against the shared annotations.json interchange format.

The trainer talks to the generator exclusively through files, so the
format knowledge (column-major background-first RLE, bbox layout) is
implemented here from the documented schema rather than imported.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image


def decode_rle(runs, width: int, height: int) -> np.ndarray:
    """Column-major RLE, alternating background/foreground, background
    first (possibly 0)."""
    runs = np.asarray(runs, dtype=np.int64)
    if runs.sum() != width * height or np.any(runs < 0):
        raise ValueError(f"runs sum to {runs.sum()}, expected {width * height}")
    values = (np.arange(len(runs)) % 2).astype(bool)
    return np.repeat(values, runs).reshape((height, width), order="F")


def encode_rle(raster: np.ndarray) -> list[int]:
    flat = np.asarray(raster, dtype=bool).flatten(order="F")
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def mask_bbox(raster: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(raster)
    return (int(xs.min()), int(ys.min()),
            int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def mask_feret(raster: np.ndarray) -> float:
    """Max Feret diameter with the shared +1 px pixel-extent convention."""
    ys, xs = np.nonzero(raster)
    pts = np.column_stack([xs, ys]).astype(np.float64)
    if len(pts) == 1:
        return 1.0
    hull = _convex_hull(pts)
    best = 0.0
    for i in range(len(hull)):
        for j in range(i + 1, len(hull)):
            d = float(np.hypot(*(hull[i] - hull[j])))
            if d > best:
                best = d
    return best + 1.0


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    pts = np.unique(pts, axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) > 1 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) > 1 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


@dataclass
class Sample:
    image_id: int
    file_name: str
    image: np.ndarray          # float32 HxW in [0, 1]
    boxes: np.ndarray          # (N, 4) xyxy float32
    masks: np.ndarray          # (N, H, W) bool


def load_dataset(annotations_path) -> list[Sample]:
    """Read annotations.json plus the PNGs referenced next to it."""
    path = Path(annotations_path)
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != "1":
        raise ValueError(f"{path}: unsupported schema_version "
                         f"{doc.get('schema_version')!r}")
    by_image: dict[int, list[dict]] = {}
    for ann in doc["annotations"]:
        by_image.setdefault(ann["image_id"], []).append(ann)

    samples = []
    for im in doc["images"]:
        with Image.open(path.parent / im["file_name"]) as handle:
            image = np.asarray(handle.convert("L"), dtype=np.float32) / 255.0
        boxes, masks = [], []
        for ann in by_image.get(im["id"], []):
            x, y, w, h = ann["bbox"]
            boxes.append([x, y, x + w, y + h])
            masks.append(decode_rle(ann["rle"], im["width"], im["height"]))
        samples.append(Sample(
            image_id=im["id"], file_name=im["file_name"], image=image,
            boxes=np.asarray(boxes, dtype=np.float32).reshape(-1, 4),
            masks=(np.stack(masks) if masks
                   else np.zeros((0,) + image.shape, dtype=bool)),
        ))
    return samples


def to_model_input(image: np.ndarray) -> torch.Tensor:
    """Grayscale [0,1] -> 3xHxW float tensor."""
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
    return t.unsqueeze(0).repeat(3, 1, 1)


def to_target(sample: Sample) -> dict:
    return {
        "boxes": torch.from_numpy(sample.boxes),
        "labels": torch.ones(len(sample.boxes), dtype=torch.int64),
        "masks": torch.from_numpy(sample.masks.astype(np.uint8)),
    }


def write_detections(entries: list[dict], images: list[dict], out_path,
                     meta: dict | None = None) -> dict:
    """Assemble and write a detections document in the shared schema."""
    doc = {
        "schema_version": "1",
        "images": images,
        "annotations": entries,
        "categories": [{"id": 1, "name": "primary_particle"}],
    }
    if meta:
        doc["meta"] = meta
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_suffix(out_path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2) + "\n")
    tmp.replace(out_path)
    return doc
