"""Occlusion-aware ground truth: RLE masks, per-particle annotation
records, and the JSON dataset interchange format.

Masks are run-length encoded in column-major scan order, alternating
background/foreground runs and always starting with a background run
(which may be 0). The annotation schema is versioned ("1"); detections
reuse it with an additional per-annotation "score".
"""

import importlib.resources
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import hull
from .errors import CorruptMaskError, InvalidInputError, SchemaError
from .fileio import read_json, write_json_atomic, write_png
from .render import RenderMaps

SCHEMA_VERSION = "1"
CATEGORY = {"id": 1, "name": "primary_particle"}


@dataclass
class Mask:
    """Column-major RLE binary mask."""
    width: int
    height: int
    runs: list[int]

    @classmethod
    def from_array(cls, raster: np.ndarray) -> "Mask":
        raster = np.asarray(raster, dtype=bool)
        height, width = raster.shape
        flat = raster.flatten(order="F")
        if flat.size == 0:
            raise InvalidInputError("raster dimensions must be positive")
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs = [0] + runs
        return cls(width=width, height=height, runs=runs)

    def to_array(self) -> np.ndarray:
        runs = np.asarray(self.runs, dtype=np.int64)
        if np.any(runs < 0) or runs.sum() != self.width * self.height:
            raise CorruptMaskError(
                f"runs sum to {runs.sum()}, expected {self.width * self.height}")
        values = (np.arange(len(runs)) % 2).astype(bool)
        flat = np.repeat(values, runs)
        return flat.reshape((self.height, self.width), order="F")

    def area(self) -> int:
        return int(sum(self.runs[1::2]))


def encode_rle(raster: np.ndarray) -> Mask:
    """Encode a binary raster (column-major, background-first runs)."""
    return Mask.from_array(raster)


def decode_rle(mask: Mask) -> np.ndarray:
    """Decode back to a bool raster; exact inverse of encode_rle."""
    return mask.to_array()


@dataclass
class ParticleRecord:
    """One annotated instance: mask plus derived measurements.

    `score` stays None for ground truth and carries the detection
    confidence in detection files.
    """
    particle_id: int
    mask: Mask
    bbox: tuple[int, int, int, int]
    visible_fraction: float
    max_feret: float
    category_id: int = 1
    score: float | None = None


@dataclass
class AnnotatedImage:
    image_id: int
    file_name: str
    width: int
    height: int
    particles: list[ParticleRecord] = field(default_factory=list)
    image: np.ndarray | None = None


@dataclass
class DatasetManifest:
    name: str
    split: str
    images: list[dict]
    seed: int
    generator_version: str


def extract_masks(maps: RenderMaps, convexify: bool = True,
                  min_visible_fraction: float = 0.01) -> list[ParticleRecord]:
    """Per-particle visible masks from the instance map.

    The visible mask of particle p is the set of pixels it won in the
    depth test. With `convexify` the mask is replaced by the filled
    convex hull of those pixels, restoring the plausible extent of a
    partially occluded near-spherical particle. Particles whose raw
    visible fraction falls below `min_visible_fraction` are dropped.
    """
    inst = maps.instance_id
    records = []
    for pid in np.unique(inst[inst >= 0]):
        visible = inst == pid
        vis_count = int(visible.sum())
        full = max(int(maps.full_area.get(int(pid), vis_count)), 1)
        fraction = min(vis_count / full, 1.0)
        if fraction < min_visible_fraction:
            continue
        raster = hull.convexify_raster(visible) if convexify else visible
        ys, xs = np.nonzero(raster)
        bbox = (int(xs.min()), int(ys.min()),
                int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        records.append(ParticleRecord(
            particle_id=int(pid),
            mask=Mask.from_array(raster),
            bbox=bbox,
            visible_fraction=float(fraction),
            max_feret=float(hull.max_feret_raster(raster)),
        ))
    return records


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def annotations_doc(images: list[AnnotatedImage], *, detections: bool = False) -> dict:
    """Serialize annotated images to the interchange document."""
    out_images = []
    out_annotations = []
    next_id = 1
    for img in images:
        out_images.append({
            "id": img.image_id,
            "file_name": img.file_name,
            "width": img.width,
            "height": img.height,
        })
        for rec in img.particles:
            entry = {
                "id": next_id,
                "image_id": img.image_id,
                "particle_id": rec.particle_id,
                "category_id": rec.category_id,
                "rle": list(rec.mask.runs),
                "bbox": list(rec.bbox),
                "visible_fraction": rec.visible_fraction,
                "max_feret": rec.max_feret,
            }
            if detections:
                if rec.score is None:
                    raise InvalidInputError(
                        f"detection {next_id} in image {img.image_id} has no score")
                entry["score"] = float(rec.score)
            next_id += 1
            out_annotations.append(entry)
    return {
        "schema_version": SCHEMA_VERSION,
        "images": out_images,
        "annotations": out_annotations,
        "categories": [dict(CATEGORY)],
    }


def images_from_doc(doc: dict) -> list[AnnotatedImage]:
    by_id = {}
    order = []
    for im in doc["images"]:
        ai = AnnotatedImage(image_id=im["id"], file_name=im["file_name"],
                            width=im["width"], height=im["height"])
        by_id[im["id"]] = ai
        order.append(ai)
    for ann in doc["annotations"]:
        img = by_id[ann["image_id"]]
        img.particles.append(ParticleRecord(
            particle_id=ann["particle_id"],
            mask=Mask(width=img.width, height=img.height, runs=list(ann["rle"])),
            bbox=tuple(ann["bbox"]),
            visible_fraction=ann["visible_fraction"],
            max_feret=ann["max_feret"],
            category_id=ann.get("category_id", 1),
            score=ann.get("score"),
        ))
    return order


_SCHEMA_CACHE: dict = {}


def _annotation_schema() -> dict:
    if "base" not in _SCHEMA_CACHE:
        ref = importlib.resources.files("particleforge").joinpath(
            "schemas/annotations.schema.json")
        _SCHEMA_CACHE["base"] = json.loads(ref.read_text())
    return _SCHEMA_CACHE["base"]


def validate_doc(doc: dict, *, detections: bool = False) -> None:
    """Schema-validate an annotations/detections document.

    Raises SchemaError carrying the JSON path of the first failure.
    Detection documents must additionally carry a score per annotation.
    """
    schema = _annotation_schema()
    if detections:
        schema = json.loads(json.dumps(schema))
        schema["properties"]["annotations"]["items"]["required"] = \
            schema["properties"]["annotations"]["items"]["required"] + ["score"]
    validator = jsonschema.Draft202012Validator(schema)
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        path = "$" + "".join(f"[{p!r}]" if isinstance(p, str) else f"[{p}]"
                             for p in error.absolute_path)
        raise SchemaError(f"{path}: {error.message}")
    ids = [im["id"] for im in doc["images"]]
    if len(set(ids)) != len(ids):
        raise SchemaError("$['images']: image ids are not unique")


def save_annotations(images: list[AnnotatedImage], path, *, detections: bool = False) -> dict:
    doc = annotations_doc(images, detections=detections)
    write_json_atomic(path, doc)
    return doc


def load_annotations(path, *, detections: bool = False) -> list[AnnotatedImage]:
    doc = read_json(path)
    validate_doc(doc, detections=detections)
    return images_from_doc(doc)


def export_dataset(images: list[AnnotatedImage], out_dir, *, split: str = "train",
                   name: str = "synthetic", seed: int = 0) -> DatasetManifest:
    """Write PNGs + annotations.json + manifest.json for one split."""
    from . import __version__

    split_dir = Path(out_dir) / split
    split_dir.mkdir(parents=True, exist_ok=True)
    for img in images:
        if img.image is not None:
            write_png(split_dir / img.file_name, img.image)
    save_annotations(images, split_dir / "annotations.json")
    manifest = DatasetManifest(
        name=name, split=split,
        images=[{"id": im.image_id, "file_name": im.file_name,
                 "particles": len(im.particles)} for im in images],
        seed=int(seed), generator_version=__version__)
    write_json_atomic(split_dir / "manifest.json", {
        "name": manifest.name, "split": manifest.split, "images": manifest.images,
        "seed": manifest.seed, "generator_version": manifest.generator_version,
    })
    for im in images:
        target = split_dir / im.file_name
        if im.image is not None and not target.exists():
            raise OSError(f"exported image missing: {target}")
    return manifest


def load_dataset(out_dir, split: str = "train") -> list[AnnotatedImage]:
    return load_annotations(Path(out_dir) / split / "annotations.json")
