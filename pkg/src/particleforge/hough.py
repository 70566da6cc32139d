"""Circular Hough transform baseline detector.

Gradient-directed (two-point) voting: every edge pixel casts votes along
both senses of its gradient direction at every candidate radius. Each
radius slice of the accumulator is smoothed, normalized by the
theoretical vote maximum 2*pi*r, and thresholded; surviving peaks pass a
center-distance non-maximum suppression and become filled-disk
detections. Default parameters are presets tuned on synthetic
calibration scenes.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import hull
from .errors import InvalidParamsError
from .groundtruth import AnnotatedImage, Mask, ParticleRecord

ACCUMULATOR_SIGMA = 1.0


@dataclass(frozen=True)
class HoughParams:
    """Detector settings. The thresholds are presets calibrated on
    rendered single-circle scenes: gradient-direction scatter plus the
    slice smoothing leaves real peaks at roughly 5% of the theoretical
    2*pi*r vote count."""
    r_min: int = 8
    r_max: int = 64
    accumulator_threshold: float = 0.045
    edge_threshold: float = 0.20
    nms_distance_factor: float = 0.8
    max_circles: int = 512

    def __post_init__(self):
        if not 1 <= self.r_min < self.r_max:
            raise InvalidParamsError(
                f"need 1 <= r_min < r_max, got ({self.r_min}, {self.r_max})")
        if not 0 < self.accumulator_threshold <= 1:
            raise InvalidParamsError("accumulator_threshold must be in (0, 1]")
        if not 0 <= self.edge_threshold <= 1:
            raise InvalidParamsError("edge_threshold must be in [0, 1]")
        if self.nms_distance_factor <= 0:
            raise InvalidParamsError("nms_distance_factor must be positive")
        if self.max_circles < 1:
            raise InvalidParamsError("max_circles must be >= 1")


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    radius: float
    score: float


def gradient_map(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel gradient: (magnitude normalized to [0, 1], direction).

    Magnitude is scaled by the image's own maximum (a constant image
    yields all zeros); direction is arctan2(gy, gx), pointing toward
    increasing intensity.
    """
    img = np.asarray(image, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    direction = np.arctan2(gy, gx)
    return mag, direction


def hough_detect(image: np.ndarray, params: HoughParams) -> list[Circle]:
    """Detect circles; returns them sorted by descending score."""
    img = np.asarray(image)
    height, width = img.shape
    if params.r_max > 0.5 * float(np.hypot(width, height)):
        raise InvalidParamsError(
            f"r_max={params.r_max} exceeds half the image diagonal")

    mag, direction = gradient_map(img)
    ey, ex = np.nonzero(mag >= params.edge_threshold)
    candidates: list[tuple[float, int, int, int]] = []
    if len(ex) > 0:
        ux = np.cos(direction[ey, ex])
        uy = np.sin(direction[ey, ex])
        for r in range(params.r_min, params.r_max + 1):
            acc = np.zeros((height, width), dtype=np.float64)
            for sign in (1.0, -1.0):
                vx = np.rint(ex + sign * r * ux).astype(np.int64)
                vy = np.rint(ey + sign * r * uy).astype(np.int64)
                ok = (vx >= 0) & (vx < width) & (vy >= 0) & (vy < height)
                np.add.at(acc, (vy[ok], vx[ok]), 1.0)
            acc = ndimage.gaussian_filter(acc, ACCUMULATOR_SIGMA, mode="constant")
            score = np.clip(acc / (2.0 * np.pi * r), 0.0, 1.0)
            local_max = score == ndimage.maximum_filter(score, size=3, mode="constant")
            py, px = np.nonzero((score >= params.accumulator_threshold) & local_max)
            for x, y in zip(px, py):
                candidates.append((float(score[y, x]), int(x), int(y), r))

    # descending score; deterministic tie-break on (r, y, x)
    candidates.sort(key=lambda c: (-c[0], c[3], c[2], c[1]))
    kept: list[Circle] = []
    for score, x, y, r in candidates:
        if len(kept) >= params.max_circles:
            break
        too_close = any(
            np.hypot(x - c.x, y - c.y) < params.nms_distance_factor * min(r, c.radius)
            for c in kept)
        if not too_close:
            kept.append(Circle(x=float(x), y=float(y), radius=float(r), score=score))
    return kept


def _disk_raster(circle: Circle, width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    x0 = max(int(np.ceil(circle.x - circle.radius)), 0)
    x1 = min(int(np.floor(circle.x + circle.radius)), width - 1)
    y0 = max(int(np.ceil(circle.y - circle.radius)), 0)
    y1 = min(int(np.floor(circle.y + circle.radius)), height - 1)
    if x0 > x1 or y0 > y1:
        return out
    xs = np.arange(x0, x1 + 1, dtype=np.float64) - circle.x
    ys = np.arange(y0, y1 + 1, dtype=np.float64) - circle.y
    out[y0:y1 + 1, x0:x1 + 1] = xs[None, :] ** 2 + ys[:, None] ** 2 <= circle.radius ** 2
    return out


def circles_to_records(circles: list[Circle], width: int, height: int,
                       start_id: int = 0) -> list[ParticleRecord]:
    """Rasterize circles into detection records with filled-disk masks."""
    records = []
    for i, c in enumerate(circles):
        raster = _disk_raster(c, width, height)
        if not raster.any():
            continue
        ys, xs = np.nonzero(raster)
        records.append(ParticleRecord(
            particle_id=start_id + i,
            mask=Mask.from_array(raster),
            bbox=(int(xs.min()), int(ys.min()),
                  int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)),
            visible_fraction=1.0,
            max_feret=float(hull.max_feret_raster(raster)),
            score=float(c.score),
        ))
    return records


def detect_image(image: np.ndarray, params: HoughParams, image_id: int,
                 file_name: str = "") -> AnnotatedImage:
    height, width = image.shape
    circles = hough_detect(image, params)
    return AnnotatedImage(
        image_id=image_id, file_name=file_name, width=width, height=height,
        particles=circles_to_records(circles, width, height))
