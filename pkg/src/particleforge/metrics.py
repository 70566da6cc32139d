"""Every measurement used in the evaluation pipeline: max Feret
diameter, solidity, PSD statistics, KL divergence, mask IoU, the AP
family, percentage errors and MAPE.

Conventions (also stated in docs/formats.md):
  * max Feret adds 1 px for pixel extent, so a single pixel measures 1.
  * sigma_g uses the population standard deviation of ln(d).
  * KL divergence uses the natural logarithm; bins where either
    distribution is zero are excluded without renormalization.
  * AP is 101-point interpolated over recall 0:0.01:1; the IoU
    threshold comparison is inclusive and score ties break by
    ascending detection id.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import hull
from .errors import EmptyMaskError, InvalidInputError
from .groundtruth import Mask

logger = logging.getLogger(__name__)

AP_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95)
RECALL_GRID = np.arange(101) / 100.0
EXCLUDED_MASS_WARN = 0.05


def _as_raster(mask) -> np.ndarray:
    if isinstance(mask, Mask):
        return mask.to_array()
    return np.asarray(mask, dtype=bool)


# ---------------------------------------------------------------------------
# shape measurements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskMetrics:
    area: int
    convex_area: int
    solidity: float
    max_feret: float


def max_feret(mask) -> float:
    """Max Feret diameter: largest distance between two outline points,
    measured between hull pixel centers via rotating calipers, +1 px."""
    raster = _as_raster(mask)
    if not raster.any():
        raise EmptyMaskError("max_feret of an empty mask")
    return hull.max_feret_raster(raster)


def solidity(mask) -> MaskMetrics:
    """Area over convex-hull area, both as pixel counts."""
    raster = _as_raster(mask)
    area = int(raster.sum())
    if area == 0:
        raise EmptyMaskError("solidity of an empty mask")
    conv = hull.convexify_raster(raster)
    conv_area = int(conv.sum())
    return MaskMetrics(area=area, convex_area=conv_area,
                       solidity=area / conv_area,
                       max_feret=hull.max_feret_raster(raster))


def component_solidities(masks, width: int, height: int) -> list[float]:
    """Solidity of each connected component of the mask union.

    Components approximate agglomerate silhouettes when per-particle
    masks are given, which is the sintering-degree proxy plotted against
    the evaluation metrics.
    """
    union = np.zeros((height, width), dtype=bool)
    for m in masks:
        union |= _as_raster(m)
    if not union.any():
        raise EmptyMaskError("no foreground in mask union")
    labels, n = ndimage.label(union)
    return [solidity(labels == i).solidity for i in range(1, n + 1)]


def mean_component_solidity(masks, width: int, height: int) -> float:
    return float(np.mean(component_solidities(masks, width, height)))


# ---------------------------------------------------------------------------
# PSD statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsdStats:
    d_g: float
    sigma_g: float
    n_particles: int


def psd_stats(diameters) -> PsdStats:
    """Geometric mean diameter, geometric standard deviation (population
    convention) and particle count."""
    d = np.asarray(diameters, dtype=np.float64)
    if d.size == 0:
        raise InvalidInputError("diameter list is empty")
    if np.any(d <= 0):
        raise InvalidInputError("diameters must be positive")
    ln = np.log(d)
    return PsdStats(d_g=float(np.exp(ln.mean())),
                    sigma_g=float(np.exp(ln.std(ddof=0))),
                    n_particles=int(d.size))


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple
    probabilities: tuple

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if len(edges) != len(probs) + 1:
            raise InvalidInputError("need len(bin_edges) == len(probabilities) + 1")
        if np.any(np.diff(edges) <= 0):
            raise InvalidInputError("bin_edges must be strictly ascending")
        if np.any(probs < 0):
            raise InvalidInputError("negative probability mass")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"probabilities sum to {probs.sum()!r}, not 1")

    @classmethod
    def from_samples(cls, values, bin_edges) -> "Histogram":
        counts, edges = np.histogram(np.asarray(values, dtype=np.float64),
                                     bins=np.asarray(bin_edges, dtype=np.float64))
        total = counts.sum()
        if total == 0:
            raise InvalidInputError("no samples fall inside the bins")
        return cls(bin_edges=tuple(edges), probabilities=tuple(counts / total))


def kl_divergence(p: Histogram, q: Histogram) -> float:
    """Kullback-Leibler divergence sum_x p(x) ln(p(x)/q(x)).

    Bins where either distribution is zero are excluded and the
    remaining masses are used as-is (no renormalization); a warning is
    logged when the excluded mass of p exceeds 5%.
    """
    pe = np.asarray(p.bin_edges)
    qe = np.asarray(q.bin_edges)
    if not np.array_equal(pe, qe):
        raise InvalidInputError("histograms must share identical bin edges")
    pp = np.asarray(p.probabilities)
    qq = np.asarray(q.probabilities)
    keep = (pp > 0) & (qq > 0)
    excluded = float(pp[~keep].sum())
    if excluded > EXCLUDED_MASS_WARN:
        logger.warning("KL divergence excluded %.1f%% of p's mass (zero bins)",
                       100.0 * excluded)
    if not np.any(keep):
        return 0.0
    return float(np.sum(pp[keep] * np.log(pp[keep] / qq[keep])))


# ---------------------------------------------------------------------------
# IoU and average precision
# ---------------------------------------------------------------------------

def iou(a, b) -> float:
    """Intersection over union of two same-size masks; 0 if both empty."""
    ra = _as_raster(a)
    rb = _as_raster(b)
    if ra.shape != rb.shape:
        raise InvalidInputError(f"mask shapes differ: {ra.shape} vs {rb.shape}")
    union = np.logical_or(ra, rb).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(ra, rb).sum()
    return float(inter / union)


@dataclass(frozen=True)
class Instance:
    """One ground-truth object or detection in the matcher's terms."""
    image_id: int
    instance_id: int
    mask: object
    score: float | None = None


@dataclass
class ApReport:
    ap: float
    ap50: float
    ap75: float
    thresholds: tuple = AP_THRESHOLDS
    per_threshold: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)


def _interp_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolated AP: mean over the recall grid of the max
    precision at recall >= r."""
    if len(recall) == 0:
        return 0.0
    order = np.argsort(recall, kind="stable")
    r_sorted = recall[order]
    p_sorted = precision[order]
    # running max of precision from the right (highest recall down)
    p_max = np.maximum.accumulate(p_sorted[::-1])[::-1]
    idx = np.searchsorted(r_sorted, RECALL_GRID, side="left")
    vals = np.where(idx < len(r_sorted), p_max[np.minimum(idx, len(r_sorted) - 1)], 0.0)
    return float(vals.mean())


def match_and_ap(gt: list[Instance], det: list[Instance]) -> ApReport:
    """Greedy score-ordered matching and the COCO-style AP family.

    Per threshold t, detections are processed in descending score order
    (ties by ascending detection id) and matched to the unmatched
    ground-truth object of highest IoU >= t within the same image. The
    cumulative precision-recall staircase over all images gives the
    101-point interpolated AP; `ap` averages over the 0.50:0.05:0.95
    threshold sweep.
    """
    for d in det:
        if d.score is None:
            raise InvalidInputError(f"detection {d.instance_id} has no score")

    gt_by_image: dict[int, list[Instance]] = {}
    for g in gt:
        gt_by_image.setdefault(g.image_id, []).append(g)
    det_by_image: dict[int, list[Instance]] = {}
    for d in det:
        det_by_image.setdefault(d.image_id, []).append(d)

    iou_by_image: dict[int, np.ndarray] = {}
    det_order_by_image: dict[int, list[int]] = {}
    for image_id, dets in det_by_image.items():
        gts = gt_by_image.get(image_id, [])
        rasters_gt = [_as_raster(g.mask) for g in gts]
        matrix = np.zeros((len(dets), len(gts)))
        for i, d in enumerate(dets):
            rd = _as_raster(d.mask)
            for j, rg in enumerate(rasters_gt):
                if rd.shape != rg.shape:
                    raise InvalidInputError("detection/GT mask shapes differ")
                union = np.logical_or(rd, rg).sum()
                matrix[i, j] = np.logical_and(rd, rg).sum() / union if union else 0.0
        iou_by_image[image_id] = matrix
        det_order_by_image[image_id] = sorted(
            range(len(dets)), key=lambda i: (-dets[i].score, dets[i].instance_id))

    n_gt = len(gt)
    all_dets = sorted(det, key=lambda d: (-d.score, d.instance_id))
    report = ApReport(ap=0.0, ap50=0.0, ap75=0.0)
    for t in AP_THRESHOLDS:
        matched_flag: dict[tuple[int, int], bool] = {}
        for image_id, dets in det_by_image.items():
            matrix = iou_by_image[image_id]
            gt_taken = np.zeros(matrix.shape[1], dtype=bool)
            for i in det_order_by_image[image_id]:
                best_j, best_iou = -1, 0.0
                for j in range(matrix.shape[1]):
                    if not gt_taken[j] and matrix[i, j] > best_iou:
                        best_j, best_iou = j, matrix[i, j]
                ok = best_j >= 0 and best_iou >= t
                if ok:
                    gt_taken[best_j] = True
                matched_flag[(image_id, dets[i].instance_id)] = ok

        tp = np.array([matched_flag[(d.image_id, d.instance_id)] for d in all_dets],
                      dtype=np.float64)
        if len(all_dets) == 0:
            ap_t = 1.0 if n_gt == 0 else 0.0
            recall = np.zeros(0)
            precision = np.zeros(0)
        elif n_gt == 0:
            ap_t = 0.0
            recall = np.zeros(len(all_dets))
            precision = np.zeros(len(all_dets))
        else:
            cum_tp = np.cumsum(tp)
            precision = cum_tp / np.arange(1, len(all_dets) + 1)
            recall = cum_tp / n_gt
            ap_t = _interp_ap(recall, precision)
        report.per_threshold[t] = ap_t
        report.curves[t] = (recall, precision)

    report.ap = float(np.mean([report.per_threshold[t] for t in AP_THRESHOLDS]))
    report.ap50 = report.per_threshold[0.50]
    report.ap75 = report.per_threshold[0.75]
    return report


# ---------------------------------------------------------------------------
# percentage errors
# ---------------------------------------------------------------------------

def percentage_error(actual: float, desired: float) -> float:
    """(actual - desired) / desired * 100%."""
    if desired == 0:
        raise InvalidInputError("desired value must be nonzero")
    return (actual - desired) / desired * 100.0


def mape(errors) -> float:
    """Mean of absolute percentage errors, in percent."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise InvalidInputError("error list is empty")
    return float(np.mean(np.abs(e)))


def evaluate_sample(gt_images, det_images) -> dict:
    """One evaluation row: AP family plus PSD percentage errors.

    `gt_images` / `det_images` are AnnotatedImage lists for the same
    image set; PSD quantities use the per-annotation max Feret diameter.
    """
    gts, dets = [], []
    det_id = 1
    for img in gt_images:
        for rec in img.particles:
            gts.append(Instance(image_id=img.image_id, instance_id=rec.particle_id,
                                mask=rec.mask))
    for img in det_images:
        for rec in img.particles:
            dets.append(Instance(image_id=img.image_id, instance_id=det_id,
                                 mask=rec.mask, score=rec.score))
            det_id += 1
    ap_report = match_and_ap(gts, dets)

    gt_feret = [rec.max_feret for img in gt_images for rec in img.particles]
    det_feret = [rec.max_feret for img in det_images for rec in img.particles]
    gt_stats = psd_stats(gt_feret)
    row = {
        "ap": ap_report.ap, "ap50": ap_report.ap50, "ap75": ap_report.ap75,
        "gt_d_g": gt_stats.d_g, "gt_sigma_g": gt_stats.sigma_g,
        "gt_n": gt_stats.n_particles,
    }
    if det_feret:
        det_stats = psd_stats(det_feret)
        row.update({
            "d_g": det_stats.d_g, "sigma_g": det_stats.sigma_g,
            "n": det_stats.n_particles,
            "err_d_g": percentage_error(det_stats.d_g, gt_stats.d_g),
            "err_sigma_g": percentage_error(det_stats.sigma_g, gt_stats.sigma_g),
            "err_n": percentage_error(det_stats.n_particles, gt_stats.n_particles),
        })
    else:
        row.update({"d_g": None, "sigma_g": None, "n": 0,
                    "err_d_g": None, "err_sigma_g": None, "err_n": -100.0})
    return row
