"""3D scene synthesis: lognormal particle sizes, agglomerate assembly,
and collision-free placement in the image frame.

Agglomerates are grown by sequential attachment of spheres; the goal is
a plausible visual morphology, not a physical aggregation simulation.
A sintering degree s in [0, 0.95] shortens every parent-child center
distance to (r_i + r_j) * (1 - s), so s = 0 gives point contact and
s -> 1 approaches full merge.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError

logger = logging.getLogger(__name__)

MODES = ("chain-biased", "compact", "uniform-random")

MAX_SAMPLE_TRIES = 1000      # per-diameter rejection budget
MAX_PLACEMENT_TRIES = 200    # per-parent attachment budget
MAX_SCENE_TRIES = 500        # per-agglomerate frame placement budget

DEFAULT_LIGHT = (-0.35, -0.45, -0.82)


@dataclass(frozen=True)
class PsdSpec:
    """Lognormal particle size distribution in projected pixels.

    d_g is the geometric mean (= median) diameter and sigma_g the
    geometric standard deviation; optional hard truncation bounds are
    enforced by rejection sampling.
    """
    d_g: float
    sigma_g: float
    d_min: float | None = None
    d_max: float | None = None

    def __post_init__(self):
        if not self.d_g > 0:
            raise InvalidSpecError(f"d_g must be positive, got {self.d_g}")
        if not self.sigma_g >= 1.0:
            raise InvalidSpecError(f"sigma_g must be >= 1, got {self.sigma_g}")
        if (self.d_min is None) != (self.d_max is None):
            raise InvalidSpecError("d_min and d_max must be set together")
        if self.d_min is not None:
            if not (0 < self.d_min < self.d_max):
                raise InvalidSpecError(
                    f"need 0 < d_min < d_max, got ({self.d_min}, {self.d_max})")


@dataclass(frozen=True)
class AgglomerateSpec:
    """Recipe for one agglomerate: particle count range, PSD, sintering
    degree s and the attachment mode that shapes the morphology."""
    particle_count_range: tuple[int, int]
    psd: PsdSpec
    sintering_degree: float = 0.0
    mode: str = "uniform-random"

    def __post_init__(self):
        lo, hi = self.particle_count_range
        if not (1 <= lo <= hi):
            raise InvalidSpecError(
                f"particle_count_range must satisfy 1 <= lo <= hi, got {lo, hi}")
        if not (0.0 <= self.sintering_degree <= 0.95):
            raise InvalidSpecError(
                f"sintering_degree must be in [0, 0.95], got {self.sintering_degree}")
        if self.mode not in MODES:
            raise InvalidSpecError(f"unknown mode {self.mode!r}, expected one of {MODES}")


@dataclass
class Sphere:
    """One primary particle: center (x, y, z) in px and radius in px."""
    center: np.ndarray
    radius: float
    particle_id: int


@dataclass
class Scene:
    """A fully placed arrangement of spheres ready for rendering.

    x grows with image column, y with image row, z into the screen
    (the camera looks along +z); light_direction points from the scene
    toward the light source.
    """
    spheres: list[Sphere]
    agglomerate_of: dict[int, int]
    image_size: tuple[int, int]
    light_direction: tuple[float, float, float] = DEFAULT_LIGHT
    neck_blend: float = 0.0
    seed: int = 0
    placement_failures: int = 0

    def sphere_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(centers (n,3), radii (n,), particle ids (n,)) as arrays."""
        n = len(self.spheres)
        centers = np.zeros((n, 3))
        radii = np.zeros(n)
        ids = np.zeros(n, dtype=np.int32)
        for i, s in enumerate(self.spheres):
            centers[i] = s.center
            radii[i] = s.radius
            ids[i] = s.particle_id
        return centers, radii, ids


def sample_diameters(spec: PsdSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `count` diameters from the lognormal law of `spec`.

    Median d_g, log-space sigma ln(sigma_g). Values outside the optional
    truncation bounds are re-drawn; a sample exceeding the rejection
    budget means the truncation window has negligible mass.
    """
    if count < 0:
        raise InvalidSpecError(f"count must be >= 0, got {count}")
    mu = np.log(spec.d_g)
    sigma = np.log(spec.sigma_g)
    d = rng.lognormal(mean=mu, sigma=sigma, size=count)
    if spec.d_min is None:
        return d
    tries = np.zeros(count, dtype=np.int64)
    bad = (d < spec.d_min) | (d > spec.d_max)
    while np.any(bad):
        tries[bad] += 1
        if np.any(tries > MAX_SAMPLE_TRIES):
            raise InvalidSpecError(
                f"rejection sampling exceeded {MAX_SAMPLE_TRIES} tries; "
                f"truncation [{spec.d_min}, {spec.d_max}] is degenerate for "
                f"d_g={spec.d_g}, sigma_g={spec.sigma_g}")
        d[bad] = rng.lognormal(mean=mu, sigma=sigma, size=int(bad.sum()))
        bad = (d < spec.d_min) | (d > spec.d_max)
    return d


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
    return v / n


def _parent_weights(mode: str, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    n = len(radii)
    if mode == "uniform-random":
        return np.full(n, 1.0 / n)
    if mode == "chain-biased":
        # most recently attached sphere gets weight 1, halving with age
        w = 0.5 ** np.arange(n - 1, -1, -1, dtype=np.float64)
    else:  # compact
        centroid = centers.mean(axis=0)
        dist = np.linalg.norm(centers - centroid, axis=1)
        w = np.exp(-dist / max(radii.mean(), 1e-9))
    return w / w.sum()


def build_agglomerate(spec: AgglomerateSpec, rng: np.random.Generator,
                      return_attachments: bool = False):
    """Grow one agglomerate by sequential attachment.

    Each new sphere attaches to a parent chosen per `spec.mode` at a
    uniformly random direction and center distance (r_i + r_j)(1 - s).
    Candidates overlapping a non-parent sphere deeper than the sintering
    overlap are re-drawn; after MAX_PLACEMENT_TRIES the next parent is
    tried. Returns spheres centered at their centroid; with
    `return_attachments` also the (child_id, parent_id) log.
    """
    lo, hi = spec.particle_count_range
    count = int(rng.integers(lo, hi + 1))
    diameters = sample_diameters(spec.psd, count, rng)
    radii = diameters / 2.0
    s = spec.sintering_degree

    centers = np.zeros((count, 3))
    attachments: list[tuple[int, int]] = []
    for i in range(1, count):
        placed_centers = centers[:i]
        placed_radii = radii[:i]
        weights = _parent_weights(spec.mode, placed_centers, placed_radii)
        order = list(rng.choice(i, size=i, replace=False, p=weights))
        placed = False
        best_candidate = None
        best_clearance = -np.inf
        for parent in order:
            gap = (radii[i] + placed_radii[parent]) * (1.0 - s)
            for _ in range(MAX_PLACEMENT_TRIES):
                cand = placed_centers[parent] + _unit_vector(rng) * gap
                others = np.arange(i) != parent
                if not np.any(others):
                    clearance = np.inf
                else:
                    dist = np.linalg.norm(placed_centers[others] - cand, axis=1)
                    limit = (radii[i] + placed_radii[others]) * (1.0 - s)
                    clearance = float(np.min(dist - limit))
                if clearance >= -1e-9:
                    centers[i] = cand
                    attachments.append((i, int(parent)))
                    placed = True
                    break
                if clearance > best_clearance:
                    best_clearance = clearance
                    best_candidate = (cand, int(parent))
            if placed:
                break
        if not placed:
            # every parent exhausted its budget (dense, high-s packings);
            # accept the least-overlapping candidate to keep generation total
            cand, parent = best_candidate
            centers[i] = cand
            attachments.append((i, parent))
            logger.debug("relaxed overlap constraint for particle %d", i)

    centers -= centers.mean(axis=0)
    spheres = [Sphere(center=centers[i].copy(), radius=float(radii[i]), particle_id=i)
               for i in range(count)]
    if return_attachments:
        return spheres, attachments
    return spheres


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix from a normalized random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _bounding_radius(spheres: list[Sphere]) -> float:
    if not spheres:
        return 0.0
    return max(float(np.linalg.norm(s.center[:2]) + s.radius) for s in spheres)


def compose_scene(specs, image_size: tuple[int, int], seed: int = 0, *,
                  rng: np.random.Generator | None = None,
                  coverage: float = 0.5, margin: float = 5.0,
                  neck_blend: float = 0.0,
                  light_direction: tuple[float, float, float] = DEFAULT_LIGHT) -> Scene:
    """Build agglomerates and place them without projected overlap.

    `specs` is a sequence of AgglomerateSpec or (AgglomerateSpec, count)
    pairs. Each agglomerate receives a uniform random 3D rotation and a
    frame position such that projected bounding circles stay disjoint
    and at least `margin` px inside the frame. Placement failures after
    MAX_SCENE_TRIES drop the agglomerate and increment
    Scene.placement_failures. Deterministic given `seed`.
    """
    if not (0 < coverage <= 0.5):
        raise InvalidSpecError(f"coverage must be in (0, 0.5], got {coverage}")
    width, height = image_size
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(seed))

    pairs = []
    for item in specs:
        if isinstance(item, AgglomerateSpec):
            pairs.append((item, 1))
        else:
            spec, n = item
            pairs.append((spec, int(n)))

    agglomerates = []
    for spec, n in pairs:
        for _ in range(n):
            agglomerates.append(build_agglomerate(spec, rng))

    disk_area = sum(np.pi * s.radius ** 2 for a in agglomerates for s in a)
    if disk_area > coverage * width * height:
        raise InvalidSpecError(
            f"requested particles cover {disk_area:.0f} px^2, beyond the "
            f"coverage budget {coverage:.2f} * {width * height} px^2")

    return _place_agglomerates(agglomerates, image_size, rng, seed=seed,
                               margin=margin, neck_blend=neck_blend,
                               light_direction=light_direction)


def _place_agglomerates(agglomerates, image_size, rng, *, seed,
                        margin=5.0, neck_blend=0.0,
                        light_direction=DEFAULT_LIGHT) -> Scene:
    width, height = image_size
    placed: list[tuple[float, float, float]] = []  # (cx, cy, bound_radius)
    spheres: list[Sphere] = []
    agglomerate_of: dict[int, int] = {}
    failures = 0
    next_id = 0
    agg_id = 0
    for spheres_local in agglomerates:
        rot = _random_rotation(rng)
        centers = np.array([s.center for s in spheres_local]) @ rot.T
        radii = np.array([s.radius for s in spheres_local])
        bound = float(np.max(np.linalg.norm(centers[:, :2], axis=1) + radii))

        lo_x, hi_x = margin + bound, width - margin - bound
        lo_y, hi_y = margin + bound, height - margin - bound
        if lo_x > hi_x or lo_y > hi_y:
            raise InvalidSpecError(
                f"agglomerate bounding radius {bound:.1f} px cannot fit a "
                f"{width}x{height} frame with margin {margin}")
        ok = False
        for _ in range(MAX_SCENE_TRIES):
            cx = rng.uniform(lo_x, hi_x)
            cy = rng.uniform(lo_y, hi_y)
            if all(np.hypot(cx - px, cy - py) >= bound + pb for px, py, pb in placed):
                ok = True
                break
        if not ok:
            failures += 1
            logger.warning("dropped agglomerate after %d placement tries", MAX_SCENE_TRIES)
            continue
        placed.append((cx, cy, bound))
        offset = np.array([cx, cy, 0.0])
        for c, r in zip(centers, radii):
            spheres.append(Sphere(center=c + offset, radius=float(r), particle_id=next_id))
            agglomerate_of[next_id] = agg_id
            next_id += 1
        agg_id += 1

    light = np.asarray(light_direction, dtype=np.float64)
    light = tuple(light / np.linalg.norm(light))
    return Scene(spheres=spheres, agglomerate_of=agglomerate_of,
                 image_size=(width, height), light_direction=light,
                 neck_blend=float(neck_blend), seed=int(seed),
                 placement_failures=failures)


def scene_from_config(cfg: dict, seed: int,
                      rng: np.random.Generator | None = None) -> Scene:
    """Assemble a Scene from a parsed scene-config dict.

    Agglomerate recipes are drawn uniformly at random and added until the
    summed projected disk area reaches the coverage budget, then placed.
    """
    from .config import agglomerate_specs_from_config  # cycle-free at runtime

    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
    width, height = cfg["image_size"]
    coverage = float(cfg.get("coverage", 0.3))
    if not (0 < coverage <= 0.5):
        raise InvalidSpecError(f"coverage must be in (0, 0.5], got {coverage}")
    specs = agglomerate_specs_from_config(cfg)

    budget = coverage * width * height
    agglomerates = []
    used = 0.0
    for _ in range(256):
        spec = specs[int(rng.integers(len(specs)))]
        agg = build_agglomerate(spec, rng)
        area = sum(np.pi * s.radius ** 2 for s in agg)
        if used + area > budget:
            break
        agglomerates.append(agg)
        used += area

    return _place_agglomerates(
        agglomerates, (width, height), rng, seed=seed,
        margin=float(cfg.get("margin", 5.0)),
        neck_blend=float(cfg.get("neck_blend", 0.0)),
        light_direction=tuple(cfg.get("light_direction", DEFAULT_LIGHT)))
