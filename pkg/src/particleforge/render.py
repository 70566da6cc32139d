"""Scene rendering and SEM-style image formation.

The renderer is analytic: spheres are ray-cast orthographically along +z
(no meshes, no perspective; SEM magnifications make perspective
negligible). Partially sintered necks are modeled by a polynomial
smooth-union of the sphere distance fields, controlled by the scene's
neck_blend k; k = 0 reduces to the exact union of spheres.

Image formation follows three stages:
  render_maps  scene -> per-pixel depth / instance / diffuse / shadow
  composite    maps + weights + background texture -> float image [0, 1]
  degrade      blur + shot/Gaussian noise + jitter -> quantized 8-bit
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidSpecError
from .scene import Scene

logger = logging.getLogger(__name__)

SHADOW_FACTOR = 0.6      # attenuation per occluding sphere
MAX_OCCLUDERS = 3
GRADIENT_STEP = 0.5      # px, central differences on the implicit field
BISECTION_STEPS = 8
MARCH_SAMPLES = 32
TILE = 64


@dataclass
class RenderMaps:
    """Per-pixel feature maps for one scene.

    depth is +inf and instance_id is -1 on background. full_area maps
    particle_id -> unoccluded projected disk pixel count (the
    visible-fraction denominator used by the ground-truth extractor).
    """
    depth: np.ndarray
    instance_id: np.ndarray
    diffuse: np.ndarray
    shadow: np.ndarray
    full_area: dict[int, int] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class CompositeSpec:
    """Weights, background texture, and degradation settings.

    Weighting rule: background pixels get w_background * texture;
    particle pixels get w_diffuse * diffuse * shadow ** w_shadow, so
    w_shadow = 0 disables shadowing and 1 applies it fully. All
    intermediate values are clamped to [0, 1] before quantization.
    """
    w_diffuse: float = 0.9
    w_shadow: float = 0.7
    w_background: float = 1.0
    background_base: float = 0.18
    background_amplitude: float = 0.06
    background_scale: float = 24.0
    blur_sigma: float = 0.8
    noise_gaussian: float = 0.02
    noise_poisson: float = 600.0
    brightness_jitter: tuple[float, float] = (0.0, 0.0)
    contrast_jitter: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        for name in ("w_diffuse", "w_shadow", "w_background"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidSpecError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 <= self.background_base <= 1.0:
            raise InvalidSpecError("background_base must be in [0, 1]")
        if self.blur_sigma < 0:
            raise InvalidSpecError("blur_sigma must be >= 0")
        if not 0.0 <= self.noise_gaussian <= 1.0:
            raise InvalidSpecError("noise_gaussian must be in [0, 1]")
        if self.noise_poisson < 0:
            raise InvalidSpecError("noise_poisson must be >= 0")


# ---------------------------------------------------------------------------
# value noise (background texture)
# ---------------------------------------------------------------------------

def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Hash integer lattice coordinates to floats in [0, 1)."""
    h = ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h ^= iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xC4CEB9FE1A85EC53)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(width: int, height: int, scale: float, seed: int) -> np.ndarray:
    """Value noise in [0, 1]: hashed integer-lattice values, bilinearly
    interpolated at cell size `scale` px. Pure function of (w, h, scale,
    seed), hence schedule-independent."""
    scale = max(float(scale), 1e-6)
    x = np.arange(width, dtype=np.float64) / scale
    y = np.arange(height, dtype=np.float64) / scale
    ix, fx = np.floor(x).astype(np.int64), x - np.floor(x)
    iy, fy = np.floor(y).astype(np.int64), y - np.floor(y)
    ix_m, iy_m = np.meshgrid(ix, iy)
    fx_m, fy_m = np.meshgrid(fx, fy)
    v00 = _hash01(ix_m, iy_m, seed)
    v10 = _hash01(ix_m + 1, iy_m, seed)
    v01 = _hash01(ix_m, iy_m + 1, seed)
    v11 = _hash01(ix_m + 1, iy_m + 1, seed)
    top = v00 + fx_m * (v10 - v00)
    bot = v01 + fx_m * (v11 - v01)
    return top + fy_m * (bot - top)


# ---------------------------------------------------------------------------
# implicit surface evaluation
# ---------------------------------------------------------------------------

def _smooth_min(a: np.ndarray, b: np.ndarray, k: float) -> np.ndarray:
    if k <= 0:
        return np.minimum(a, b)
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b + (a - b) * h - k * h * (1.0 - h)


def _field(px, py, pz, centers, radii, k):
    """Smooth-union distance field at points (px, py, pz), folded over
    the given spheres in index order (deterministic)."""
    F = None
    for c, r in zip(centers, radii):
        f = np.sqrt((px - c[0]) ** 2 + (py - c[1]) ** 2 + (pz - c[2]) ** 2) - r
        F = f if F is None else _smooth_min(F, f, k)
    return F


def _sphere_distances(px, py, pz, centers, radii):
    out = np.empty((len(radii),) + np.shape(px))
    for i, (c, r) in enumerate(zip(centers, radii)):
        out[i] = np.sqrt((px - c[0]) ** 2 + (py - c[1]) ** 2 + (pz - c[2]) ** 2) - r
    return out


def _disk_pixel_count(cx, cy, r, width, height) -> int:
    x0 = max(int(np.ceil(cx - r)), 0)
    x1 = min(int(np.floor(cx + r)), width - 1)
    y0 = max(int(np.ceil(cy - r)), 0)
    y1 = min(int(np.floor(cy + r)), height - 1)
    if x0 > x1 or y0 > y1:
        return 0
    xs = np.arange(x0, x1 + 1, dtype=np.float64) - cx
    ys = np.arange(y0, y1 + 1, dtype=np.float64) - cy
    return int(((xs[None, :] ** 2 + ys[:, None] ** 2) <= r * r).sum())


def render_maps(scene: Scene) -> RenderMaps:
    """Ray-cast the scene into depth / instance / diffuse / shadow maps.

    Orthographic projection along +z with pixel (ix, iy) centered at
    (ix, iy). For neck_blend k > 0 the nearest surface of the smooth
    union is bracketed by analytic intersections with slightly inflated
    spheres and refined by BISECTION_STEPS bisections; the winning
    instance is the sphere with the smallest distance at the hit point.
    """
    width, height = scene.image_size
    depth = np.full((height, width), np.inf, dtype=np.float64)
    inst = np.full((height, width), -1, dtype=np.int32)
    diffuse = np.zeros((height, width), dtype=np.float64)
    shadow = np.ones((height, width), dtype=np.float64)
    maps = RenderMaps(depth=depth, instance_id=inst, diffuse=diffuse, shadow=shadow)
    if not scene.spheres:
        return maps

    centers, radii, ids = scene.sphere_arrays()
    for i, pid in enumerate(ids):
        maps.full_area[int(pid)] = _disk_pixel_count(
            centers[i, 0], centers[i, 1], radii[i], width, height)

    light = np.asarray(scene.light_direction, dtype=np.float64)
    light /= np.linalg.norm(light)
    k = float(scene.neck_blend)
    if k <= 0:
        _render_exact(maps, centers, radii, ids, light)
    else:
        _render_smooth(maps, centers, radii, ids, light, k)
    _shadow_pass(maps, centers, radii, ids, light)
    return maps


def _render_exact(maps, centers, radii, ids, light):
    height, width = maps.depth.shape
    for i in range(len(radii)):
        cx, cy, cz = centers[i]
        r = radii[i]
        x0 = max(int(np.ceil(cx - r)), 0)
        x1 = min(int(np.floor(cx + r)), width - 1)
        y0 = max(int(np.ceil(cy - r)), 0)
        y1 = min(int(np.floor(cy + r)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - cx
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - cy
        rho2 = xs[None, :] ** 2 + ys[:, None] ** 2
        inside = rho2 <= r * r
        z = cz - np.sqrt(np.maximum(r * r - rho2, 0.0))
        win = inside & (z < maps.depth[y0:y1 + 1, x0:x1 + 1])
        maps.depth[y0:y1 + 1, x0:x1 + 1][win] = z[win]
        maps.instance_id[y0:y1 + 1, x0:x1 + 1][win] = ids[i]
    # analytic outward normal (p - c) / r of the winning sphere; for the
    # exact union this equals the implicit gradient
    for i in range(len(radii)):
        sel = maps.instance_id == ids[i]
        if not np.any(sel):
            continue
        yy, xx = np.nonzero(sel)
        cx, cy, cz = centers[i]
        r = radii[i]
        nx = (xx - cx) / r
        ny = (yy - cy) / r
        nz = (maps.depth[yy, xx] - cz) / r
        lam = nx * light[0] + ny * light[1] + nz * light[2]
        maps.diffuse[yy, xx] = np.maximum(lam, 0.0)


def _render_smooth(maps, centers, radii, ids, light, k):
    height, width = maps.depth.shape
    infl = radii + 0.6 * k + 1e-6      # F < 0 only inside these bounds
    reach = radii + k + 1.0            # spheres that can affect F near zero
    for ty0 in range(0, height, TILE):
        for tx0 in range(0, width, TILE):
            ty1 = min(ty0 + TILE, height)
            tx1 = min(tx0 + TILE, width)
            # rectangle-to-center distances decide the sphere subset
            dx = np.maximum(np.maximum(tx0 - centers[:, 0], centers[:, 0] - (tx1 - 1)), 0.0)
            dy = np.maximum(np.maximum(ty0 - centers[:, 1], centers[:, 1] - (ty1 - 1)), 0.0)
            subset = np.nonzero(np.hypot(dx, dy) <= reach)[0]
            if subset.size == 0:
                continue
            sub_c = centers[subset]
            sub_r = radii[subset]
            sub_infl = infl[subset]
            xs = np.arange(tx0, tx1, dtype=np.float64)
            ys = np.arange(ty0, ty1, dtype=np.float64)
            X, Y = np.meshgrid(xs, ys)
            X, Y = X.ravel(), Y.ravel()

            rho2 = (X[:, None] - sub_c[None, :, 0]) ** 2 + (Y[:, None] - sub_c[None, :, 1]) ** 2
            in_infl = rho2 <= sub_infl[None, :] ** 2
            cand = np.nonzero(in_infl.any(axis=1))[0]
            if cand.size == 0:
                continue
            Xc, Yc = X[cand], Y[cand]
            rho2 = rho2[cand]
            in_infl = in_infl[cand]

            half = np.sqrt(np.maximum(sub_infl[None, :] ** 2 - rho2, 0.0))
            z_enter = np.where(in_infl, sub_c[None, :, 2] - half, np.inf)
            z_exit = np.where(in_infl, sub_c[None, :, 2] + half, -np.inf)
            z_lo = z_enter.min(axis=1)
            z_hi = z_exit.max(axis=1)

            in_disk = rho2 <= sub_r[None, :] ** 2
            half_x = np.sqrt(np.maximum(sub_r[None, :] ** 2 - rho2, 0.0))
            z_exact = np.where(in_disk, sub_c[None, :, 2] - half_x, np.inf).min(axis=1)
            z_end = np.where(np.isfinite(z_exact), z_exact, z_hi)

            # march to the first sign change, then bisect
            lo = z_lo.copy()
            hi = np.full_like(z_lo, np.nan)
            prev = z_lo.copy()
            found = np.zeros(len(cand), dtype=bool)
            for step in range(MARCH_SAMPLES):
                t = step / (MARCH_SAMPLES - 1)
                z_t = z_lo + t * (z_end - z_lo)
                F = _field(Xc, Yc, z_t, sub_c, sub_r, k)
                neg = (F <= 0.0) & ~found
                lo[neg] = prev[neg]
                hi[neg] = z_t[neg]
                found |= neg
                prev = np.where(found, prev, z_t)
            if not np.any(found):
                continue
            idx = np.nonzero(found)[0]
            blo, bhi = lo[idx], hi[idx]
            Xh, Yh = Xc[idx], Yc[idx]
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (blo + bhi)
                neg = _field(Xh, Yh, mid, sub_c, sub_r, k) <= 0.0
                bhi = np.where(neg, mid, bhi)
                blo = np.where(neg, blo, mid)
            z_hit = 0.5 * (blo + bhi)

            dists = _sphere_distances(Xh, Yh, z_hit, sub_c, sub_r)
            winner = subset[np.argmin(dists, axis=0)]

            # central-difference gradient of the implicit field
            h = GRADIENT_STEP
            gx = _field(Xh + h, Yh, z_hit, sub_c, sub_r, k) - _field(Xh - h, Yh, z_hit, sub_c, sub_r, k)
            gy = _field(Xh, Yh + h, z_hit, sub_c, sub_r, k) - _field(Xh, Yh - h, z_hit, sub_c, sub_r, k)
            gz = _field(Xh, Yh, z_hit + h, sub_c, sub_r, k) - _field(Xh, Yh, z_hit - h, sub_c, sub_r, k)
            norm = np.sqrt(gx * gx + gy * gy + gz * gz)
            norm[norm < 1e-12] = 1.0
            lam = (gx * light[0] + gy * light[1] + gz * light[2]) / norm

            rows = Yh.astype(np.intp)
            cols = Xh.astype(np.intp)
            maps.depth[rows, cols] = z_hit
            maps.instance_id[rows, cols] = ids[winner]
            maps.diffuse[rows, cols] = np.maximum(lam, 0.0)


def _shadow_pass(maps, centers, radii, ids, light):
    yy, xx = np.nonzero(maps.instance_id >= 0)
    if len(yy) == 0:
        return
    px = xx.astype(np.float64)
    py = yy.astype(np.float64)
    pz = maps.depth[yy, xx]
    winner = maps.instance_id[yy, xx]
    count = np.zeros(len(yy), dtype=np.int32)
    for i in range(len(radii)):
        dx = px - centers[i, 0]
        dy = py - centers[i, 1]
        dz = pz - centers[i, 2]
        b = dx * light[0] + dy * light[1] + dz * light[2]
        c = dx * dx + dy * dy + dz * dz - radii[i] ** 2
        disc = b * b - c
        hits = disc > 0.0
        t_far = -b + np.sqrt(np.where(hits, disc, 0.0))
        occ = hits & (t_far > 1e-6) & (winner != ids[i])
        count += occ
    count = np.minimum(count, MAX_OCCLUDERS)
    maps.shadow[yy, xx] = SHADOW_FACTOR ** count


# ---------------------------------------------------------------------------
# compositing and degradation
# ---------------------------------------------------------------------------

def composite(maps: RenderMaps, spec: CompositeSpec, rng: np.random.Generator) -> np.ndarray:
    """Weighted combination of the feature maps into a float image [0, 1].

    The background texture is a value-noise field whose lattice seed is
    drawn once from `rng`, so the result is deterministic given the
    stream state and independent of any pixel-evaluation schedule.
    """
    tex_seed = int(rng.integers(0, 2 ** 62))
    bg = maps.instance_id < 0
    base = spec.background_base
    if spec.background_amplitude > 0:
        tex = value_noise(maps.width, maps.height, spec.background_scale, tex_seed)
        field_bg = np.clip(base + spec.background_amplitude * (2.0 * tex - 1.0), 0.0, 1.0)
    else:
        field_bg = np.full((maps.height, maps.width), base)
    fg = spec.w_diffuse * maps.diffuse * np.power(maps.shadow, spec.w_shadow)
    img = np.where(bg, spec.w_background * field_bg, fg)
    return np.clip(img, 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Separable blur kernel with radius ceil(3 sigma), normalized to 1."""
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Edge-clamped separable Gaussian blur."""
    if sigma <= 0:
        return np.asarray(image, dtype=np.float64).copy()
    kern = gaussian_kernel(sigma)
    out = ndimage.convolve1d(np.asarray(image, dtype=np.float64), kern, axis=0, mode="nearest")
    return ndimage.convolve1d(out, kern, axis=1, mode="nearest")


def degrade(image: np.ndarray, spec: CompositeSpec, rng: np.random.Generator) -> np.ndarray:
    """Blur, add shot + Gaussian noise and brightness/contrast jitter,
    then quantize (round half up) to 8 bit."""
    x = np.asarray(image, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 1):
        raise InvalidSpecError("degrade expects image values in [0, 1]")
    x = gaussian_blur(x, spec.blur_sigma)
    if spec.noise_poisson > 0:
        x = x + rng.standard_normal(x.shape) * np.sqrt(np.clip(x, 0.0, None) / spec.noise_poisson)
    if spec.noise_gaussian > 0:
        x = x + rng.normal(0.0, spec.noise_gaussian, x.shape)
    b = rng.uniform(*spec.brightness_jitter)
    c = rng.uniform(*spec.contrast_jitter)
    x = (x - 0.5) * c + 0.5 + b
    np.clip(x, 0.0, 1.0, out=x)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def render_image(scene: Scene, spec: CompositeSpec, rng: np.random.Generator):
    """Full pipeline: maps -> composite -> degraded 8-bit image.

    Returns (image_u8, maps)."""
    maps = render_maps(scene)
    img = composite(maps, spec, rng)
    return degrade(img, spec, rng), maps
