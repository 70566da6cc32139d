"""2D convex hull geometry on pixel centers.

Shared by the ground-truth extractor (mask convexification) and the
metrics module (solidity, max Feret diameter). All functions operate on
(x, y) point arrays; pixel (ix, iy) is represented by its center (ix, iy).
"""

import numpy as np


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull of a 2D point set via the monotone chain scan.

    Returns hull vertices in counter-clockwise order (in a y-up frame),
    without repeating the first vertex. Degenerate inputs are handled:
    a single point yields one vertex, collinear points yield the two
    extreme ones.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    uniq = np.unique(pts, axis=0)
    if len(uniq) == 1:
        return uniq
    order = np.lexsort((uniq[:, 1], uniq[:, 0]))
    uniq = uniq[order]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) > 1 and _cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(uniq)
    upper = half(uniq[::-1])
    hull = lower[:-1] + upper[:-1]
    if not hull:  # all points collinear: keep the two extremes
        hull = [uniq[0], uniq[-1]]
    return np.asarray(hull, dtype=np.float64)


def hull_diameter(hull: np.ndarray) -> float:
    """Largest pairwise Euclidean distance between hull vertices.

    Rotating calipers: walk the upper and lower chains in parallel,
    comparing edge slopes, and take the max over the antipodal pairs
    visited. Falls back trivially for hulls of one or two vertices.
    """
    h = np.asarray(hull, dtype=np.float64)
    n = len(h)
    if n == 1:
        return 0.0
    if n == 2:
        return float(np.hypot(*(h[0] - h[1])))

    order = np.lexsort((h[:, 1], h[:, 0]))
    pts = h[order]
    # split the (already convex) vertex set into the two monotone chains
    lower, upper = [], []
    for p in pts:
        while len(lower) > 1 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
        while len(upper) > 1 and _cross(upper[-2], upper[-1], p) >= 0:
            upper.pop()
        upper.append(p)

    best = 0.0
    i, j = 0, len(lower) - 1
    while i < len(upper) - 1 or j > 0:
        d = float(np.hypot(*(upper[i] - lower[j])))
        if d > best:
            best = d
        if i == len(upper) - 1:
            j -= 1
        elif j == 0:
            i += 1
        # compare slopes of the next edges on each chain
        elif ((upper[i + 1][1] - upper[i][1]) * (lower[j][0] - lower[j - 1][0])
              > (lower[j][1] - lower[j - 1][1]) * (upper[i + 1][0] - upper[i][0])):
            i += 1
        else:
            j -= 1
    d = float(np.hypot(*(upper[-1] - lower[0])))
    return max(best, d)


def rasterize_convex_polygon(vertices: np.ndarray, width: int, height: int) -> np.ndarray:
    """Fill the pixels whose centers lie inside or on a convex polygon.

    `vertices` are (x, y) in pixel-center coordinates (any winding).
    Returns a bool array of shape (height, width). Boundary pixels are
    included (tolerance 1e-9), so a hull of pixel centers always covers
    all its generating pixels.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    out = np.zeros((height, width), dtype=bool)
    if len(verts) == 0:
        return out
    if len(verts) == 1:
        x, y = np.rint(verts[0]).astype(int)
        if 0 <= x < width and 0 <= y < height:
            out[y, x] = True
        return out

    eps = 1e-9
    y_lo = max(int(np.ceil(verts[:, 1].min() - eps)), 0)
    y_hi = min(int(np.floor(verts[:, 1].max() + eps)), height - 1)
    n = len(verts)
    for y in range(y_lo, y_hi + 1):
        xs = []
        for i in range(n):
            x1, y1 = verts[i]
            x2, y2 = verts[(i + 1) % n]
            if abs(y1 - y) <= eps:
                xs.append(x1)
            if abs(y2 - y1) > eps:
                t = (y - y1) / (y2 - y1)
                if -eps <= t <= 1 + eps:
                    xs.append(x1 + t * (x2 - x1))
        if not xs:
            continue
        x_lo = max(int(np.ceil(min(xs) - 1e-7)), 0)
        x_hi = min(int(np.floor(max(xs) + 1e-7)), width - 1)
        if x_lo <= x_hi:
            out[y, x_lo:x_hi + 1] = True
    return out


def max_feret_raster(raster: np.ndarray) -> float:
    """Max Feret diameter of a foreground raster in px.

    Largest pairwise distance between foreground pixel centers (via the
    hull and rotating calipers) plus 1 px for the pixel extent, so a
    single pixel measures 1 px. Returns 0.0 for an empty raster.
    """
    ys, xs = np.nonzero(np.asarray(raster, dtype=bool))
    if len(xs) == 0:
        return 0.0
    hull = convex_hull(np.column_stack([xs, ys]))
    return hull_diameter(hull) + 1.0


def convexify_raster(raster: np.ndarray) -> np.ndarray:
    """Replace a foreground raster by the filled convex hull of its pixels."""
    raster = np.asarray(raster, dtype=bool)
    ys, xs = np.nonzero(raster)
    if len(xs) == 0:
        return raster.copy()
    hull = convex_hull(np.column_stack([xs, ys]))
    filled = rasterize_convex_polygon(hull, raster.shape[1], raster.shape[0])
    # hull of pixel centers must contain every generating pixel
    return filled | raster
