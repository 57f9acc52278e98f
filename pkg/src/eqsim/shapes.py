"""Procedural 2D shape families with uniform interior point sampling.

Shapes come out centered on their bounding box with half-extent 0.5, so all
points lie in [-0.5, 0.5]^2. An import hook accepts external point sets
stored as flat little-endian float32 files (the trajectory array format).
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError, ValidationError

FAMILIES = ("square", "disk", "convex", "star", "rounded_rect", "external")


def _normalize(points: np.ndarray) -> np.ndarray:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = 0.5 * (lo + hi)
    half = float(np.max(hi - lo)) * 0.5
    if half <= 0:
        raise ValidationError("degenerate shape: zero extent")
    return (points - center) * (0.5 / half)


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon, vectorized over pts."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(pts.shape[0], dtype=bool)
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = np.where(
                y1 != y0, (x1 - x0) * (y - y0) / (y1 - y0) + x0, np.inf
            )
        inside ^= crosses & (x < x_at)
        x0, y0 = x1, y1
    return inside


def _fill(rng, n_points, bbox_lo, bbox_hi, contains) -> np.ndarray:
    """Rejection-sample ``n_points`` uniform points with ``contains`` true."""
    out = []
    have = 0
    span = np.asarray(bbox_hi) - np.asarray(bbox_lo)
    for _ in range(10_000):
        cand = rng.random((max(4 * n_points, 256), 2)) * span + bbox_lo
        keep = cand[contains(cand)]
        if keep.size:
            out.append(keep)
            have += keep.shape[0]
        if have >= n_points:
            break
    else:
        raise ValidationError("interior sampling failed: acceptance rate ~ 0")
    return np.concatenate(out)[:n_points]


def _convex_polygon(rng, n_vertices: int) -> np.ndarray:
    # Convex hull (monotone chain) of a radial scatter; retried until the
    # hull has at least n_vertices corners.
    for _ in range(64):
        raw = rng.random((max(3 * n_vertices, 12), 2)) - 0.5
        hull = _convex_hull(raw)
        if hull.shape[0] >= n_vertices:
            return hull
    return hull  # accept a flatter hull rather than loop forever


def _convex_hull(points: np.ndarray) -> np.ndarray:
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]

    def half(iterable):
        out = []
        for p in iterable:
            while len(out) >= 2 and np.cross(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _star_polygon(rng, n_spikes: int) -> np.ndarray:
    angles = np.sort(rng.uniform(0, 2 * np.pi, 2 * n_spikes))
    radii = np.where(
        np.arange(2 * n_spikes) % 2 == 0, 1.0, rng.uniform(0.4, 0.65)
    )
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


def load_external_points(path) -> np.ndarray:
    """Read a flat little-endian float32 file as a (K, 2) point set."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size < 6 or raw.size % 2:
        raise FormatError(f"{path}: expected an even number of float32 values (K x 2, K >= 3)")
    pts = raw.astype(np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{path}: non-finite values in point set")
    return pts


def sample_shape(seed: int, shape_family: str, n_points: int = 500,
                 n_vertices: int | None = None, external_path=None) -> np.ndarray:
    """Sample ``n_points`` uniformly filling the interior of a shape.

    Returns a (n_points, 2) float64 array, centered with half-extent 0.5.
    Deterministic per (seed, family, counts). Polygon families require at
    least 3 vertices.
    """
    if shape_family not in FAMILIES:
        raise ValidationError(
            f"unknown shape family {shape_family!r}; known: {FAMILIES}"
        )
    if n_points < 1:
        raise ValidationError("n_points must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x5A]))

    if shape_family == "external":
        if external_path is None:
            raise ValidationError("family 'external' requires external_path")
        pts = load_external_points(external_path)
        idx = rng.choice(pts.shape[0], size=n_points, replace=pts.shape[0] < n_points)
        return _normalize(pts[np.sort(idx)])

    if shape_family == "square":
        pts = rng.random((n_points, 2)) - 0.5
        return _normalize(pts)

    if shape_family == "disk":
        r = 0.5 * np.sqrt(rng.random(n_points))
        a = rng.uniform(0, 2 * np.pi, n_points)
        return _normalize(np.stack([r * np.cos(a), r * np.sin(a)], axis=1))

    if shape_family == "rounded_rect":
        w = 1.0
        h = rng.uniform(0.45, 1.0)
        cr = rng.uniform(0.08, 0.35) * min(w, h)

        def contains(p):
            ax = np.abs(p[:, 0]) - (w / 2 - cr)
            ay = np.abs(p[:, 1]) - (h / 2 - cr)
            ax = np.maximum(ax, 0.0)
            ay = np.maximum(ay, 0.0)
            return (ax**2 + ay**2 <= cr**2) & (np.abs(p[:, 0]) <= w / 2) & (
                np.abs(p[:, 1]) <= h / 2
            )

        pts = _fill(rng, n_points, (-w / 2, -h / 2), (w / 2, h / 2), contains)
        return _normalize(pts)

    # polygon families
    nv = n_vertices if n_vertices is not None else int(rng.integers(5, 9))
    if nv < 3:
        raise ValidationError("polygon families need n_vertices >= 3")
    poly = _convex_polygon(rng, nv) if shape_family == "convex" else _star_polygon(rng, nv)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    pts = _fill(rng, n_points, lo, hi, lambda p: _points_in_polygon(p, poly))
    return _normalize(pts)
