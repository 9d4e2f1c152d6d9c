"""Multiview geometric primitives.

Rays and ray-pair closest points, minimal enclosing circles/spheres
(Welzl-style progressive insertion with deterministic order), and the
cone-of-rays construction used to lift 2D pixel regions into 3D.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Camera
from .errors import InvalidInputError, InvalidParameterError

PARALLEL_EPS = 1e-9
# Multiplicative slack for the incremental containment tests; keeps the
# support-point recursion stable against round-off.
_IN_EPS = 1 + 1e-14

DEFAULT_RAY_CAP = 256


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if o.shape != (3,) or d.shape != (3,):
            raise InvalidParameterError("ray origin/direction must be 3-vectors")
        n = np.linalg.norm(d)
        if n == 0 or not np.isfinite(n):
            raise InvalidParameterError("ray direction must be nonzero and finite")
        object.__setattr__(self, "origin", o.copy())
        object.__setattr__(self, "direction", d / n)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        if c.shape != (3,):
            raise InvalidParameterError("sphere center must be a 3-vector")
        if self.radius < 0 or not np.isfinite(self.radius):
            raise InvalidParameterError(f"sphere radius must be >= 0, got {self.radius}")
        object.__setattr__(self, "center", c.copy())
        object.__setattr__(self, "radius", float(self.radius))

    def contains(self, p, slack: float = 0.0) -> bool:
        return float(np.linalg.norm(np.asarray(p, dtype=np.float64) - self.center)) <= self.radius + slack


@dataclass(frozen=True)
class Cone:
    """Bundle of camera rays through a pixel disk: apex at the camera center,
    axis through the disk center, radius measured in pixels on the image."""

    apex: np.ndarray
    axis: np.ndarray
    radius_px: float
    camera: Camera

    def __post_init__(self):
        if self.radius_px < 0:
            raise InvalidParameterError(f"cone radius must be >= 0, got {self.radius_px}")
        a = np.asarray(self.axis, dtype=np.float64)
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=np.float64).copy())
        object.__setattr__(self, "axis", a / np.linalg.norm(a))
        object.__setattr__(self, "radius_px", float(self.radius_px))

    @classmethod
    def through_pixels(cls, camera: Camera, center_px, radius_px: float) -> "Cone":
        origin, direction = camera.pixel_ray(center_px)
        return cls(apex=origin, axis=direction, radius_px=radius_px, camera=camera)


@dataclass(frozen=True)
class RayPairResult:
    p1: np.ndarray
    p2: np.ndarray
    t1: float
    t2: float
    distance: float
    parallel: bool
    behind: bool

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p1 + self.p2)


def ray_closest_points(r1: Ray, r2: Ray) -> RayPairResult:
    """Closest point pair between two rays.

    `parallel` is set when |d1 x d2| < 1e-9; `behind` when the minimizing
    parameters would be negative (only non-negative ray parameters are
    admitted)."""
    d1, d2 = r1.direction, r2.direction
    w0 = r1.origin - r2.origin
    cross = np.cross(d1, d2)
    if np.linalg.norm(cross) < PARALLEL_EPS:
        t1 = 0.0
        t2 = float(np.dot(d2, w0))
        p1, p2 = r1.at(t1), r2.at(max(t2, 0.0))
        return RayPairResult(p1, p2, t1, max(t2, 0.0), float(np.linalg.norm(p1 - p2)), True, t2 < 0)
    b = float(np.dot(d1, d2))
    d = float(np.dot(d1, w0))
    e = float(np.dot(d2, w0))
    denom = 1.0 - b * b
    t1 = (b * e - d) / denom
    t2 = (e - b * d) / denom
    p1, p2 = r1.at(t1), r2.at(t2)
    dist = float(np.linalg.norm(p1 - p2))
    return RayPairResult(p1, p2, t1, t2, dist, False, t1 < 0 or t2 < 0)


def pairwise_ray_midpoints(
    origin_a: np.ndarray,
    dirs_a: np.ndarray,
    origin_b: np.ndarray,
    dirs_b: np.ndarray,
    max_distance: float,
) -> np.ndarray:
    """Accepted closest-point midpoints across two ray bundles sharing apexes.

    A pair contributes when the rays are non-parallel, both parameters are
    strictly positive, and the closest-point distance is below
    `max_distance`. Returns an (M, 3) array in pair-enumeration order
    (bundle A major), matching the scalar `ray_closest_points` results.
    """
    da = np.asarray(dirs_a, dtype=np.float64)
    db = np.asarray(dirs_b, dtype=np.float64)
    w0 = np.asarray(origin_a, dtype=np.float64) - np.asarray(origin_b, dtype=np.float64)
    b = da @ db.T
    d = (da @ w0)[:, None]
    e = (db @ w0)[None, :]
    denom = 1.0 - b * b
    ok = denom >= PARALLEL_EPS**2
    safe = np.where(ok, denom, 1.0)
    t1 = (b * e - d) / safe
    t2 = (e - b * d) / safe
    ok &= (t1 > 0) & (t2 > 0)
    p1 = origin_a + t1[..., None] * da[:, None, :]
    p2 = origin_b + t2[..., None] * db[None, :, :]
    dist2 = np.sum((p1 - p2) ** 2, axis=-1)
    ok &= dist2 < max_distance * max_distance
    return 0.5 * (p1[ok] + p2[ok])


# ---------------------------------------------------------------------------
# Minimal enclosing circle (2D), Welzl-style progressive insertion.
# Deterministic: points are processed in the order given, no shuffle.
# ---------------------------------------------------------------------------


def _circle_contains(c: tuple[float, float, float], p) -> bool:
    dx, dy = p[0] - c[0], p[1] - c[1]
    return np.hypot(dx, dy) <= c[2] * _IN_EPS + 1e-300


def _circle_diameter(a, b) -> tuple[float, float, float]:
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    r = max(np.hypot(cx - a[0], cy - a[1]), np.hypot(cx - b[0], cy - b[1]))
    return (cx, cy, r)


def _circumcircle(a, b, c) -> Optional[tuple[float, float, float]]:
    # Translate towards the triangle midpoint for conditioning.
    ox = (min(a[0], b[0], c[0]) + max(a[0], b[0], c[0])) / 2.0
    oy = (min(a[1], b[1], c[1]) + max(a[1], b[1], c[1])) / 2.0
    ax, ay = a[0] - ox, a[1] - oy
    bx, by = b[0] - ox, b[1] - oy
    cx, cy = c[0] - ox, c[1] - oy
    d = (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by)) * 2.0
    if d == 0.0:
        return None
    x = ox + ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) + (cx * cx + cy * cy) * (ay - by)) / d
    y = oy + ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) + (cx * cx + cy * cy) * (bx - ax)) / d
    r = max(np.hypot(x - p[0], y - p[1]) for p in (a, b, c))
    return (x, y, r)


def _mec_two_fixed(points, p, q) -> tuple[float, float, float]:
    circ = _circle_diameter(p, q)
    left = None
    right = None
    px, py = p
    qx, qy = q
    for r in points:
        if _circle_contains(circ, r):
            continue
        cross = (qx - px) * (r[1] - py) - (qy - py) * (r[0] - px)
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        cc = (qx - px) * (c[1] - py) - (qy - py) * (c[0] - px)
        if cross > 0 and (left is None or cc > (qx - px) * (left[1] - py) - (qy - py) * (left[0] - px)):
            left = c
        elif cross < 0 and (right is None or cc < (qx - px) * (right[1] - py) - (qy - py) * (right[0] - px)):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right
    if right is None:
        return left
    return left if left[2] <= right[2] else right


def _mec_one_fixed(points, p) -> tuple[float, float, float]:
    c = (p[0], p[1], 0.0)
    for i, q in enumerate(points):
        if not _circle_contains(c, q):
            c = _circle_diameter(p, q) if c[2] == 0.0 else _mec_two_fixed(points[: i + 1], p, q)
    return c


def min_enclosing_circle(points) -> tuple[np.ndarray, float]:
    """Smallest circle containing all 2D points; exact up to round-off."""
    pts = [(float(p[0]), float(p[1])) for p in np.atleast_2d(np.asarray(points, dtype=np.float64))]
    if not pts:
        raise InvalidInputError("min_enclosing_circle needs at least one point")
    c = None
    for i, p in enumerate(pts):
        if c is None or not _circle_contains(c, p):
            c = _mec_one_fixed(pts[: i + 1], p)
    return np.array([c[0], c[1]]), float(c[2])


# ---------------------------------------------------------------------------
# Minimal enclosing sphere (3D), same scheme with one more support level.
# ---------------------------------------------------------------------------


def _sph_contains(s: tuple[np.ndarray, float], p: np.ndarray) -> bool:
    return float(np.linalg.norm(p - s[0])) <= s[1] * _IN_EPS + 1e-300


def _sph_diameter(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    c = 0.5 * (a + b)
    return (c, max(float(np.linalg.norm(c - a)), float(np.linalg.norm(c - b))))


def _circumsphere3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Optional[tuple[np.ndarray, float]]:
    """Smallest sphere with the triangle's three vertices on its boundary
    (center = in-plane circumcenter)."""
    u, v = b - a, c - a
    n = np.cross(u, v)
    nn = float(n @ n)
    if nn == 0.0:
        return None
    center = a + (np.cross((u @ u) * v - (v @ v) * u, n)) / (2.0 * nn)
    r = max(float(np.linalg.norm(center - p)) for p in (a, b, c))
    return (center, r)


def _circumsphere4(a, b, c, d) -> Optional[tuple[np.ndarray, float]]:
    M = 2.0 * np.array([b - a, c - a, d - a])
    rhs = np.array([b @ b - a @ a, c @ c - a @ a, d @ d - a @ a])
    det = np.linalg.det(M)
    if abs(det) < 1e-300:
        return None
    center = np.linalg.solve(M, rhs)
    r = max(float(np.linalg.norm(center - p)) for p in (a, b, c, d))
    return (center, r)


def _mes_three_fixed(points, p, q, r) -> tuple[np.ndarray, float]:
    s = _circumsphere3(p, q, r)
    if s is None:
        # Collinear support: fall back to the widest diameter pair.
        s = max(
            (_sph_diameter(x, y) for x, y in ((p, q), (p, r), (q, r))),
            key=lambda t: t[1],
        )
    for x in points:
        if not _sph_contains(s, x):
            cand = _circumsphere4(p, q, r, x)
            if cand is not None:
                s = cand
    return s


def _mes_two_fixed(points, p, q) -> tuple[np.ndarray, float]:
    s = _sph_diameter(p, q)
    for i, r in enumerate(points):
        if not _sph_contains(s, r):
            s = _mes_three_fixed(points[: i + 1], p, q, r)
    return s


def _mes_one_fixed(points, p) -> tuple[np.ndarray, float]:
    s = (p, 0.0)
    for i, q in enumerate(points):
        if not _sph_contains(s, q):
            s = _sph_diameter(p, q) if s[1] == 0.0 else _mes_two_fixed(points[: i + 1], p, q)
    return s


def min_enclosing_sphere(points) -> Sphere:
    """Smallest sphere containing all 3D points (at most 4 support points)."""
    pts = list(np.atleast_2d(np.asarray(points, dtype=np.float64)))
    if not pts:
        raise InvalidInputError("min_enclosing_sphere needs at least one point")
    s = None
    for i, p in enumerate(pts):
        if s is None or not _sph_contains(s, p):
            s = _mes_one_fixed(pts[: i + 1], p)
    return Sphere(center=s[0], radius=s[1])


# ---------------------------------------------------------------------------
# Cones of rays through pixel regions.
# ---------------------------------------------------------------------------


def stratified_indices(n: int, k: int) -> np.ndarray:
    """k evenly spaced indices into range(n); all of them when n <= k."""
    if n <= k:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, k)).astype(np.intp))


def cone_rays(cone: Cone, region_pixels, ray_cap: int = DEFAULT_RAY_CAP) -> list[Ray]:
    """Back-project a pixel region through its camera as a ray bundle.

    One ray per pixel center plus the cone axis, duplicates removed. Regions
    larger than the cap are thinned by deterministic stratified selection
    over row-major pixel order (cap counts the axis ray).
    """
    pixels = np.asarray(list(region_pixels), dtype=np.int64).reshape(-1, 2)
    if pixels.shape[0] == 0:
        raise InvalidInputError("cone_rays needs a non-empty region")
    order = np.lexsort((pixels[:, 0], pixels[:, 1]))
    pixels = pixels[order]
    if pixels.shape[0] > ray_cap - 1:
        pixels = pixels[stratified_indices(pixels.shape[0], ray_cap - 1)]
    rays = [Ray(cone.apex, cone.axis)]
    cam = cone.camera
    for px, py in pixels:
        origin, direction = cam.pixel_ray((px + 0.5, py + 0.5))
        rays.append(Ray(origin, direction))
    # Exact-duplicate removal (the axis coincides with the pixel ray for
    # single-pixel regions).
    unique: list[Ray] = []
    for r in rays:
        if not any(np.dot(r.direction, u.direction) > 1 - 1e-12 for u in unique):
            unique.append(r)
    return unique


def triangulation_angle_deg(dir_a, dir_b) -> float:
    """Angle in degrees between two viewing directions."""
    a = np.asarray(dir_a, dtype=np.float64)
    b = np.asarray(dir_b, dtype=np.float64)
    cosang = np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosang)))
