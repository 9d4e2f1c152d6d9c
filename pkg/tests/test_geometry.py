"""Geometric primitives against independent oracles.

The enclosing circle/sphere oracles enumerate every support subset (pairs
and triples for circles, pairs through quadruples for spheres) and take the
smallest candidate that contains all points; ray pairs are checked against
the closed-form skew-line solution written out locally.
"""

import itertools

import numpy as np
import pytest

from splatpm.core import Camera
from splatpm.errors import InvalidInputError
from splatpm.geometry import (
    Cone,
    Ray,
    cone_rays,
    min_enclosing_circle,
    min_enclosing_sphere,
    pairwise_ray_midpoints,
    ray_closest_points,
    stratified_indices,
    triangulation_angle_deg,
)


def closed_form_closest(o1, d1, o2, d2):
    """Skew-line closest points via the textbook formula (test-local)."""
    w0 = np.asarray(o1, float) - np.asarray(o2, float)
    b = np.dot(d1, d2)
    d = np.dot(d1, w0)
    e = np.dot(d2, w0)
    denom = 1.0 - b * b
    t = (b * e - d) / denom
    u = (e - b * d) / denom
    p1 = o1 + t * d1
    p2 = o2 + u * d2
    return p1, p2, np.linalg.norm(p1 - p2), t, u


def brute_force_circle(points):
    pts = np.asarray(points, float)
    n = len(pts)
    best = None
    for i, j in itertools.combinations(range(n), 2):
        c = 0.5 * (pts[i] + pts[j])
        r = np.linalg.norm(pts[i] - c)
        if np.all(np.linalg.norm(pts - c, axis=1) <= r * (1 + 1e-12)):
            if best is None or r < best[1]:
                best = (c, r)
    for i, j, k in itertools.combinations(range(n), 3):
        a, b, c3 = pts[i], pts[j], pts[k]
        d = 2 * (a[0] * (b[1] - c3[1]) + b[0] * (c3[1] - a[1]) + c3[0] * (a[1] - b[1]))
        if d == 0:
            continue
        ux = ((a @ a) * (b[1] - c3[1]) + (b @ b) * (c3[1] - a[1]) + (c3 @ c3) * (a[1] - b[1])) / d
        uy = ((a @ a) * (c3[0] - b[0]) + (b @ b) * (a[0] - c3[0]) + (c3 @ c3) * (b[0] - a[0])) / d
        cen = np.array([ux, uy])
        r = max(np.linalg.norm(p - cen) for p in (a, b, c3))
        if np.all(np.linalg.norm(pts - cen, axis=1) <= r * (1 + 1e-12)):
            if best is None or r < best[1]:
                best = (cen, r)
    if best is None:  # all points coincide
        best = (pts[0], 0.0)
    return best


def brute_force_sphere(points):
    pts = np.asarray(points, float)
    n = len(pts)
    best = None

    def consider(c, r):
        nonlocal best
        if np.all(np.linalg.norm(pts - c, axis=1) <= r * (1 + 1e-12) + 1e-15):
            if best is None or r < best[1]:
                best = (c, r)

    for i, j in itertools.combinations(range(n), 2):
        c = 0.5 * (pts[i] + pts[j])
        consider(c, np.linalg.norm(pts[i] - c))
    for i, j, k in itertools.combinations(range(n), 3):
        a, b, c3 = pts[i], pts[j], pts[k]
        u, v = b - a, c3 - a
        nvec = np.cross(u, v)
        nn = nvec @ nvec
        if nn == 0:
            continue
        cen = a + np.cross((u @ u) * v - (v @ v) * u, nvec) / (2 * nn)
        consider(cen, max(np.linalg.norm(p - cen) for p in (a, b, c3)))
    for i, j, k, l in itertools.combinations(range(n), 4):
        a = pts[i]
        m = 2 * np.array([pts[j] - a, pts[k] - a, pts[l] - a])
        if abs(np.linalg.det(m)) < 1e-12:
            continue
        rhs = np.array([pts[j] @ pts[j] - a @ a, pts[k] @ pts[k] - a @ a, pts[l] @ pts[l] - a @ a])
        cen = np.linalg.solve(m, rhs)
        consider(cen, max(np.linalg.norm(pts[x] - cen) for x in (i, j, k, l)))
    if best is None:
        best = (pts[0], 0.0)
    return best


class TestRayClosestPoints:
    def test_intersecting_rays(self):
        target = np.array([1.0, 1.0, 1.0])
        r1 = Ray(origin=(0, 0, 0), direction=target)
        r2 = Ray(origin=(2, 0, 2), direction=target - np.array([2, 0, 2]))
        res = ray_closest_points(r1, r2)
        np.testing.assert_allclose(res.p1, target, atol=1e-12)
        np.testing.assert_allclose(res.p2, target, atol=1e-12)
        assert res.distance < 1e-12
        assert not res.parallel and not res.behind

    def test_skew_unit_case(self):
        r1 = Ray(origin=(0, 0, 0), direction=(1, 0, 0))
        r2 = Ray(origin=(0, 0, 1), direction=(0, 1, 0))
        res = ray_closest_points(r1, r2)
        np.testing.assert_allclose(res.p1, [0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(res.p2, [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(res.distance, 1.0)

    def test_parallel_flag(self):
        r1 = Ray(origin=(0, 0, 0), direction=(1, 0, 0))
        r2 = Ray(origin=(0, 1, 0), direction=(1, 0, 0))
        assert ray_closest_points(r1, r2).parallel

    def test_behind_flag(self):
        r1 = Ray(origin=(0, 0, 0), direction=(1, 0, 0))
        r2 = Ray(origin=(-2, 1, 0), direction=(0, 0, 1))
        res = ray_closest_points(r1, r2)
        assert res.behind  # closest approach needs t1 < 0

    def test_symmetry(self, rng):
        for _ in range(50):
            r1 = Ray(origin=rng.normal(size=3), direction=rng.normal(size=3))
            r2 = Ray(origin=rng.normal(size=3), direction=rng.normal(size=3))
            a = ray_closest_points(r1, r2)
            b = ray_closest_points(r2, r1)
            if a.parallel:
                assert b.parallel
                continue
            np.testing.assert_allclose(a.p1, b.p2, atol=1e-9)
            np.testing.assert_allclose(a.distance, b.distance, atol=1e-12)

    def test_matches_closed_form_on_random_pairs(self, rng):
        for _ in range(1000):
            o1, o2 = rng.normal(size=3), rng.normal(size=3)
            d1 = rng.normal(size=3)
            d2 = rng.normal(size=3)
            d1 /= np.linalg.norm(d1)
            d2 /= np.linalg.norm(d2)
            if np.linalg.norm(np.cross(d1, d2)) < 1e-6:
                continue
            res = ray_closest_points(Ray(o1, d1), Ray(o2, d2))
            p1, p2, dist, t, u = closed_form_closest(o1, d1, o2, d2)
            np.testing.assert_allclose(res.p1, p1, atol=1e-9)
            np.testing.assert_allclose(res.p2, p2, atol=1e-9)
            np.testing.assert_allclose(res.distance, dist, atol=1e-9)
            assert res.behind == (t < 0 or u < 0)

    def test_pairwise_matches_scalar(self, rng):
        oa = rng.normal(size=3)
        ob = rng.normal(size=3)
        da = rng.normal(size=(8, 3))
        db = rng.normal(size=(9, 3))
        da /= np.linalg.norm(da, axis=1, keepdims=True)
        db /= np.linalg.norm(db, axis=1, keepdims=True)
        eps = 1.5
        mids = pairwise_ray_midpoints(oa, da, ob, db, eps)
        expected = []
        for i in range(8):
            for j in range(9):
                res = ray_closest_points(Ray(oa, da[i]), Ray(ob, db[j]))
                if res.parallel or res.t1 <= 0 or res.t2 <= 0 or res.distance >= eps:
                    continue
                expected.append(res.midpoint)
        assert len(mids) == len(expected)
        if expected:
            np.testing.assert_allclose(mids, np.array(expected), atol=1e-9)


class TestMinEnclosingCircle:
    def test_singleton(self):
        c, r = min_enclosing_circle([(3.0, 4.0)])
        np.testing.assert_allclose(c, [3, 4])
        assert r == 0.0

    def test_two_points(self):
        c, r = min_enclosing_circle([(0.0, 0.0), (2.0, 0.0)])
        np.testing.assert_allclose(c, [1, 0])
        np.testing.assert_allclose(r, 1.0)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            min_enclosing_circle(np.zeros((0, 2)))

    def test_matches_brute_force(self, rng):
        for trial in range(200):
            n = int(rng.integers(1, 13))
            pts = rng.normal(size=(n, 2)) * rng.uniform(0.1, 10)
            c, r = min_enclosing_circle(pts)
            bc, br = brute_force_circle(pts)
            np.testing.assert_allclose(r, br, rtol=1e-9, atol=1e-12)
            assert np.all(np.linalg.norm(pts - c, axis=1) <= r + 1e-9 * max(r, 1.0))

    def test_boundary_support(self, rng):
        for _ in range(20):
            pts = rng.normal(size=(8, 2))
            c, r = min_enclosing_circle(pts)
            d = np.linalg.norm(pts - c, axis=1)
            assert np.count_nonzero(d >= r - 1e-9 * max(r, 1.0)) >= 2


class TestMinEnclosingSphere:
    def test_singleton(self):
        s = min_enclosing_sphere([(1.0, 2.0, 3.0)])
        np.testing.assert_allclose(s.center, [1, 2, 3])
        assert s.radius == 0.0

    def test_regular_tetrahedron(self):
        # vertices of a tetrahedron with edge sqrt(8), circumradius sqrt(3)
        pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
        s = min_enclosing_sphere(pts)
        np.testing.assert_allclose(s.center, [0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(s.radius, np.sqrt(3), rtol=1e-12)

    def test_matches_brute_force(self, rng):
        for trial in range(200):
            n = int(rng.integers(1, 13))
            pts = rng.normal(size=(n, 3)) * rng.uniform(0.1, 10)
            s = min_enclosing_sphere(pts)
            bc, br = brute_force_sphere(pts)
            np.testing.assert_allclose(s.radius, br, rtol=1e-9, atol=1e-12)
            assert np.all(np.linalg.norm(pts - s.center, axis=1) <= s.radius + 1e-9 * max(s.radius, 1.0))

    def test_rigid_transform_invariance(self, rng):
        from splatpm.core import quat_to_matrix

        pts = rng.normal(size=(15, 3))
        s0 = min_enclosing_sphere(pts)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        rot = quat_to_matrix(q)
        shift = rng.normal(size=3) * 5
        s1 = min_enclosing_sphere(pts @ rot.T + shift)
        np.testing.assert_allclose(s1.radius, s0.radius, rtol=1e-9)
        np.testing.assert_allclose(s1.center, rot @ s0.center + shift, atol=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            min_enclosing_sphere(np.zeros((0, 3)))

    def test_boundary_support(self, rng):
        for _ in range(20):
            pts = rng.normal(size=(9, 3))
            s = min_enclosing_sphere(pts)
            d = np.linalg.norm(pts - s.center, axis=1)
            assert np.count_nonzero(d >= s.radius - 1e-9 * max(s.radius, 1.0)) >= 2


class TestConeRays:
    def camera(self):
        return Camera.look_at(position=(0, 0, -4), target=(0, 0, 0), focal=50.0, resolution=(64, 64))

    def test_single_pixel_dedupes_to_one(self):
        cam = self.camera()
        cone = Cone.through_pixels(cam, (10.5, 20.5), 0.0)
        rays = cone_rays(cone, [(10, 20)])
        assert len(rays) == 1

    def test_five_pixel_plus_region(self):
        cam = self.camera()
        # plus-shape: centroid coincides with the middle pixel center
        pixels = [(32, 32), (31, 32), (33, 32), (32, 31), (32, 33)]
        cone = Cone.through_pixels(cam, (32.5, 32.5), 1.0)
        rays = cone_rays(cone, pixels)
        assert len(rays) == 5
        for r in rays:
            np.testing.assert_allclose(np.linalg.norm(r.direction), 1.0, atol=1e-12)

    def test_cap_with_large_region(self):
        cam = self.camera()
        pixels = [(x, y) for x in range(0, 50) for y in range(0, 50)][:2500]
        # 100x100-style large region; axis not on any pixel center
        cone = Cone.through_pixels(cam, (25.0, 25.0), 35.0)
        rays = cone_rays(cone, pixels, ray_cap=256)
        assert len(rays) == 256

    def test_stratified_indices_deterministic(self):
        idx1 = stratified_indices(10000, 255)
        idx2 = stratified_indices(10000, 255)
        np.testing.assert_array_equal(idx1, idx2)
        assert len(idx1) == 255
        assert len(np.unique(idx1)) == 255

    def test_empty_region_rejected(self):
        cone = Cone.through_pixels(self.camera(), (5, 5), 1.0)
        with pytest.raises(InvalidInputError):
            cone_rays(cone, [])


def test_triangulation_angle():
    assert triangulation_angle_deg((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0)
    assert triangulation_angle_deg((1, 0, 0), (1, 0, 0)) == pytest.approx(0.0, abs=1e-6)
