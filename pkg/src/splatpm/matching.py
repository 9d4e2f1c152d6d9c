"""Cross-view correspondence providers.

Two implementations behind one interface: a ground-truth projective matcher
(projects a deterministic sample of reference-scene surface points into both
views) and a self-contained Harris-corner + normalized-cross-correlation
matcher that needs only the images. Results are cached per view pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Camera, ImageBuffer, Scene, quats_to_matrices
from .errors import ConfigError


@dataclass(frozen=True)
class Correspondence:
    """Matched point pairs between two views, positions normalized to
    [0, 1]^2 by each image's (width, height)."""

    points_a: np.ndarray
    points_b: np.ndarray
    confidence: np.ndarray
    resolution_a: tuple[int, int]
    resolution_b: tuple[int, int]

    def __len__(self) -> int:
        return self.points_a.shape[0]

    def pixels_a(self) -> np.ndarray:
        return self.points_a * np.asarray(self.resolution_a, dtype=np.float64)

    def pixels_b(self) -> np.ndarray:
        return self.points_b * np.asarray(self.resolution_b, dtype=np.float64)


class GroundTruthMatcher:
    """Projects reference-scene surface samples into both views and keeps
    the ones visible in each, with confidence 1."""

    def __init__(self, reference: Scene, cameras: Sequence[Camera]):
        self.cameras = list(cameras)
        self._cache: dict[tuple[int, int], Correspondence] = {}
        # Deterministic surface sample: each Gaussian's mean plus the six
        # one-sigma axis endpoints.
        k = len(reference)
        rot = quats_to_matrices(reference.rotations) if k else np.zeros((0, 3, 3))
        pts = [reference.means]
        for axis in range(3):
            offs = rot[:, :, axis] * reference.scales[:, axis : axis + 1]
            pts.append(reference.means + offs)
            pts.append(reference.means - offs)
        self.samples = np.concatenate(pts, axis=0) if k else np.zeros((0, 3))

    def match(self, view_a: int, view_b: int) -> Correspondence:
        key = (view_a, view_b)
        if key in self._cache:
            return self._cache[key]
        cam_a, cam_b = self.cameras[view_a], self.cameras[view_b]
        pix_a, _, front_a = cam_a.project_points(self.samples)
        pix_b, _, front_b = cam_b.project_points(self.samples)
        wa, ha = cam_a.resolution
        wb, hb = cam_b.resolution
        vis_a = front_a & (pix_a[:, 0] >= 0) & (pix_a[:, 0] <= wa) & (pix_a[:, 1] >= 0) & (pix_a[:, 1] <= ha)
        vis_b = front_b & (pix_b[:, 0] >= 0) & (pix_b[:, 0] <= wb) & (pix_b[:, 1] >= 0) & (pix_b[:, 1] <= hb)
        keep = vis_a & vis_b
        corr = Correspondence(
            points_a=pix_a[keep] / np.array([wa, ha], dtype=np.float64),
            points_b=pix_b[keep] / np.array([wb, hb], dtype=np.float64),
            confidence=np.ones(int(keep.sum())),
            resolution_a=cam_a.resolution,
            resolution_b=cam_b.resolution,
        )
        self._cache[key] = corr
        return corr


def harris_corners(gray: np.ndarray, max_corners: int = 96, border: int = 3) -> np.ndarray:
    """Harris corner pixels (x, y), strongest first, 3x3 non-max suppressed."""
    gy, gx = np.gradient(gray)
    ixx = _box3(gx * gx)
    iyy = _box3(gy * gy)
    ixy = _box3(gx * gy)
    resp = ixx * iyy - ixy * ixy - 0.06 * (ixx + iyy) ** 2
    h, w = gray.shape
    peak = np.ones_like(resp, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            shifted = np.roll(np.roll(resp, dy, axis=0), dx, axis=1)
            peak &= resp >= shifted
    peak &= resp > 1e-6 * max(resp.max(), 1e-12)
    peak[:border, :] = peak[-border:, :] = False
    peak[:, :border] = peak[:, -border:] = False
    ys, xs = np.nonzero(peak)
    if len(xs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    strength = resp[ys, xs]
    sel = np.argsort(-strength, kind="stable")[:max_corners]
    return np.column_stack([xs[sel], ys[sel]]).astype(np.int64)


def _box3(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out += np.roll(np.roll(a, dy, axis=0), dx, axis=1)
    return out


class PatchNccMatcher:
    """Harris corners matched across views by normalized cross-correlation
    of 7x7 grayscale patches; confidence is the NCC score."""

    def __init__(self, images: Sequence[ImageBuffer], patch: int = 7, min_score: float = 0.5, max_corners: int = 96):
        if patch % 2 == 0:
            raise ConfigError("patch size must be odd")
        self.images = list(images)
        self.patch = patch
        self.min_score = min_score
        self.max_corners = max_corners
        self._cache: dict[tuple[int, int], Correspondence] = {}

    def _patches(self, gray: np.ndarray, corners: np.ndarray) -> np.ndarray:
        r = self.patch // 2
        out = np.empty((len(corners), self.patch * self.patch))
        for i, (x, y) in enumerate(corners):
            tile = gray[y - r : y + r + 1, x - r : x + r + 1].reshape(-1)
            tile = tile - tile.mean()
            norm = np.linalg.norm(tile)
            out[i] = tile / norm if norm > 0 else tile
        return out

    def match(self, view_a: int, view_b: int) -> Correspondence:
        key = (view_a, view_b)
        if key in self._cache:
            return self._cache[key]
        img_a, img_b = self.images[view_a], self.images[view_b]
        gray_a = img_a.data.mean(axis=2)
        gray_b = img_b.data.mean(axis=2)
        border = self.patch // 2 + 1
        ca = harris_corners(gray_a, self.max_corners, border)
        cb = harris_corners(gray_b, self.max_corners, border)
        if len(ca) == 0 or len(cb) == 0:
            return self._empty(img_a, img_b, key)
        pa = self._patches(gray_a, ca)
        pb = self._patches(gray_b, cb)
        scores = pa @ pb.T
        best_ab = np.argmax(scores, axis=1)
        best_ba = np.argmax(scores, axis=0)
        rows = []
        for i, j in enumerate(best_ab):
            if best_ba[j] == i and scores[i, j] >= self.min_score:
                rows.append((i, j, scores[i, j]))
        if not rows:
            return self._empty(img_a, img_b, key)
        ii = np.array([r[0] for r in rows])
        jj = np.array([r[1] for r in rows])
        conf = np.clip(np.array([r[2] for r in rows]), 0.0, 1.0)
        wa, ha = img_a.resolution
        wb, hb = img_b.resolution
        corr = Correspondence(
            points_a=(ca[ii] + 0.5) / np.array([wa, ha], dtype=np.float64),
            points_b=(cb[jj] + 0.5) / np.array([wb, hb], dtype=np.float64),
            confidence=conf,
            resolution_a=img_a.resolution,
            resolution_b=img_b.resolution,
        )
        self._cache[key] = corr
        return corr

    def _empty(self, img_a: ImageBuffer, img_b: ImageBuffer, key) -> Correspondence:
        corr = Correspondence(
            points_a=np.zeros((0, 2)),
            points_b=np.zeros((0, 2)),
            confidence=np.zeros(0),
            resolution_a=img_a.resolution,
            resolution_b=img_b.resolution,
        )
        self._cache[key] = corr
        return corr


def make_matcher(provider: str, *, reference: Scene | None = None, cameras=None, images=None):
    """Instantiate a correspondence provider by name."""
    if provider == "ground-truth":
        if reference is None or cameras is None:
            raise ConfigError("ground-truth matcher needs the reference scene and cameras")
        return GroundTruthMatcher(reference, cameras)
    if provider == "patch-ncc":
        if images is None:
            raise ConfigError("patch-ncc matcher needs the view images")
        return PatchNccMatcher(images)
    raise ConfigError(f"unknown correspondence provider {provider!r}")
