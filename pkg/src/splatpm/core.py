"""Scene value types: Gaussian primitives, pinhole cameras, images.

Everything here is an immutable value. Scenes store their points as
structure-of-arrays so the render kernels can consume them directly;
`Gaussian3D` is the per-point view used at API edges (management ops,
serialization).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

# Projections with camera-space depth at or below this are treated as behind
# the camera and excluded from rendering.
NEAR_PLANE_EPS = 1e-4

QUAT_NORM_TOL = 1e-6


def _as_vec(x, n: int, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (n,):
        raise InvalidParameterError(f"{name} must be a {n}-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidParameterError(f"{name} must be finite, got {v}")
    return v


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise InvalidParameterError(f"cannot normalize quaternion {q}")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Vectorized quaternion-to-rotation for an (K, 4) array of unit quats."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


@dataclass(frozen=True)
class Gaussian3D:
    """One scene primitive: an anisotropic 3D Gaussian with opacity and color.

    `scale` holds per-axis standard deviations; `rotation` is a unit
    quaternion (w, x, y, z).
    """

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vec(self.mean, 3, "mean"))
        object.__setattr__(self, "rotation", _as_vec(self.rotation, 4, "rotation"))
        object.__setattr__(self, "scale", _as_vec(self.scale, 3, "scale"))
        object.__setattr__(self, "color", _as_vec(self.color, 3, "color"))
        object.__setattr__(self, "opacity", float(self.opacity))
        n = np.linalg.norm(self.rotation)
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise InvalidParameterError(f"rotation quaternion norm {n} outside 1 +- {QUAT_NORM_TOL}")
        if np.any(self.scale <= 0):
            raise InvalidParameterError(f"scale components must be positive, got {self.scale}")
        if not (0.0 <= self.opacity <= 1.0):
            raise InvalidParameterError(f"opacity {self.opacity} outside [0, 1]")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise InvalidParameterError(f"color components outside [0, 1]: {self.color}")

    def covariance(self) -> np.ndarray:
        return build_covariance(self.rotation, self.scale)


def build_covariance(rotation, scale) -> np.ndarray:
    """3x3 covariance R diag(scale^2) R^T of a quaternion + per-axis stdev."""
    scale = _as_vec(scale, 3, "scale")
    if np.any(scale <= 0):
        raise InvalidParameterError(f"scale components must be positive, got {scale}")
    R = quat_to_matrix(_as_vec(rotation, 4, "rotation"))
    return (R * scale**2) @ R.T


def gaussian_density(g: Gaussian3D, x) -> float:
    """Unnormalized density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)); 1 at the mean."""
    d = _as_vec(x, 3, "x") - g.mean
    cov = g.covariance()
    m = d @ np.linalg.solve(cov, d)
    return float(np.exp(-0.5 * m))


class Projection(NamedTuple):
    pixel: np.ndarray
    depth: float
    behind: bool


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world pose plus intrinsics in pixel units.

    `orientation` is the camera-to-world rotation as a unit quaternion; the
    camera looks along its local +z axis with x right and y down (image rows
    grow with y).
    """

    position: np.ndarray
    orientation: np.ndarray
    focal: np.ndarray
    principal: np.ndarray
    resolution: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec(self.position, 3, "position"))
        object.__setattr__(self, "orientation", _as_vec(self.orientation, 4, "orientation"))
        object.__setattr__(self, "focal", _as_vec(self.focal, 2, "focal"))
        object.__setattr__(self, "principal", _as_vec(self.principal, 2, "principal"))
        object.__setattr__(self, "resolution", (int(self.resolution[0]), int(self.resolution[1])))
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise InvalidParameterError(f"orientation quaternion norm {n} outside 1 +- {QUAT_NORM_TOL}")
        if np.any(self.focal <= 0):
            raise InvalidParameterError(f"focal components must be positive, got {self.focal}")
        w, h = self.resolution
        if w < 1 or h < 1:
            raise InvalidParameterError(f"resolution must be at least 1x1, got {self.resolution}")
        cx, cy = self.principal
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise InvalidParameterError(f"principal point {self.principal} outside image bounds {self.resolution}")

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    def rotation_matrix(self) -> np.ndarray:
        """Camera-to-world rotation; columns are the camera axes in world frame."""
        return quat_to_matrix(self.orientation)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (pts - self.position) @ self.rotation_matrix()

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized projection.

        Returns (pixels (K,2), depths (K,), in_front (K,) bool). Pixels for
        behind-camera points are computed with a clamped depth and should be
        ignored via the mask.
        """
        t = self.world_to_camera(points)
        depth = t[:, 2]
        in_front = depth > NEAR_PLANE_EPS
        z = np.where(in_front, depth, 1.0)
        pix = self.focal * t[:, :2] / z[:, None] + self.principal
        return pix, depth, in_front

    def project_point(self, p) -> Projection:
        pix, depth, in_front = self.project_points(np.asarray(p, dtype=np.float64)[None, :])
        return Projection(pix[0], float(depth[0]), not bool(in_front[0]))

    def pixel_ray(self, pixel) -> tuple[np.ndarray, np.ndarray]:
        """World-space (origin, unit direction) of the ray through a pixel position."""
        px, py = float(pixel[0]), float(pixel[1])
        d_cam = np.array(
            [(px - self.principal[0]) / self.focal[0], (py - self.principal[1]) / self.focal[1], 1.0]
        )
        d = self.rotation_matrix() @ d_cam
        return self.position.copy(), d / np.linalg.norm(d)

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0), focal=80.0, resolution=(64, 64)) -> "Camera":
        """Camera at `position` looking at `target`, image x right / y down."""
        position = _as_vec(position, 3, "position")
        forward = _as_vec(target, 3, "target") - position
        nf = np.linalg.norm(forward)
        if nf == 0:
            raise InvalidParameterError("camera position and target coincide")
        forward = forward / nf
        up = _as_vec(up, 3, "up")
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
            nr = np.linalg.norm(right)
        right = right / nr
        down = np.cross(forward, right)
        R = np.column_stack([right, down, forward])
        w, h = int(resolution[0]), int(resolution[1])
        f = np.broadcast_to(np.asarray(focal, dtype=np.float64), (2,)).copy()
        return cls(
            position=position,
            orientation=matrix_to_quat(R),
            focal=f,
            principal=np.array([w / 2.0, h / 2.0]),
            resolution=(w, h),
        )


def project_point(camera: Camera, p) -> Projection:
    """Pinhole projection of a world point; `behind` flags depth <= near plane."""
    return camera.project_point(p)


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major RGB image with float64 channels nominally in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise InvalidParameterError(f"image data must be (H, W, 3), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidParameterError("image data must be finite")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "ImageBuffer":
        return cls(np.zeros((height, width, 3)))

    @classmethod
    def full(cls, width: int, height: int, color) -> "ImageBuffer":
        return cls(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)).copy())

    def clamped(self) -> "ImageBuffer":
        return ImageBuffer(np.clip(self.data, 0.0, 1.0))


def check_same_resolution(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.resolution != b.resolution:
        raise InvalidInputError(f"resolution mismatch: {a.resolution} vs {b.resolution}")


@dataclass(frozen=True)
class Scene:
    """Ordered collection of Gaussians stored as structure-of-arrays.

    The generation counter versions the point population: every management
    edit (densify, prune, reset, LPM step) bumps it, parameter updates do
    not. Companion arrays (optimizer moments, gradient statistics) check it
    to detect misalignment.
    """

    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    generation: int = 0

    def __post_init__(self):
        k = len(np.asarray(self.means))
        arrays = {
            "means": (k, 3),
            "rotations": (k, 4),
            "scales": (k, 3),
            "opacities": (k,),
            "colors": (k, 3),
        }
        for name, shape in arrays.items():
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if a.shape != shape:
                raise InvalidParameterError(f"{name} must have shape {shape}, got {a.shape}")
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "generation", int(self.generation))
        self.validate()

    def validate(self) -> None:
        if len(self) == 0:
            return
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
            raise InvalidParameterError("scene contains non-unit rotation quaternions")
        if np.any(self.scales <= 0):
            raise InvalidParameterError("scene contains non-positive scales")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise InvalidParameterError("scene contains opacities outside [0, 1]")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise InvalidParameterError("scene contains colors outside [0, 1]")
        for name in ("means", "rotations", "scales", "opacities", "colors"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidParameterError(f"scene {name} contain non-finite values")

    def __len__(self) -> int:
        return self.means.shape[0]

    def point(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mean=self.means[i],
            rotation=self.rotations[i],
            scale=self.scales[i],
            opacity=self.opacities[i],
            color=self.colors[i],
        )

    def points(self) -> list[Gaussian3D]:
        return [self.point(i) for i in range(len(self))]

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian3D], generation: int = 0) -> "Scene":
        gs = list(gaussians)
        if not gs:
            return cls.empty(generation)
        return cls(
            means=np.array([g.mean for g in gs]),
            rotations=np.array([g.rotation for g in gs]),
            scales=np.array([g.scale for g in gs]),
            opacities=np.array([g.opacity for g in gs]),
            colors=np.array([g.color for g in gs]),
            generation=generation,
        )

    @classmethod
    def empty(cls, generation: int = 0) -> "Scene":
        return cls(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            scales=np.zeros((0, 3)),
            opacities=np.zeros(0),
            colors=np.zeros((0, 3)),
            generation=generation,
        )

    def replace(self, *, bump_generation: bool = False, **arrays) -> "Scene":
        """New scene with some arrays swapped; bump the generation on
        population edits only."""
        kwargs = dict(
            means=self.means,
            rotations=self.rotations,
            scales=self.scales,
            opacities=self.opacities,
            colors=self.colors,
            generation=self.generation + (1 if bump_generation else 0),
        )
        kwargs.update(arrays)
        return Scene(**kwargs)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            z = np.zeros(3)
            return z, z
        return self.means.min(axis=0), self.means.max(axis=0)

    def bounding_diagonal(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


SCENE_HEADER = "GS3D v1"


def save_scene_text(scene: Scene) -> str:
    """Serialize a scene to the line-oriented text format.

    One Gaussian per record: mean(3) quat(4) scale(3) opacity(1) rgb(3),
    full float64 precision so round-trips are exact.
    """
    lines = [f"{SCENE_HEADER} {len(scene)}"]
    for i in range(len(scene)):
        vals = np.concatenate(
            [scene.means[i], scene.rotations[i], scene.scales[i], [scene.opacities[i]], scene.colors[i]]
        )
        lines.append(" ".join(format(v, ".17g") for v in vals))
    return "\n".join(lines) + "\n"


def load_scene_text(text: str, generation: int = 0) -> Scene:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError("empty scene file")
    header = lines[0].split()
    if len(header) != 3 or " ".join(header[:2]) != SCENE_HEADER:
        raise InvalidInputError(f"bad scene header: {lines[0]!r}")
    count = int(header[2])
    if len(lines) - 1 != count:
        raise InvalidInputError(f"header declares {count} records, found {len(lines) - 1}")
    if count == 0:
        return Scene.empty(generation)
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    if rows.shape[1] != 14:
        raise InvalidInputError(f"each record needs 14 fields, got {rows.shape[1]}")
    return Scene(
        means=rows[:, 0:3],
        rotations=rows[:, 3:7],
        scales=rows[:, 7:10],
        opacities=rows[:, 10],
        colors=rows[:, 11:14],
        generation=generation,
    )


def save_scene_file(scene: Scene, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(save_scene_text(scene))


def load_scene_file(path) -> Scene:
    with open(path, "r", encoding="ascii") as fh:
        return load_scene_text(fh.read())
