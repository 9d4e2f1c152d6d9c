"""Forward splatting and the analytic backward pass.

Projection (3D Gaussian -> 2D splat), depth sorting and culling live here;
the per-pixel blending loops are delegated to the selected kernel backend.
The backward pass chains the kernel's screen-space gradients through the
projection onto every Gaussian parameter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import NEAR_PLANE_EPS, Camera, ImageBuffer, Scene, check_same_resolution, quats_to_matrices
from .metrics import LossSpec, image_loss_gradient, loss as loss_fn

# Alpha ceiling: keeps transmittance strictly positive so the backward
# divisions stay finite.
ALPHA_CAP = 0.99
# Uniform screen-space dilation added to every projected covariance; doubles
# as the eigenvalue floor (projected covariances are PSD, so both eigenvalues
# end up >= BLUR_FLOOR).
BLUR_FLOOR = 0.3
# Squared Mahalanobis cutoff mirrored from the kernels.
CUTOFF_MSQ = 9.0

DEPTH_ACCUM_EPS = 1e-12


@dataclass(frozen=True)
class Splat2D:
    """A Gaussian projected into one view."""

    mean2: np.ndarray
    cov2: np.ndarray
    depth: float
    source_index: int


@dataclass(frozen=True)
class RenderOutput:
    color: ImageBuffer
    depth: np.ndarray
    contributions: np.ndarray

    @property
    def resolution(self) -> tuple[int, int]:
        return self.color.resolution


@dataclass(frozen=True)
class GradientBundle:
    """Loss gradients for every Gaussian parameter of one rendered view.

    `rotations` holds tangent-space 4-vectors (radial component removed);
    `scales` is the gradient w.r.t. log standard deviations. `screen_mags`
    is the Euclidean norm of the loss gradient w.r.t. the projected 2D mean,
    one view's contribution to the view-averaged densification statistic.
    """

    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    screen_mags: np.ndarray
    radii_px: np.ndarray
    contributed: np.ndarray
    generation: int


class SplatBatch:
    """Projection of a whole scene into one camera, with the intermediates
    the backward chain needs."""

    def __init__(self, scene: Scene, camera: Camera):
        self.scene = scene
        self.camera = camera
        K = len(scene)
        w_img, h_img = camera.resolution
        R_cw = camera.rotation_matrix()
        self.w_mat = R_cw.T  # world -> camera
        self.t = (scene.means - camera.position) @ R_cw
        depth = self.t[:, 2]
        in_front = depth > NEAR_PLANE_EPS
        z = np.where(in_front, depth, 1.0)
        fx, fy = camera.focal
        self.mean2 = camera.focal * self.t[:, :2] / z[:, None] + camera.principal

        self.rot_mats = quats_to_matrices(scene.rotations) if K else np.zeros((0, 3, 3))
        rs = self.rot_mats * scene.scales[:, None, :]
        self.sigma = rs @ rs.transpose(0, 2, 1)

        J = np.zeros((K, 2, 3))
        J[:, 0, 0] = fx / z
        J[:, 0, 2] = -fx * self.t[:, 0] / z**2
        J[:, 1, 1] = fy / z
        J[:, 1, 2] = -fy * self.t[:, 1] / z**2
        self.jac = J
        self.m_mat = J @ self.w_mat
        cov2 = self.m_mat @ self.sigma @ self.m_mat.transpose(0, 2, 1)
        cov2[:, 0, 0] += BLUR_FLOOR
        cov2[:, 1, 1] += BLUR_FLOOR
        self.cov2 = cov2

        det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
        conics = np.empty((K, 3))
        conics[:, 0] = cov2[:, 1, 1] / det
        conics[:, 1] = -cov2[:, 0, 1] / det
        conics[:, 2] = cov2[:, 0, 0] / det
        self.conics = conics

        rx = 3.0 * np.sqrt(cov2[:, 0, 0])
        ry = 3.0 * np.sqrt(cov2[:, 1, 1])
        bboxes = np.zeros((K, 4), dtype=np.int64)
        if K:
            x0 = np.ceil(self.mean2[:, 0] - rx - 0.5)
            x1 = np.floor(self.mean2[:, 0] + rx - 0.5) + 1
            y0 = np.ceil(self.mean2[:, 1] - ry - 0.5)
            y1 = np.floor(self.mean2[:, 1] + ry - 0.5) + 1
            bboxes[:, 0] = np.clip(x0, 0, w_img)
            bboxes[:, 1] = np.clip(x1, 0, w_img)
            bboxes[:, 2] = np.clip(y0, 0, h_img)
            bboxes[:, 3] = np.clip(y1, 0, h_img)
            bboxes[~in_front] = 0
        self.bboxes = bboxes
        self.depths = np.ascontiguousarray(depth)
        self.mean2 = np.ascontiguousarray(self.mean2)
        self.visible = in_front & (bboxes[:, 0] < bboxes[:, 1]) & (bboxes[:, 2] < bboxes[:, 3])
        # Ascending depth, ties broken by source index (lexsort's last key is
        # primary).
        vis_idx = np.flatnonzero(self.visible)
        self.order = vis_idx[np.lexsort((vis_idx, depth[vis_idx]))].astype(np.int64)

    def splat(self, i: int) -> Optional[Splat2D]:
        if not self.visible[i]:
            return None
        return Splat2D(
            mean2=self.mean2[i].copy(),
            cov2=self.cov2[i].copy(),
            depth=float(self.depths[i]),
            source_index=i,
        )


def project_gaussian(camera: Camera, scene: Scene, index: int) -> Optional[Splat2D]:
    """Project one scene Gaussian; None when culled (behind the near plane
    or its 3-sigma footprint misses the image)."""
    return SplatBatch(scene, camera).splat(index)


def compute_alpha(splat: Splat2D, opacity: float, pixel) -> float:
    """Blend weight of a splat at a pixel position: the capped product of
    opacity and the projected Gaussian."""
    d = np.asarray(pixel, dtype=np.float64) - splat.mean2
    msq = d @ np.linalg.solve(splat.cov2, d)
    return float(min(ALPHA_CAP, opacity * np.exp(-0.5 * msq)))


def render(scene: Scene, camera: Camera, background=(0.0, 0.0, 0.0), batch: Optional[SplatBatch] = None) -> RenderOutput:
    """Render a scene: front-to-back alpha blending over depth-sorted splats.

    Returns the blended color image, the alpha-weighted expected depth map
    (0 where nothing was hit), and per-point contribution pixel counts.
    """
    width, height = camera.resolution
    bg = np.asarray(background, dtype=np.float64)
    if batch is None:
        batch = SplatBatch(scene, camera)
    color, depth_sum, accum, contrib = _kernels.forward(
        batch.mean2,
        batch.conics,
        batch.depths,
        scene.opacities,
        scene.colors,
        batch.order,
        batch.bboxes,
        width,
        height,
        bg,
        ALPHA_CAP,
    )
    depth = depth_sum / np.maximum(accum, DEPTH_ACCUM_EPS)
    return RenderOutput(color=ImageBuffer(color), depth=depth, contributions=contrib)


def _quat_rotation_grads(q: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions, shape (K, 4, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    g = np.empty((q.shape[0], 4, 3, 3))
    g[:, 0] = 2 * np.stack(
        [
            np.stack([zero, -z, y], -1),
            np.stack([z, zero, -x], -1),
            np.stack([-y, x, zero], -1),
        ],
        -2,
    )
    g[:, 1] = 2 * np.stack(
        [
            np.stack([zero, y, z], -1),
            np.stack([y, -2 * x, -w], -1),
            np.stack([z, w, -2 * x], -1),
        ],
        -2,
    )
    g[:, 2] = 2 * np.stack(
        [
            np.stack([-2 * y, x, w], -1),
            np.stack([x, zero, z], -1),
            np.stack([-w, z, -2 * y], -1),
        ],
        -2,
    )
    g[:, 3] = 2 * np.stack(
        [
            np.stack([-2 * z, -w, x], -1),
            np.stack([w, -2 * z, y], -1),
            np.stack([x, y, zero], -1),
        ],
        -2,
    )
    return g


def backward_from_image_gradient(
    scene: Scene,
    camera: Camera,
    grad_image: np.ndarray,
    batch: Optional[SplatBatch] = None,
    contributions: Optional[np.ndarray] = None,
) -> GradientBundle:
    """Chain a dLoss/dimage array back onto all Gaussian parameters."""
    if batch is None:
        batch = SplatBatch(scene, camera)
    if contributions is None:
        contributions = render(scene, camera, batch=batch).contributions
    width, height = camera.resolution
    g_mean2, g_cov2_packed, g_opac, g_color = _kernels.backward(
        batch.mean2,
        batch.conics,
        batch.depths,
        scene.opacities,
        scene.colors,
        batch.order,
        batch.bboxes,
        width,
        height,
        np.zeros(3),
        ALPHA_CAP,
        np.ascontiguousarray(grad_image),
    )
    K = len(scene)
    fx, fy = camera.focal

    g_cov2 = np.empty((K, 2, 2))
    g_cov2[:, 0, 0] = g_cov2_packed[:, 0]
    g_cov2[:, 0, 1] = g_cov2_packed[:, 1]
    g_cov2[:, 1, 0] = g_cov2_packed[:, 1]
    g_cov2[:, 1, 1] = g_cov2_packed[:, 2]

    m_mat = batch.m_mat
    g_sigma = m_mat.transpose(0, 2, 1) @ g_cov2 @ m_mat
    g_m = 2.0 * g_cov2 @ m_mat @ batch.sigma
    g_j = g_m @ batch.w_mat.T

    t = batch.t
    z = np.where(batch.depths > NEAR_PLANE_EPS, batch.depths, 1.0)
    inv_z2 = 1.0 / z**2
    g_t = np.zeros((K, 3))
    g_t[:, 0] = g_j[:, 0, 2] * (-fx * inv_z2) + g_mean2[:, 0] * fx / z
    g_t[:, 1] = g_j[:, 1, 2] * (-fy * inv_z2) + g_mean2[:, 1] * fy / z
    g_t[:, 2] = (
        g_j[:, 0, 0] * (-fx * inv_z2)
        + g_j[:, 0, 2] * (2.0 * fx * t[:, 0] / z**3)
        + g_j[:, 1, 1] * (-fy * inv_z2)
        + g_j[:, 1, 2] * (2.0 * fy * t[:, 1] / z**3)
        - (g_mean2[:, 0] * fx * t[:, 0] + g_mean2[:, 1] * fy * t[:, 1]) * inv_z2
    )
    g_mean = g_t @ batch.w_mat

    # Sigma = R diag(s^2) R^T; log-scale gradient via the diagonal of
    # R^T gSigma R, quaternion gradient via dR/dq then tangent projection.
    rot = batch.rot_mats
    rtgr = rot.transpose(0, 2, 1) @ g_sigma @ rot
    g_logscale = np.einsum("kii->ki", rtgr) * 2.0 * scene.scales**2
    g_rotmat = 2.0 * g_sigma @ (rot * scene.scales[:, None, :] ** 2)
    dr_dq = _quat_rotation_grads(scene.rotations) if K else np.zeros((0, 4, 3, 3))
    g_quat = np.einsum("kqij,kij->kq", dr_dq, g_rotmat)
    radial = np.einsum("kq,kq->k", g_quat, scene.rotations)
    g_quat = g_quat - radial[:, None] * scene.rotations

    screen_mags = np.linalg.norm(g_mean2, axis=1)
    cov2 = batch.cov2
    half_tr = 0.5 * (cov2[:, 0, 0] + cov2[:, 1, 1])
    lam_max = half_tr + np.sqrt(
        np.maximum((0.5 * (cov2[:, 0, 0] - cov2[:, 1, 1])) ** 2 + cov2[:, 0, 1] ** 2, 0.0)
    )
    radii_px = np.where(batch.visible, 3.0 * np.sqrt(lam_max), 0.0)
    return GradientBundle(
        means=g_mean,
        rotations=g_quat,
        scales=g_logscale,
        opacities=g_opac,
        colors=g_color,
        screen_mags=screen_mags,
        radii_px=radii_px,
        contributed=contributions > 0,
        generation=scene.generation,
    )


def backward(
    scene: Scene,
    camera: Camera,
    ground_truth: ImageBuffer,
    spec: LossSpec = LossSpec(),
    background=(0.0, 0.0, 0.0),
) -> GradientBundle:
    """Analytic gradients of the reconstruction loss w.r.t. every Gaussian
    parameter of the scene, for one view."""
    bundle, _, _ = loss_backward(scene, camera, ground_truth, spec, background)
    return bundle


def loss_backward(
    scene: Scene,
    camera: Camera,
    ground_truth: ImageBuffer,
    spec: LossSpec = LossSpec(),
    background=(0.0, 0.0, 0.0),
) -> tuple[GradientBundle, RenderOutput, float]:
    """Render, evaluate the loss, and backpropagate in one pass.

    Returns (bundle, render output, loss value); the training loop uses this
    to avoid rendering twice.
    """
    batch = SplatBatch(scene, camera)
    out = render(scene, camera, background, batch=batch)
    check_same_resolution(out.color, ground_truth)
    value = loss_fn(out.color, ground_truth, spec)
    grad_image = image_loss_gradient(out.color, ground_truth, spec)
    bundle = backward_from_image_gradient(
        scene, camera, grad_image, batch=batch, contributions=out.contributions
    )
    return bundle, out, value
