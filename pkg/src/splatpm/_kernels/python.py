"""Pure-numpy splatting kernels (fallback backend).

Splats are processed in ascending depth; every pixel therefore sees its own
overlapping splats in depth order, which makes the vectorized per-splat
sweep equivalent to a per-pixel front-to-back blend. The compiled backend
implements the same operation order splat-by-splat.
"""

from __future__ import annotations

import numpy as np

# Influence cutoff: alpha is exactly zero beyond 3 sigma (squared Mahalanobis
# distance 9) in the forward and backward passes alike.
CUTOFF_MSQ = 9.0


def _pixel_axes(width: int, height: int):
    return np.arange(width) + 0.5, np.arange(height) + 0.5


def forward(
    means2: np.ndarray,
    conics: np.ndarray,
    depths: np.ndarray,
    opacities: np.ndarray,
    colors: np.ndarray,
    order: np.ndarray,
    bboxes: np.ndarray,
    width: int,
    height: int,
    background: np.ndarray,
    alpha_cap: float,
):
    """Front-to-back alpha blend of depth-sorted splats.

    Returns (color (H,W,3), depth_sum (H,W), accum_alpha (H,W),
    contrib (K,) int64). depth_sum is the unnormalized alpha-weighted depth.
    """
    xs, ys = _pixel_axes(width, height)
    color = np.zeros((height, width, 3))
    depth_sum = np.zeros((height, width))
    accum = np.zeros((height, width))
    transmit = np.ones((height, width))
    contrib = np.zeros(means2.shape[0], dtype=np.int64)

    for k in order:
        x0, x1, y0, y1 = bboxes[k]
        if x0 >= x1 or y0 >= y1:
            continue
        dx = xs[x0:x1] - means2[k, 0]
        dy = ys[y0:y1] - means2[k, 1]
        a, b, c = conics[k]
        msq = a * dx[None, :] ** 2 + 2.0 * b * dy[:, None] * dx[None, :] + c * dy[:, None] ** 2
        alpha = np.minimum(alpha_cap, opacities[k] * np.exp(-0.5 * msq))
        alpha[msq > CUTOFF_MSQ] = 0.0
        active = alpha > 0.0
        if not active.any():
            continue
        contrib[k] = int(np.count_nonzero(active))
        t_tile = transmit[y0:y1, x0:x1]
        w = alpha * t_tile
        color[y0:y1, x0:x1] += w[:, :, None] * colors[k]
        depth_sum[y0:y1, x0:x1] += w * depths[k]
        accum[y0:y1, x0:x1] += w
        transmit[y0:y1, x0:x1] = t_tile * (1.0 - alpha)

    color += background * transmit[:, :, None]
    return color, depth_sum, accum, contrib


def backward(
    means2: np.ndarray,
    conics: np.ndarray,
    depths: np.ndarray,
    opacities: np.ndarray,
    colors: np.ndarray,
    order: np.ndarray,
    bboxes: np.ndarray,
    width: int,
    height: int,
    background: np.ndarray,
    alpha_cap: float,
    grad_image: np.ndarray,
):
    """Adjoint of `forward` w.r.t. the blended color image.

    Returns per-splat gradients (grad_mean2 (K,2), grad_cov2 (K,3) packed as
    the (xx, xy, yy) entries of the symmetric 2x2 gradient, grad_opac (K,),
    grad_color (K,3)). Pixels beyond the cutoff and splats whose alpha hit
    the cap contribute no alpha-path gradient, matching the forward exactly.
    """
    xs, ys = _pixel_axes(width, height)
    k_total = means2.shape[0]
    grad_mean2 = np.zeros((k_total, 2))
    grad_cov2 = np.zeros((k_total, 3))
    grad_opac = np.zeros(k_total)
    grad_color = np.zeros((k_total, 3))

    # Sweep 1: final transmittance per pixel.
    transmit = np.ones((height, width))
    tiles = {}
    for k in order:
        x0, x1, y0, y1 = bboxes[k]
        if x0 >= x1 or y0 >= y1:
            continue
        dx = xs[x0:x1] - means2[k, 0]
        dy = ys[y0:y1] - means2[k, 1]
        a, b, c = conics[k]
        msq = a * dx[None, :] ** 2 + 2.0 * b * dy[:, None] * dx[None, :] + c * dy[:, None] ** 2
        gval = np.exp(-0.5 * msq)
        alpha = np.minimum(alpha_cap, opacities[k] * gval)
        alpha[msq > CUTOFF_MSQ] = 0.0
        tiles[int(k)] = (dx, dy, msq, gval, alpha)
        transmit[y0:y1, x0:x1] *= 1.0 - alpha

    # Sweep 2: back-to-front, recovering each splat's transmittance by
    # dividing its own (1 - alpha) back out.
    suffix = background * transmit[:, :, None]
    t_run = transmit
    for k in order[::-1]:
        x0, x1, y0, y1 = bboxes[k]
        if x0 >= x1 or y0 >= y1:
            continue
        dx, dy, msq, gval, alpha = tiles[int(k)]
        a, b, c = conics[k]
        active = alpha > 0.0
        if not active.any():
            continue
        t_tile = t_run[y0:y1, x0:x1] / (1.0 - alpha)
        t_run[y0:y1, x0:x1] = t_tile
        w = np.where(active, alpha * t_tile, 0.0)
        g_tile = grad_image[y0:y1, x0:x1]
        grad_color[k] = np.einsum("yxc,yx->c", g_tile, w)
        s_tile = suffix[y0:y1, x0:x1]
        d_alpha = np.einsum(
            "yxc,yxc->yx", g_tile, colors[k] * t_tile[:, :, None] - s_tile / (1.0 - alpha[:, :, None])
        )
        diff = active & (opacities[k] * gval < alpha_cap)
        d_alpha = np.where(diff, d_alpha, 0.0)
        grad_opac[k] = np.sum(d_alpha * gval)
        v0 = a * dx[None, :] + b * dy[:, None]
        v1 = b * dx[None, :] + c * dy[:, None]
        coef = d_alpha * alpha
        grad_mean2[k, 0] = np.sum(coef * v0)
        grad_mean2[k, 1] = np.sum(coef * v1)
        grad_cov2[k, 0] = 0.5 * np.sum(coef * v0 * v0)
        grad_cov2[k, 1] = 0.5 * np.sum(coef * v0 * v1)
        grad_cov2[k, 2] = 0.5 * np.sum(coef * v1 * v1)
        suffix[y0:y1, x0:x1] = s_tile + w[:, :, None] * colors[k]

    return grad_mean2, grad_cov2, grad_opac, grad_color
