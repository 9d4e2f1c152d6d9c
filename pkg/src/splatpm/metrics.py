"""Reconstruction loss and image quality metrics.

The training loss is (1 - lambda) * L1 + lambda * (1 - SSIM) with a uniform
SSIM window; both terms come with analytic image-space gradients so the
splat backward pass can chain through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ImageBuffer, check_same_resolution
from .errors import InvalidInputError, InvalidParameterError

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class LossSpec:
    """Loss weights: (1 - ssim_weight) on mean L1, ssim_weight on (1 - SSIM)."""

    ssim_weight: float = 0.2
    ssim_window: int = 11

    def __post_init__(self):
        if not (0.0 <= self.ssim_weight <= 1.0):
            raise InvalidParameterError(f"ssim_weight {self.ssim_weight} outside [0, 1]")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise InvalidParameterError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")

    @property
    def l1_weight(self) -> float:
        return 1.0 - self.ssim_weight


def _box_sums(a: np.ndarray, w: int) -> np.ndarray:
    """Sums over all w x w windows ('valid' placement) via prefix sums."""
    c = np.cumsum(np.cumsum(a, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def _box_spread(m: np.ndarray, w: int) -> np.ndarray:
    """Adjoint of the valid-window box sum: scatter each window value back
    onto the pixels it covered."""
    return _box_sums(np.pad(m, w - 1), w)


def _ssim_channel_stats(x: np.ndarray, y: np.ndarray, w: int):
    n = w * w
    mu_x = _box_sums(x, w) / n
    mu_y = _box_sums(y, w) / n
    sxx = _box_sums(x * x, w) / n - mu_x * mu_x
    syy = _box_sums(y * y, w) / n - mu_y * mu_y
    sxy = _box_sums(x * y, w) / n - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    return mu_x, mu_y, a1, a2, b1, b2


def ssim(a: ImageBuffer, b: ImageBuffer, window: int = 11) -> float:
    """Mean local SSIM over all valid uniform windows, averaged over channels."""
    check_same_resolution(a, b)
    w, h = a.resolution
    if window < 3 or window % 2 == 0:
        raise InvalidInputError(f"window must be odd and >= 3, got {window}")
    if window > w or window > h:
        raise InvalidInputError(f"window {window} does not fit resolution {a.resolution}")
    total = 0.0
    for ch in range(3):
        _, _, a1, a2, b1, b2 = _ssim_channel_stats(a.data[:, :, ch], b.data[:, :, ch], window)
        total += float(np.mean(a1 * a2 / (b1 * b2)))
    return total / 3.0


def ssim_gradient(x: ImageBuffer, y: ImageBuffer, window: int = 11) -> np.ndarray:
    """d(mean SSIM)/dx as an (H, W, 3) array, y held fixed."""
    check_same_resolution(x, y)
    w = window
    n = w * w
    grad = np.empty_like(x.data)
    npos = (x.data.shape[0] - w + 1) * (x.data.shape[1] - w + 1)
    for ch in range(3):
        xc = x.data[:, :, ch]
        yc = y.data[:, :, ch]
        mu_x, mu_y, a1, a2, b1, b2 = _ssim_channel_stats(xc, yc, w)
        s = a1 * a2 / (b1 * b2)
        ds_dmu = 2 * (mu_y * a2 * b1 - mu_x * a1 * a2) / (b1 * b1 * b2)
        ds_dsxx = -s / b2
        ds_dsxy = 2 * a1 / (b1 * b2)
        grad[:, :, ch] = (
            _box_spread(ds_dmu, w)
            + 2 * xc * _box_spread(ds_dsxx, w)
            - 2 * _box_spread(ds_dsxx * mu_x, w)
            + yc * _box_spread(ds_dsxy, w)
            - _box_spread(ds_dsxy * mu_y, w)
        ) / (n * npos * 3)
    return grad


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 100."""
    check_same_resolution(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def loss(render: ImageBuffer, gt: ImageBuffer, spec: LossSpec = LossSpec()) -> float:
    """Weighted L1 + DSSIM reconstruction loss."""
    check_same_resolution(render, gt)
    value = spec.l1_weight * float(np.mean(np.abs(render.data - gt.data)))
    if spec.ssim_weight > 0:
        value += spec.ssim_weight * (1.0 - ssim(render, gt, spec.ssim_window))
    return value


def image_loss_gradient(render: ImageBuffer, gt: ImageBuffer, spec: LossSpec = LossSpec()) -> np.ndarray:
    """dLoss/drender, (H, W, 3). Uses sign(0) = 0 for the L1 term."""
    check_same_resolution(render, gt)
    if np.array_equal(render.data, gt.data):
        # Exact loss minimum: both terms have an exactly-zero (sub)gradient.
        return np.zeros_like(render.data)
    grad = spec.l1_weight * np.sign(render.data - gt.data) / render.data.size
    if spec.ssim_weight > 0:
        grad -= spec.ssim_weight * ssim_gradient(render, gt, spec.ssim_window)
    return grad
