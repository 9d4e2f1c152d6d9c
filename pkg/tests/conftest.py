import numpy as np
import pytest

from splatpm.core import Camera, Scene


def make_random_scene(rng: np.random.Generator, k: int = 6, *, smooth: bool = False) -> Scene:
    """Random valid scene. With smooth=True the splats are sized so their
    3-sigma cutoff contour falls outside a 16x16 focal-40 image, keeping the
    forward map free of cutoff kinks (required for finite-difference work).
    """
    means = rng.uniform(-0.3, 0.3, (k, 3))
    quats = rng.normal(size=(k, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    if smooth:
        scales = rng.uniform(0.6, 1.0, (k, 3))
        opac = rng.uniform(0.2, 0.9, k)
        # depth separation so sort order is stable under FD perturbations
        means[:, 2] = np.linspace(-0.35, 0.35, k) + rng.uniform(-0.02, 0.02, k)
    else:
        scales = rng.uniform(0.05, 0.5, (k, 3))
        opac = rng.uniform(0.0, 1.0, k)
    colors = rng.uniform(0.1, 0.9, (k, 3))
    return Scene(means=means, rotations=quats, scales=scales, opacities=opac, colors=colors)


def smooth_camera(resolution=(16, 16)) -> Camera:
    return Camera.look_at(position=(0, 0, -3.5), target=(0, 0, 0), focal=40.0, resolution=resolution)


def fd_safe_ground_truth(scene: Scene, camera: Camera, rng: np.random.Generator):
    """Ground truth whose per-pixel residuals are bounded away from zero.

    The L1 term is kinked where render == gt; finite differences are only
    meaningful away from the kink, so the residual is pushed inward by a
    random 0.08..0.2 offset per pixel-channel (far beyond any FD step).
    """
    from splatpm.core import ImageBuffer
    from splatpm.render import render

    base = render(scene, camera).color.data
    amp = rng.uniform(0.08, 0.2, base.shape)
    direction = np.where(base < 0.5, 1.0, -1.0)
    return ImageBuffer(base + direction * amp)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
