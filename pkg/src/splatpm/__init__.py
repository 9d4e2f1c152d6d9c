"""CPU differentiable 3D Gaussian splatting with localized point management."""

from ._kernels import BACKEND as kernel_backend
from .core import (
    Camera,
    Gaussian3D,
    ImageBuffer,
    Scene,
    build_covariance,
    gaussian_density,
    load_scene_file,
    load_scene_text,
    project_point,
    save_scene_file,
    save_scene_text,
)
from .geometry import (
    Cone,
    Ray,
    Sphere,
    cone_rays,
    min_enclosing_circle,
    min_enclosing_sphere,
    ray_closest_points,
)
from .metrics import LossSpec, loss, psnr, ssim
from .render import GradientBundle, RenderOutput, Splat2D, backward, compute_alpha, project_gaussian, render

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "Cone",
    "Gaussian3D",
    "GradientBundle",
    "ImageBuffer",
    "LossSpec",
    "Ray",
    "RenderOutput",
    "Scene",
    "Splat2D",
    "Sphere",
    "backward",
    "build_covariance",
    "compute_alpha",
    "cone_rays",
    "gaussian_density",
    "kernel_backend",
    "load_scene_file",
    "load_scene_text",
    "loss",
    "min_enclosing_circle",
    "min_enclosing_sphere",
    "project_gaussian",
    "project_point",
    "psnr",
    "ray_closest_points",
    "render",
    "save_scene_file",
    "save_scene_text",
    "ssim",
]
