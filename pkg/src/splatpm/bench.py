"""Benchmark of the kernel backends on a representative render workload."""

from __future__ import annotations

import time

import numpy as np

from . import _kernels
from .core import Camera, Scene
from .render import ALPHA_CAP, SplatBatch


def _workload(points: int, width: int, height: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    means = rng.uniform(-1.0, 1.0, (points, 3))
    quats = rng.normal(size=(points, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scene = Scene(
        means=means,
        rotations=quats,
        scales=rng.uniform(0.04, 0.2, (points, 3)),
        opacities=rng.uniform(0.1, 0.95, points),
        colors=rng.uniform(0.0, 1.0, (points, 3)),
    )
    camera = Camera.look_at(position=(4.0, 0.0, 1.4), target=(0, 0, 0), focal=80.0, resolution=(width, height))
    batch = SplatBatch(scene, camera)
    grad = rng.normal(size=(height, width, 3)) / (width * height)
    args = (
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
    )
    return args, np.ascontiguousarray(grad)


def _time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(points: int = 300, width: int = 64, height: int = 64, repeats: int = 20) -> str:
    args, grad = _workload(points, width, height)
    lines = [
        f"splat kernel benchmark: {points} points, {width}x{height}, best of {repeats}",
        f"{'backend':<10} {'forward ms':>12} {'backward ms':>12}",
    ]
    timings = {}
    for name, (fwd, bwd) in sorted(_kernels.BACKENDS.items()):
        t_f = _time(lambda: fwd(*args), repeats) * 1e3
        t_b = _time(lambda: bwd(*args, grad), repeats) * 1e3
        timings[name] = (t_f, t_b)
        lines.append(f"{name:<10} {t_f:>12.3f} {t_b:>12.3f}")
    if {"python", "compiled"} <= set(timings):
        f_ratio = timings["python"][0] / timings["compiled"][0]
        b_ratio = timings["python"][1] / timings["compiled"][1]
        lines.append(f"speedup (python/compiled): forward x{f_ratio:.1f}, backward x{b_ratio:.1f}")
    if "compiled" not in timings:
        lines.append("compiled backend unavailable (run `python setup.py build_ext --inplace`)")
    return "\n".join(lines)
