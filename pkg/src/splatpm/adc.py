"""Adaptive density control: the baseline point-management policy.

Accumulates view-averaged positional-gradient statistics, densifies points
above a threshold (clone small ones, split large ones), prunes by opacity,
and periodically caps all opacities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Gaussian3D, Scene, quat_to_matrix
from .errors import InvalidParameterError, StateMismatchError
from .render import GradientBundle

CLONE_STEP_FACTOR = 0.01
SPLIT_SHRINK = 1.0 / 1.6


@dataclass(frozen=True)
class AdcParams:
    """Densify/prune thresholds. `grad_threshold` acts on the view-averaged
    screen-space gradient magnitude; `scale_split_threshold` separates clone
    (small) from split (large) in world units."""

    grad_threshold: float
    scale_split_threshold: float
    prune_opacity: float = 0.005
    split_shrink: float = SPLIT_SHRINK
    split_count: int = 2
    reset_ceiling: float = 0.01

    def __post_init__(self):
        if self.grad_threshold <= 0:
            raise InvalidParameterError("grad_threshold must be positive")
        if not (0.0 < self.prune_opacity < 1.0):
            raise InvalidParameterError("prune_opacity must be in (0, 1)")
        if not (0.0 < self.split_shrink < 1.0):
            raise InvalidParameterError("split_shrink must be in (0, 1)")
        if not (0.0 < self.reset_ceiling < 1.0):
            raise InvalidParameterError("reset_ceiling must be in (0, 1)")


@dataclass(frozen=True)
class SceneEdit:
    """Row bookkeeping of one population edit: surviving old rows (by old
    index, in output order) followed by `added` appended rows. Companion
    arrays (optimizer moments, stats) replay edits with `apply_rows`."""

    kept: np.ndarray
    added: int

    def apply_rows(self, arr: np.ndarray) -> np.ndarray:
        out_shape = (len(self.kept) + self.added,) + arr.shape[1:]
        out = np.zeros(out_shape, dtype=arr.dtype)
        out[: len(self.kept)] = arr[self.kept]
        return out

    @classmethod
    def identity(cls, count: int) -> "SceneEdit":
        return cls(kept=np.arange(count), added=0)


@dataclass(frozen=True)
class GradStats:
    """Per-point accumulators behind the view-averaged densification
    statistic: summed screen-gradient magnitudes and view counts, plus the
    summed 3D positional gradient (clone direction) and the largest projected
    footprint radius seen."""

    grad_accum: np.ndarray
    dir_accum: np.ndarray
    view_count: np.ndarray
    max_radius_px: np.ndarray
    generation: int

    @classmethod
    def for_scene(cls, scene: Scene) -> "GradStats":
        k = len(scene)
        return cls(
            grad_accum=np.zeros(k),
            dir_accum=np.zeros((k, 3)),
            view_count=np.zeros(k, dtype=np.int64),
            max_radius_px=np.zeros(k),
            generation=scene.generation,
        )

    def averaged(self) -> np.ndarray:
        """The view-averaged gradient magnitude; zero for unseen points."""
        return self.grad_accum / np.maximum(self.view_count, 1)

    def apply_edit(self, edit: SceneEdit, generation: int) -> "GradStats":
        return GradStats(
            grad_accum=edit.apply_rows(self.grad_accum),
            dir_accum=edit.apply_rows(self.dir_accum),
            view_count=edit.apply_rows(self.view_count),
            max_radius_px=edit.apply_rows(self.max_radius_px),
            generation=generation,
        )

    def reset_rows(self, rows: np.ndarray) -> "GradStats":
        g = self.grad_accum.copy()
        d = self.dir_accum.copy()
        v = self.view_count.copy()
        r = self.max_radius_px.copy()
        g[rows] = 0.0
        d[rows] = 0.0
        v[rows] = 0
        r[rows] = 0.0
        return replace(self, grad_accum=g, dir_accum=d, view_count=v, max_radius_px=r)

    def with_generation(self, generation: int) -> "GradStats":
        return replace(self, generation=generation)


def accumulate(stats: GradStats, bundle: GradientBundle) -> GradStats:
    """Fold one view's gradients into the running statistics.

    Only points that contributed to at least one pixel are touched."""
    if stats.generation != bundle.generation:
        raise StateMismatchError(
            f"stats generation {stats.generation} != bundle generation {bundle.generation}"
        )
    mask = bundle.contributed
    g = stats.grad_accum.copy()
    d = stats.dir_accum.copy()
    v = stats.view_count.copy()
    r = stats.max_radius_px.copy()
    g[mask] += bundle.screen_mags[mask]
    d[mask] += bundle.means[mask]
    v[mask] += 1
    r[mask] = np.maximum(r[mask], bundle.radii_px[mask])
    return GradStats(g, d, v, r, stats.generation)


def clone_point(g: Gaussian3D, grad_direction) -> tuple[Gaussian3D, Gaussian3D]:
    """Duplicate a small Gaussian, stepping the copy down the gradient by
    1% of its mean scale. A zero gradient leaves the copy in place."""
    direction = np.asarray(grad_direction, dtype=np.float64)
    norm = np.linalg.norm(direction)
    step = CLONE_STEP_FACTOR * float(np.mean(g.scale))
    offset = -step * direction / norm if norm > 0 else np.zeros(3)
    copy = Gaussian3D(
        mean=g.mean + offset,
        rotation=g.rotation,
        scale=g.scale,
        opacity=g.opacity,
        color=g.color,
    )
    return g, copy


def split_point(g: Gaussian3D, rng: np.random.Generator, shrink: float = SPLIT_SHRINK) -> tuple[Gaussian3D, Gaussian3D]:
    """Replace a large Gaussian by two children sampled from its own density,
    each shrunk by the split factor. The caller removes the parent."""
    factor = quat_to_matrix(g.rotation) * g.scale  # R diag(s): covariance square root
    children = []
    for _ in range(2):
        mean = g.mean + factor @ rng.standard_normal(3)
        children.append(
            Gaussian3D(
                mean=mean,
                rotation=g.rotation,
                scale=g.scale * shrink,
                opacity=g.opacity,
                color=g.color,
            )
        )
    return children[0], children[1]


def _densify_rows(
    scene: Scene,
    stats: GradStats,
    threshold: float,
    params: AdcParams,
    rng: np.random.Generator,
    candidate_mask: np.ndarray,
) -> tuple[list[int], list[Gaussian3D], list[int]]:
    """Shared clone/split rule.

    Returns (old indices to drop, new Gaussians to append, densified old
    indices). Clones keep the original and append the copy; splits drop the
    parent and append two children.
    """
    averaged = stats.averaged()
    selected = np.flatnonzero(candidate_mask & (averaged > threshold))
    dropped: list[int] = []
    added: list[Gaussian3D] = []
    for i in selected:
        g = scene.point(int(i))
        if float(np.max(g.scale)) < params.scale_split_threshold:
            _, copy = clone_point(g, stats.dir_accum[i])
            added.append(copy)
        else:
            c1, c2 = split_point(g, rng, params.split_shrink)
            added.extend([c1, c2])
            dropped.append(int(i))
    return dropped, added, [int(i) for i in selected]


def densify_and_prune(
    scene: Scene,
    stats: GradStats,
    params: AdcParams,
    rng: np.random.Generator,
) -> tuple[Scene, GradStats, SceneEdit]:
    """One adaptive-density-control pass: clone/split above the gradient
    threshold, drop points below the opacity floor, reset statistics."""
    if stats.generation != scene.generation:
        raise StateMismatchError(
            f"stats generation {stats.generation} != scene generation {scene.generation}"
        )
    k = len(scene)
    dropped, added, _ = _densify_rows(
        scene, stats, params.grad_threshold, params, rng, np.ones(k, dtype=bool)
    )
    drop_set = set(dropped)
    prune_mask = scene.opacities < params.prune_opacity
    kept = np.array(
        [i for i in range(k) if i not in drop_set and not prune_mask[i]], dtype=np.intp
    )
    added = [g for g in added if g.opacity >= params.prune_opacity]
    new_scene = _rebuild(scene, kept, added, bump=True)
    edit = SceneEdit(kept=kept, added=len(added))
    return new_scene, GradStats.for_scene(new_scene), edit


def _rebuild(scene: Scene, kept: np.ndarray, added: list[Gaussian3D], bump: bool) -> Scene:
    add = Scene.from_gaussians(added) if added else Scene.empty()
    return Scene(
        means=np.concatenate([scene.means[kept], add.means]),
        rotations=np.concatenate([scene.rotations[kept], add.rotations]),
        scales=np.concatenate([scene.scales[kept], add.scales]),
        opacities=np.concatenate([scene.opacities[kept], add.opacities]),
        colors=np.concatenate([scene.colors[kept], add.colors]),
        generation=scene.generation + (1 if bump else 0),
    )


def global_opacity_reset(scene: Scene, ceiling: float = 0.01) -> Scene:
    """Cap every opacity at the ceiling (min rule, so faint points stay put)."""
    if not (0.0 < ceiling < 1.0):
        raise InvalidParameterError(f"ceiling must be in (0, 1), got {ceiling}")
    return scene.replace(
        opacities=np.minimum(scene.opacities, ceiling), bump_generation=True
    )
