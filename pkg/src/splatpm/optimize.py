"""Parameter updates and the training loop.

Per-group Adam over the five Gaussian attributes. Opacity is updated through
a logit and scale through a log so their range constraints are structural;
quaternions are renormalized after each step. The loop interleaves a
pluggable point-management policy at its scheduled iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from .adc import GradStats, SceneEdit, accumulate
from .core import Camera, ImageBuffer, Scene
from .errors import InvalidParameterError, StateMismatchError
from .metrics import LossSpec, psnr, ssim
from .render import GradientBundle, loss_backward, render

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15

_LOGIT_CLIP = 1e-7

PARAM_GROUPS = ("means", "rotations", "log_scales", "opacities", "colors")


@dataclass(frozen=True)
class LearningRates:
    """Per-group step sizes; the mean rate decays exponentially to
    `mean * mean_final_mult` over the run."""

    mean: float = 1.6e-3
    mean_final_mult: float = 0.01
    color: float = 2.5e-3
    opacity: float = 5e-2
    log_scale: float = 5e-3
    rotation: float = 1e-3


@dataclass(frozen=True)
class TrainSchedule:
    iterations: int = 2000
    manage_interval: int = 100
    manage_start: int = 300
    manage_stop: int = 1500
    opacity_reset_interval: int = 600
    lpm_interval: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("manage_interval", "opacity_reset_interval", "lpm_interval"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be >= 1")
        if not (0 <= self.manage_start <= self.manage_stop <= self.iterations):
            raise InvalidParameterError(
                f"need manage_start <= manage_stop <= iterations, got "
                f"{self.manage_start}/{self.manage_stop}/{self.iterations}"
            )

    def in_manage_window(self, iteration: int) -> bool:
        return self.manage_start <= iteration <= self.manage_stop


@dataclass(frozen=True)
class OptimizerState:
    """Adam moments per parameter group, kept row-aligned with the scene."""

    m: dict
    v: dict
    step: int
    lrs: LearningRates
    total_steps: int
    generation: int

    @classmethod
    def for_scene(cls, scene: Scene, lrs: LearningRates, total_steps: int) -> "OptimizerState":
        k = len(scene)
        shapes = {
            "means": (k, 3),
            "rotations": (k, 4),
            "log_scales": (k, 3),
            "opacities": (k,),
            "colors": (k, 3),
        }
        return cls(
            m={g: np.zeros(s) for g, s in shapes.items()},
            v={g: np.zeros(s) for g, s in shapes.items()},
            step=0,
            lrs=lrs,
            total_steps=total_steps,
            generation=scene.generation,
        )

    def apply_edit(self, edit: SceneEdit, generation: int) -> "OptimizerState":
        return replace(
            self,
            m={g: edit.apply_rows(a) for g, a in self.m.items()},
            v={g: edit.apply_rows(a) for g, a in self.v.items()},
            generation=generation,
        )

    def with_generation(self, generation: int) -> "OptimizerState":
        return replace(self, generation=generation)

    def mean_lr(self, step: int) -> float:
        frac = min(step / max(self.total_steps, 1), 1.0)
        return self.lrs.mean * self.lrs.mean_final_mult**frac


def _adam_update(m, v, g, step):
    m2 = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
    v2 = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
    mhat = m2 / (1 - ADAM_BETA1**step)
    vhat = v2 / (1 - ADAM_BETA2**step)
    return m2, v2, mhat / (np.sqrt(vhat) + ADAM_EPS)


def adam_step(scene: Scene, grads: GradientBundle, state: OptimizerState) -> tuple[Scene, OptimizerState]:
    """One Adam step over all parameter groups; returns the updated scene
    and state. Zero-moment, zero-gradient entries are bitwise untouched."""
    if state.generation != scene.generation or grads.generation != scene.generation:
        raise StateMismatchError(
            f"generation mismatch: scene {scene.generation}, state {state.generation}, "
            f"grads {grads.generation}"
        )
    step = state.step + 1
    m = dict(state.m)
    v = dict(state.v)

    m["means"], v["means"], d_mean = _adam_update(state.m["means"], state.v["means"], grads.means, step)
    new_means = scene.means - state.mean_lr(step) * d_mean

    m["colors"], v["colors"], d_color = _adam_update(state.m["colors"], state.v["colors"], grads.colors, step)
    new_colors = np.clip(scene.colors - state.lrs.color * d_color, 0.0, 1.0)

    m["log_scales"], v["log_scales"], d_ls = _adam_update(
        state.m["log_scales"], state.v["log_scales"], grads.scales, step
    )
    delta_ls = state.lrs.log_scale * d_ls
    new_scales = np.where(delta_ls == 0.0, scene.scales, np.exp(np.log(scene.scales) - delta_ls))

    alpha = np.clip(scene.opacities, _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
    g_logit = grads.opacities * alpha * (1.0 - alpha)
    m["opacities"], v["opacities"], d_op = _adam_update(
        state.m["opacities"], state.v["opacities"], g_logit, step
    )
    delta_op = state.lrs.opacity * d_op
    logit = np.log(alpha / (1.0 - alpha))
    new_opac = np.where(
        delta_op == 0.0, scene.opacities, 1.0 / (1.0 + np.exp(-(logit - delta_op)))
    )

    m["rotations"], v["rotations"], d_rot = _adam_update(
        state.m["rotations"], state.v["rotations"], grads.rotations, step
    )
    delta_rot = state.lrs.rotation * d_rot
    raw = scene.rotations - delta_rot
    renorm = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    changed = np.any(delta_rot != 0.0, axis=1, keepdims=True)
    new_rot = np.where(changed, renorm, scene.rotations)

    new_scene = scene.replace(
        means=new_means, rotations=new_rot, scales=new_scales, opacities=new_opac, colors=new_colors
    )
    new_state = replace(state, m=m, v=v, step=step)
    return new_scene, new_state


class PointManager(Protocol):
    """Management policy invoked once per training iteration; returns None
    when nothing is due, otherwise the edited (scene, stats, state) plus a
    list of loggable events."""

    def manage(
        self,
        scene: Scene,
        stats: GradStats,
        state: OptimizerState,
        iteration: int,
        view_index: int,
        rng: np.random.Generator,
    ) -> Optional[tuple[Scene, GradStats, OptimizerState, list[dict]]]: ...


@dataclass
class TrainResult:
    scene: Scene
    state: OptimizerState
    stats: GradStats
    log: list[dict]
    events: list[dict]


def evaluate_views(scene: Scene, views: Sequence[tuple[Camera, ImageBuffer]], background=(0.0, 0.0, 0.0)):
    """Per-view (psnr, ssim) of the scene's renders against references."""
    scores = []
    for cam, gt in views:
        out = render(scene, cam, background)
        scores.append((psnr(out.color, gt), ssim(out.color, gt)))
    return scores


def train(
    scene: Scene,
    train_views: Sequence[tuple[Camera, ImageBuffer]],
    schedule: TrainSchedule,
    *,
    lrs: LearningRates = LearningRates(),
    loss_spec: LossSpec = LossSpec(),
    manager: Optional[PointManager] = None,
    test_views: Sequence[tuple[Camera, ImageBuffer]] = (),
    background=(0.0, 0.0, 0.0),
) -> TrainResult:
    """Optimize a scene against its training views.

    Views are visited round-robin (deterministic); the manager runs inside
    the iteration after the Adam step. The log gets one entry per management
    interval with the current loss, point count, and test metrics when test
    views are supplied.
    """
    if not train_views:
        raise InvalidParameterError("train() needs at least one training view")
    rng = np.random.default_rng(schedule.seed)
    state = OptimizerState.for_scene(scene, lrs, schedule.iterations)
    stats = GradStats.for_scene(scene)
    log: list[dict] = []
    events: list[dict] = []

    for it in range(1, schedule.iterations + 1):
        view_index = (it - 1) % len(train_views)
        cam, gt = train_views[view_index]
        bundle, _, loss_val = loss_backward(scene, cam, gt, loss_spec, background)
        stats = accumulate(stats, bundle)
        scene, state = adam_step(scene, bundle, state)

        if manager is not None:
            result = manager.manage(scene, stats, state, it, view_index, rng)
            if result is not None:
                scene, stats, state, new_events = result
                events.extend(new_events)

        if it % schedule.manage_interval == 0 or it == schedule.iterations:
            entry = {"iter": it, "loss": loss_val, "point_count": len(scene)}
            if test_views:
                scores = evaluate_views(scene, test_views, background)
                entry["psnr_test"] = float(np.mean([s[0] for s in scores]))
                entry["ssim_test"] = float(np.mean([s[1] for s in scores]))
            log.append(entry)

    return TrainResult(scene=scene, state=state, stats=stats, log=log, events=events)
