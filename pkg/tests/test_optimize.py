"""Adam updates and the training loop."""

import numpy as np
import pytest
from conftest import make_random_scene, smooth_camera

from splatpm.adc import SceneEdit
from splatpm.core import Gaussian3D, Scene
from splatpm.errors import InvalidParameterError, StateMismatchError
from splatpm.metrics import LossSpec
from splatpm.optimize import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    LearningRates,
    OptimizerState,
    TrainSchedule,
    adam_step,
    train,
)
from splatpm.render import GradientBundle, render


def zero_bundle(scene, **overrides):
    k = len(scene)
    fields = dict(
        means=np.zeros((k, 3)),
        rotations=np.zeros((k, 4)),
        scales=np.zeros((k, 3)),
        opacities=np.zeros(k),
        colors=np.zeros((k, 3)),
        screen_mags=np.zeros(k),
        radii_px=np.zeros(k),
        contributed=np.zeros(k, dtype=bool),
        generation=scene.generation,
    )
    fields.update(overrides)
    return GradientBundle(**fields)


def scalar_adam_oracle(x0, grads, lr):
    """Textbook Adam on one scalar (test-local oracle)."""
    m = v = 0.0
    x = x0
    for t, g in enumerate(grads, start=1):
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        mhat = m / (1 - ADAM_BETA1**t)
        vhat = v / (1 - ADAM_BETA2**t)
        x -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
    return x


class TestAdamStep:
    def test_zero_gradient_fixed_point(self, rng):
        scene = make_random_scene(rng, 4)
        state = OptimizerState.for_scene(scene, LearningRates(), 100)
        out, new_state = adam_step(scene, zero_bundle(scene), state)
        assert new_state.step == 1
        np.testing.assert_array_equal(out.means, scene.means)
        np.testing.assert_array_equal(out.rotations, scene.rotations)
        np.testing.assert_array_equal(out.scales, scene.scales)
        np.testing.assert_array_equal(out.opacities, scene.opacities)
        np.testing.assert_array_equal(out.colors, scene.colors)

    def test_constant_gradient_matches_scalar_oracle(self, rng):
        """Color uses a constant learning rate: its trajectory under a
        constant injected gradient must match the standalone Adam trace."""
        scene = make_random_scene(rng, 1)
        lrs = LearningRates()
        state = OptimizerState.for_scene(scene, lrs, 100)
        g = 0.37
        steps = 9
        cur = scene
        for _ in range(steps):
            grads = zero_bundle(cur)
            colors = np.zeros((1, 3))
            colors[0, 0] = g
            grads = zero_bundle(cur, colors=colors)
            cur, state = adam_step(cur, grads, state)
        expected = scalar_adam_oracle(scene.colors[0, 0], [g] * steps, lrs.color)
        assert cur.colors[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_mean_lr_decay(self, rng):
        scene = make_random_scene(rng, 1)
        lrs = LearningRates(mean=1.6e-3, mean_final_mult=0.01)
        state = OptimizerState.for_scene(scene, lrs, 1000)
        assert state.mean_lr(0) == pytest.approx(1.6e-3)
        assert state.mean_lr(1000) == pytest.approx(1.6e-5)
        assert state.mean_lr(500) == pytest.approx(1.6e-4)

    def test_opacity_moves_inward_from_extremes(self, rng):
        g = Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(0.1,) * 3, opacity=0.001, color=(1, 1, 1))
        scene = Scene.from_gaussians([g])
        state = OptimizerState.for_scene(scene, LearningRates(), 100)
        # negative dL/dopacity: increasing opacity decreases loss
        grads = zero_bundle(scene, opacities=np.array([-1.0]))
        out, _ = adam_step(scene, grads, state)
        assert 0.001 < out.opacities[0] < 1.0

        g2 = Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(0.1,) * 3, opacity=0.999, color=(1, 1, 1))
        scene2 = Scene.from_gaussians([g2])
        state2 = OptimizerState.for_scene(scene2, LearningRates(), 100)
        out2, _ = adam_step(scene2, zero_bundle(scene2, opacities=np.array([1.0])), state2)
        assert 0.0 < out2.opacities[0] < 0.999

    def test_invariants_preserved(self, rng):
        scene = make_random_scene(rng, 6)
        state = OptimizerState.for_scene(scene, LearningRates(), 100)
        cur = scene
        for _ in range(5):
            grads = zero_bundle(
                cur,
                means=rng.normal(size=(6, 3)),
                rotations=rng.normal(size=(6, 4)),
                scales=rng.normal(size=(6, 3)),
                opacities=rng.normal(size=6),
                colors=rng.normal(size=(6, 3)) * 10,
            )
            cur, state = adam_step(cur, grads, state)
        cur.validate()

    def test_generation_mismatch_rejected(self, rng):
        scene = make_random_scene(rng, 2)
        state = OptimizerState.for_scene(scene, LearningRates(), 10)
        bumped = scene.replace(bump_generation=True)
        with pytest.raises(StateMismatchError):
            adam_step(bumped, zero_bundle(bumped), state)

    def test_apply_edit_resizes(self, rng):
        scene = make_random_scene(rng, 3)
        state = OptimizerState.for_scene(scene, LearningRates(), 10)
        out, state = adam_step(scene, zero_bundle(scene, means=np.ones((3, 3))), state)
        edit = SceneEdit(kept=np.array([1, 2]), added=2)
        resized = state.apply_edit(edit, out.generation + 1)
        assert resized.m["means"].shape == (4, 3)
        np.testing.assert_array_equal(resized.m["means"][0], state.m["means"][1])
        np.testing.assert_array_equal(resized.m["means"][2:], 0.0)


class TestTrainLoop:
    def single_view(self, rng):
        cam = smooth_camera()
        target = make_random_scene(rng, 1, smooth=True)
        gt = render(target, cam).color
        return cam, target, gt

    def test_no_manager_never_grows(self, rng):
        cam, target, gt = self.single_view(rng)
        init = make_random_scene(rng, 3, smooth=True)
        sched = TrainSchedule(iterations=50, manage_interval=10, manage_start=0, manage_stop=0, seed=3)
        result = train(init, [(cam, gt)], sched)
        assert len(result.scene) <= len(init)

    def test_single_gaussian_self_fit_converges(self, rng):
        """A perturbed copy of a one-Gaussian scene refits its own render
        to below 1e-3 loss within 500 iterations."""
        cam, target, gt = self.single_view(rng)
        perturbed = Scene(
            means=target.means + 0.05,
            rotations=target.rotations,
            scales=target.scales * 1.15,
            opacities=np.clip(target.opacities * 0.8, 0.05, 1.0),
            colors=np.clip(target.colors + 0.08, 0, 1),
        )
        sched = TrainSchedule(iterations=500, manage_interval=100, manage_start=0, manage_stop=0, seed=0)
        result = train(perturbed, [(cam, gt)], sched, loss_spec=LossSpec(0.2, 7))
        assert result.log[-1]["loss"] < 1e-3

    def test_deterministic_logs(self, rng):
        cam, target, gt = self.single_view(rng)
        init = make_random_scene(rng, 4, smooth=True)
        sched = TrainSchedule(iterations=60, manage_interval=20, manage_start=0, manage_stop=0, seed=9)
        r1 = train(init, [(cam, gt)], sched, test_views=[(cam, gt)])
        r2 = train(init, [(cam, gt)], sched, test_views=[(cam, gt)])
        assert r1.log == r2.log
        np.testing.assert_array_equal(r1.scene.means, r2.scene.means)

    def test_needs_views(self, rng):
        with pytest.raises(InvalidParameterError):
            train(make_random_scene(rng, 1), [], TrainSchedule(iterations=1, manage_start=0, manage_stop=0))

    def test_schedule_validation(self):
        with pytest.raises(InvalidParameterError):
            TrainSchedule(iterations=10, manage_start=5, manage_stop=3)
        with pytest.raises(InvalidParameterError):
            TrainSchedule(manage_interval=0)
