"""Adaptive density control: stats accumulation, clone/split, prune, reset."""

import numpy as np
import pytest
from conftest import make_random_scene

from splatpm.adc import (
    AdcParams,
    GradStats,
    SceneEdit,
    accumulate,
    clone_point,
    densify_and_prune,
    global_opacity_reset,
    split_point,
)
from splatpm.core import Gaussian3D, Scene, build_covariance
from splatpm.errors import StateMismatchError
from splatpm.render import GradientBundle


def make_bundle(scene, mags, contributed=None, means=None):
    k = len(scene)
    return GradientBundle(
        means=means if means is not None else np.zeros((k, 3)),
        rotations=np.zeros((k, 4)),
        scales=np.zeros((k, 3)),
        opacities=np.zeros(k),
        colors=np.zeros((k, 3)),
        screen_mags=np.asarray(mags, dtype=np.float64),
        radii_px=np.zeros(k),
        contributed=(
            np.asarray(contributed) if contributed is not None else np.ones(k, dtype=bool)
        ),
        generation=scene.generation,
    )


def default_params(**kw):
    base = dict(grad_threshold=1.0, scale_split_threshold=0.5)
    base.update(kw)
    return AdcParams(**base)


class TestAccumulate:
    def test_no_contribution_untouched(self, rng):
        scene = make_random_scene(rng, 3)
        stats = GradStats.for_scene(scene)
        contributed = np.array([True, False, True])
        stats = accumulate(stats, make_bundle(scene, [0.2, 0.9, 0.4], contributed))
        assert stats.grad_accum[1] == 0.0
        assert stats.view_count[1] == 0
        assert stats.view_count[0] == 1

    def test_two_view_mean(self, rng):
        scene = make_random_scene(rng, 1)
        stats = GradStats.for_scene(scene)
        stats = accumulate(stats, make_bundle(scene, [0.2]))
        stats = accumulate(stats, make_bundle(scene, [0.4]))
        assert stats.averaged()[0] == pytest.approx(0.3)

    def test_constant_average(self, rng):
        scene = make_random_scene(rng, 1)
        stats = GradStats.for_scene(scene)
        for _ in range(7):
            stats = accumulate(stats, make_bundle(scene, [0.05]))
        assert stats.averaged()[0] == pytest.approx(0.05)

    def test_footprint_radius_tracks_max(self, rng):
        scene = make_random_scene(rng, 2)
        stats = GradStats.for_scene(scene)
        b1 = make_bundle(scene, [0.1, 0.1])
        b1 = GradientBundle(**{**b1.__dict__, "radii_px": np.array([3.0, 8.0])})
        b2 = make_bundle(scene, [0.1, 0.1])
        b2 = GradientBundle(**{**b2.__dict__, "radii_px": np.array([5.0, 2.0])})
        stats = accumulate(accumulate(stats, b1), b2)
        np.testing.assert_array_equal(stats.max_radius_px, [5.0, 8.0])

    def test_generation_mismatch_rejected(self, rng):
        scene = make_random_scene(rng, 2)
        stats = GradStats.for_scene(scene)
        stale = make_bundle(scene.replace(bump_generation=True), [0.1, 0.1])
        with pytest.raises(StateMismatchError):
            accumulate(stats, stale)


class TestClonePoint:
    def test_placement_rule(self):
        g = Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(1, 1, 1), opacity=0.5, color=(0.5, 0.5, 0.5))
        original, copy = clone_point(g, (1.0, 0.0, 0.0))
        np.testing.assert_array_equal(original.mean, [0, 0, 0])
        np.testing.assert_allclose(copy.mean, [-0.01, 0, 0], atol=1e-15)

    def test_zero_gradient_exact_duplicate(self):
        g = Gaussian3D(mean=(1, 2, 3), rotation=(1, 0, 0, 0), scale=(0.2, 0.2, 0.2), opacity=0.7, color=(1, 0, 0))
        _, copy = clone_point(g, (0.0, 0.0, 0.0))
        np.testing.assert_array_equal(copy.mean, g.mean)

    def test_outputs_valid(self, rng):
        for _ in range(10):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            g = Gaussian3D(mean=rng.normal(size=3), rotation=q, scale=rng.uniform(0.1, 1, 3),
                           opacity=rng.uniform(0, 1), color=rng.uniform(0, 1, 3))
            a, b = clone_point(g, rng.normal(size=3))
            assert a.opacity == b.opacity == g.opacity


class TestSplitPoint:
    def test_scale_shrink_exact(self, rng):
        g = Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(0.8, 0.8, 0.8), opacity=0.6, color=(0, 1, 0))
        c1, c2 = split_point(g, np.random.default_rng(0))
        np.testing.assert_array_equal(c1.scale, g.scale * (1 / 1.6))
        np.testing.assert_array_equal(c2.scale, g.scale * (1 / 1.6))

    def test_deterministic_under_seed(self):
        g = Gaussian3D(mean=(1, 0, 0), rotation=(1, 0, 0, 0), scale=(0.5, 0.3, 0.2), opacity=0.6, color=(0, 1, 0))
        a1, a2 = split_point(g, np.random.default_rng(42))
        b1, b2 = split_point(g, np.random.default_rng(42))
        np.testing.assert_array_equal(a1.mean, b1.mean)
        np.testing.assert_array_equal(a2.mean, b2.mean)

    def test_children_sampled_from_parent_density(self, rng):
        """Monte Carlo: the empirical covariance of child means approaches
        the parent covariance."""
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        g = Gaussian3D(mean=(0.5, -0.2, 1.0), rotation=q, scale=(0.6, 0.3, 0.15), opacity=0.5, color=(1, 1, 1))
        gen = np.random.default_rng(7)
        samples = []
        for _ in range(10_000):
            c1, c2 = split_point(g, gen)
            samples.extend([c1.mean, c2.mean])
        emp = np.cov(np.array(samples).T, bias=True)
        expected = build_covariance(g.rotation, g.scale)
        np.testing.assert_allclose(emp, expected, rtol=0.1, atol=0.01)


class TestDensifyAndPrune:
    def scene_and_stats(self, rng, k=4):
        scene = make_random_scene(rng, k)
        stats = GradStats.for_scene(scene)
        return scene, stats

    def test_noop_below_thresholds(self, rng):
        scene, stats = self.scene_and_stats(rng)
        opac = np.clip(scene.opacities, 0.1, 1.0)
        scene = scene.replace(opacities=opac)
        stats = GradStats.for_scene(scene)
        stats = accumulate(stats, make_bundle(scene, [0.1] * 4))
        out, out_stats, edit = densify_and_prune(scene, stats, default_params(), np.random.default_rng(0))
        assert len(out) == len(scene)
        np.testing.assert_array_equal(out.means, scene.means)
        assert np.all(out_stats.grad_accum == 0)

    def test_small_point_cloned(self, rng):
        g = Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(0.1, 0.1, 0.1), opacity=0.9, color=(1, 0, 0))
        scene = Scene.from_gaussians([g])
        stats = accumulate(GradStats.for_scene(scene), make_bundle(scene, [2.0], means=np.ones((1, 3))))
        out, _, edit = densify_and_prune(scene, stats, default_params(), np.random.default_rng(0))
        assert len(out) == 2
        assert edit.added == 1
        np.testing.assert_array_equal(edit.kept, [0])

    def test_large_point_split(self, rng):
        g = Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(0.9, 0.9, 0.9), opacity=0.9, color=(1, 0, 0))
        scene = Scene.from_gaussians([g])
        stats = accumulate(GradStats.for_scene(scene), make_bundle(scene, [2.0]))
        out, _, edit = densify_and_prune(scene, stats, default_params(), np.random.default_rng(0))
        assert len(out) == 2  # parent replaced by two children
        assert edit.added == 2
        assert len(edit.kept) == 0
        np.testing.assert_allclose(out.scales, 0.9 / 1.6)

    def test_low_opacity_pruned(self, rng):
        gs = [
            Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(0.1,) * 3, opacity=0.001, color=(1, 1, 1)),
            Gaussian3D(mean=(1, 0, 0), rotation=(1, 0, 0, 0), scale=(0.1,) * 3, opacity=0.8, color=(1, 1, 1)),
        ]
        scene = Scene.from_gaussians(gs)
        stats = accumulate(GradStats.for_scene(scene), make_bundle(scene, [0, 0]))
        out, _, edit = densify_and_prune(scene, stats, default_params(), np.random.default_rng(0))
        assert len(out) == 1
        np.testing.assert_array_equal(edit.kept, [1])

    def test_point_count_bookkeeping(self, rng):
        for trial in range(10):
            scene = make_random_scene(rng, 8)
            stats = GradStats.for_scene(scene)
            mags = rng.uniform(0, 2, 8)
            stats = accumulate(stats, make_bundle(scene, mags, means=rng.normal(size=(8, 3))))
            params = default_params(grad_threshold=1.0, scale_split_threshold=0.3)
            tau_hit = stats.averaged() > params.grad_threshold
            small = scene.scales.max(axis=1) < params.scale_split_threshold
            clones = int(np.sum(tau_hit & small))
            splits = int(np.sum(tau_hit & ~small))
            out, _, _ = densify_and_prune(scene, stats, params, np.random.default_rng(trial))
            pruned_old = int(np.sum((scene.opacities < params.prune_opacity) & ~(tau_hit & ~small)))
            # splits net +1; clones +1; low-opacity originals (not split away) removed
            expected = len(scene) + clones + splits - pruned_old
            # cloned/split children inherit opacity and may be pruned too
            child_opac = np.concatenate(
                [np.repeat(scene.opacities[tau_hit & small], 1), np.repeat(scene.opacities[tau_hit & ~small], 2)]
            )
            expected -= int(np.sum(child_opac < params.prune_opacity))
            assert len(out) == expected

    def test_identity_with_infinite_threshold(self, rng):
        scene = make_random_scene(rng, 6)
        scene = scene.replace(opacities=np.clip(scene.opacities, 0.01, 1.0))
        stats = accumulate(GradStats.for_scene(scene), make_bundle(scene, rng.uniform(0, 1, 6)))
        params = AdcParams(grad_threshold=np.inf, scale_split_threshold=0.5, prune_opacity=1e-9)
        out, _, _ = densify_and_prune(scene, stats, params, np.random.default_rng(0))
        np.testing.assert_array_equal(out.means, scene.means)

    def test_invariants_preserved(self, rng):
        scene = make_random_scene(rng, 10)
        stats = accumulate(GradStats.for_scene(scene), make_bundle(scene, rng.uniform(0, 3, 10), means=rng.normal(size=(10, 3))))
        out, _, _ = densify_and_prune(scene, stats, default_params(grad_threshold=0.5), np.random.default_rng(1))
        out.validate()


class TestGlobalOpacityReset:
    def test_min_rule(self):
        gs = [
            Gaussian3D(mean=(0, 0, 0), rotation=(1, 0, 0, 0), scale=(0.1,) * 3, opacity=0.9, color=(1, 1, 1)),
            Gaussian3D(mean=(1, 0, 0), rotation=(1, 0, 0, 0), scale=(0.1,) * 3, opacity=0.005, color=(1, 1, 1)),
        ]
        out = global_opacity_reset(Scene.from_gaussians(gs), 0.01)
        np.testing.assert_allclose(out.opacities, [0.01, 0.005])

    def test_fixed_point(self, rng):
        scene = make_random_scene(rng, 4)
        low = scene.replace(opacities=np.full(4, 0.002))
        out = global_opacity_reset(low, 0.01)
        np.testing.assert_array_equal(out.opacities, low.opacities)

    def test_idempotent(self, rng):
        scene = make_random_scene(rng, 5)
        once = global_opacity_reset(scene, 0.01)
        twice = global_opacity_reset(once, 0.01)
        np.testing.assert_array_equal(once.opacities, twice.opacities)

    def test_generation_bumped(self, rng):
        scene = make_random_scene(rng, 3)
        assert global_opacity_reset(scene, 0.01).generation == scene.generation + 1


class TestSceneEdit:
    def test_apply_rows(self):
        edit = SceneEdit(kept=np.array([2, 0]), added=2)
        arr = np.array([[1.0], [2.0], [3.0]])
        out = edit.apply_rows(arr)
        np.testing.assert_array_equal(out, [[3.0], [1.0], [0.0], [0.0]])
