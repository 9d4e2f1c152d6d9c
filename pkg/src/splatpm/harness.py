"""Synthetic experiments: scene generation, degraded initialization, the
manager wiring, and end-to-end runs that write reports and image artifacts.

Ground truth is renderer-generated (a reference Gaussian scene rendered by
this same engine), so zero loss is achievable in principle and differences
between management policies are isolated from model mismatch.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adc import AdcParams, densify_and_prune, global_opacity_reset
from .core import Camera, Gaussian3D, ImageBuffer, Scene, save_scene_file
from .errors import ConfigError
from .imageio import grayscale_image, write_ppm
from .lpm import LpmEngine, LpmParams, error_map
from .matching import make_matcher
from .metrics import LossSpec
from .optimize import LearningRates, TrainResult, TrainSchedule, evaluate_views, train
from .render import render

SCHEMA = "splatpm-experiment/1"

OUTPUT_ROOT_ENV = "SPLATPM_OUT_ROOT"

MANAGERS = ("adc", "adc+lpm", "adc-low-tau")


@dataclass(frozen=True)
class SceneSpec:
    count: int = 50
    box_size: float = 2.2
    scale_min: float = 0.04
    scale_max: float = 0.18
    opacity_min: float = 0.5
    opacity_max: float = 1.0

    @property
    def box_diagonal(self) -> float:
        return self.box_size * np.sqrt(3.0)


@dataclass(frozen=True)
class CameraRigSpec:
    count: int = 8
    radius: float = 4.0
    height: float = 1.4
    focal: float = 80.0
    resolution: tuple[int, int] = (64, 64)
    test_every: int = 8


@dataclass(frozen=True)
class OccluderSpec:
    mean: tuple[float, float, float]
    scale: tuple[float, float, float]
    opacity: float = 0.98
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def gaussian(self) -> Gaussian3D:
        return Gaussian3D(
            mean=np.asarray(self.mean, dtype=np.float64),
            rotation=np.array([1.0, 0.0, 0.0, 0.0]),
            scale=np.asarray(self.scale, dtype=np.float64),
            opacity=self.opacity,
            color=np.asarray(self.color, dtype=np.float64),
        )


@dataclass(frozen=True)
class InitSpec:
    keep_fraction: float = 0.2
    noise_sigma: float = 0.05
    drop_indices: tuple[int, ...] = ()
    occluders: tuple[OccluderSpec, ...] = ()

    def __post_init__(self):
        if not (0.0 < self.keep_fraction <= 1.0):
            raise ConfigError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    manager: str = "adc"
    scene: SceneSpec = SceneSpec()
    cameras: CameraRigSpec = CameraRigSpec()
    init: InitSpec = InitSpec()
    schedule: TrainSchedule = TrainSchedule()
    rates: LearningRates = LearningRates()
    loss: LossSpec = LossSpec()
    adc: Optional[AdcParams] = None
    lpm: Optional[LpmParams] = None
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.manager not in MANAGERS:
            raise ConfigError(f"manager must be one of {MANAGERS}, got {self.manager!r}")

    def resolved(self) -> "ExperimentConfig":
        """Fill the derived defaults (thresholds tied to the scene extent)."""
        diag = self.scene.box_diagonal
        adc = self.adc or AdcParams(
            grad_threshold=default_grad_threshold(self.cameras.resolution),
            scale_split_threshold=0.01 * diag,
        )
        lpm = self.lpm or LpmParams(
            local_grad_threshold=adc.grad_threshold / 2.0,
            intersection_tolerance=0.01 * diag,
        )
        if lpm.local_grad_threshold >= adc.grad_threshold:
            raise ConfigError(
                "lpm.local_grad_threshold must sit below adc.grad_threshold "
                f"({lpm.local_grad_threshold} >= {adc.grad_threshold})"
            )
        sched = replace(self.schedule, seed=self.seed)
        return replace(self, adc=adc, lpm=lpm, schedule=sched)

    def to_dict(self) -> dict:
        cfg = self.resolved()
        d = {
            "schema": SCHEMA,
            "seed": cfg.seed,
            "manager": cfg.manager,
            "scene": asdict(cfg.scene),
            "cameras": asdict(cfg.cameras),
            "init": asdict(cfg.init),
            "schedule": asdict(cfg.schedule),
            "rates": asdict(cfg.rates),
            "loss": asdict(cfg.loss),
            "adc": asdict(cfg.adc),
            "lpm": asdict(cfg.lpm),
            "background": list(cfg.background),
            "output_dir": cfg.output_dir,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        schema = d.get("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r} (expected {SCHEMA!r})")
        known = {
            "schema",
            "seed",
            "manager",
            "scene",
            "cameras",
            "init",
            "schedule",
            "rates",
            "loss",
            "adc",
            "lpm",
            "background",
            "output_dir",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def build(cls_, key, post=None):
            sub = d.get(key)
            if sub is None:
                return None
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            sub = dict(sub)
            if post:
                sub = post(sub)
            try:
                return cls_(**sub)
            except TypeError as exc:
                raise ConfigError(f"bad config section {key!r}: {exc}") from exc

        def init_post(sub):
            occ = sub.get("occluders") or ()
            sub["occluders"] = tuple(
                OccluderSpec(
                    mean=tuple(o["mean"]),
                    scale=tuple(o["scale"]),
                    opacity=o.get("opacity", 0.98),
                    color=tuple(o.get("color", (0.5, 0.5, 0.5))),
                )
                for o in occ
            )
            sub["drop_indices"] = tuple(sub.get("drop_indices") or ())
            return sub

        def cam_post(sub):
            if "resolution" in sub:
                sub["resolution"] = tuple(sub["resolution"])
            return sub

        kwargs = {}
        if "seed" in d:
            kwargs["seed"] = int(d["seed"])
        if "manager" in d:
            kwargs["manager"] = d["manager"]
        if "background" in d:
            kwargs["background"] = tuple(d["background"])
        if "output_dir" in d:
            kwargs["output_dir"] = d["output_dir"]
        for key, cls_, post in (
            ("scene", SceneSpec, None),
            ("cameras", CameraRigSpec, cam_post),
            ("init", InitSpec, init_post),
            ("schedule", TrainSchedule, None),
            ("rates", LearningRates, None),
            ("loss", LossSpec, None),
            ("adc", AdcParams, None),
            ("lpm", LpmParams, None),
        ):
            built = build(cls_, key, post)
            if built is not None:
                kwargs[key] = built
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def default_grad_threshold(resolution: tuple[int, int]) -> float:
    """Densification threshold scaled by image diagonal; calibrated so the
    64x64 desk scenes densify their worst ~quarter of points per window."""
    diag = float(np.hypot(*resolution))
    return 1.2e-3 * (90.51 / diag)


def build_camera_ring(spec: CameraRigSpec) -> list[Camera]:
    cams = []
    for k in range(spec.count):
        ang = 2.0 * np.pi * k / spec.count
        pos = np.array([spec.radius * np.cos(ang), spec.radius * np.sin(ang), spec.height])
        cams.append(
            Camera.look_at(
                position=pos,
                target=(0.0, 0.0, 0.0),
                focal=spec.focal,
                resolution=spec.resolution,
            )
        )
    return cams


def generate_scene(
    spec: SceneSpec, rig: CameraRigSpec, seed: int, background=(0.0, 0.0, 0.0)
) -> tuple[Scene, list[Camera], list[ImageBuffer]]:
    """Sample a ground-truth scene, place the camera ring, render the
    reference images."""
    if spec.count < 1:
        raise ConfigError("scene count must be >= 1")
    if rig.count < 2:
        raise ConfigError("need at least 2 cameras")
    rng = np.random.default_rng(seed)
    half = spec.box_size / 2.0
    means = rng.uniform(-half, half, (spec.count, 3))
    quats = rng.normal(size=(spec.count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = rng.uniform(spec.scale_min, spec.scale_max, (spec.count, 3))
    opac = rng.uniform(spec.opacity_min, spec.opacity_max, spec.count)
    colors = rng.uniform(0.05, 0.95, (spec.count, 3))
    scene = Scene(means=means, rotations=quats, scales=scales, opacities=opac, colors=colors)
    cameras = build_camera_ring(rig)
    images = [render(scene, cam, background).color for cam in cameras]
    return scene, cameras, images


def split_views(count: int, test_every: int) -> tuple[list[int], list[int]]:
    """Every test_every-th view (the last of each group) held out for testing."""
    test = [i for i in range(count) if (i + 1) % test_every == 0]
    trainv = [i for i in range(count) if i not in set(test)]
    return trainv, test


def init_scene(gt: Scene, spec: InitSpec, seed: int) -> Scene:
    """Degraded initialization: a random subset of the reference points with
    perturbed means and opacity 0.5, plus any planted occluders verbatim."""
    rng = np.random.default_rng(seed)
    k = len(gt)
    pool = [i for i in range(k) if i not in set(spec.drop_indices)]
    keep_n = int(round(spec.keep_fraction * len(pool)))
    keep_n = max(keep_n, 1)
    chosen = np.sort(rng.permutation(len(pool))[:keep_n])
    idx = np.array(pool, dtype=np.intp)[chosen]
    noise = rng.normal(0.0, 1.0, (len(idx), 3)) * spec.noise_sigma
    scene = Scene(
        means=gt.means[idx] + noise,
        rotations=gt.rotations[idx],
        scales=gt.scales[idx],
        opacities=np.full(len(idx), 0.5),
        colors=gt.colors[idx],
    )
    if spec.occluders:
        extra = Scene.from_gaussians([o.gaussian() for o in spec.occluders])
        scene = Scene(
            means=np.concatenate([scene.means, extra.means]),
            rotations=np.concatenate([scene.rotations, extra.rotations]),
            scales=np.concatenate([scene.scales, extra.scales]),
            opacities=np.concatenate([scene.opacities, extra.opacities]),
            colors=np.concatenate([scene.colors, extra.colors]),
        )
    return scene


def occluder_config(seed: int = 0, manager: str = "adc+lpm") -> tuple[ExperimentConfig, dict]:
    """Desk reproduction of the occlusion/depth pathology.

    Picks a cluster of reference points near the scene center, removes its
    refinement from the init, and plants a high-opacity occluder between
    camera 0 (a training view) and the cluster, camouflage-colored so color
    gradients alone cannot remove it quickly. Management starts early and
    the localized cadence is tight so the policy races the optimizer while
    the pathology is live; both manager arms share the schedule. Returns the
    config plus the construction details (cluster indices, occluder spec).
    """
    base = ExperimentConfig(seed=seed, manager=manager)
    gt, cams, imgs = generate_scene(base.scene, base.cameras, seed, base.background)
    dist_to_center = np.linalg.norm(gt.means, axis=1)
    anchor_idx = int(np.argmin(dist_to_center))
    anchor = gt.means[anchor_idx]
    cluster = np.flatnonzero(np.linalg.norm(gt.means - anchor, axis=1) <= 0.6)
    drop = tuple(int(i) for i in cluster[1:])
    cam0 = cams[0]
    occ_pos = cam0.position + 0.7 * (anchor - cam0.position)
    pix, _, _ = cam0.project_points(occ_pos[None])
    camouflage = imgs[0].data[int(pix[0, 1]), int(pix[0, 0])]
    occ = OccluderSpec(
        mean=tuple(float(v) for v in occ_pos),
        scale=(0.12, 0.12, 0.12),
        opacity=0.98,
        color=tuple(float(c) for c in camouflage),
    )
    init = InitSpec(keep_fraction=1.0, noise_sigma=0.02, drop_indices=drop, occluders=(occ,))
    schedule = TrainSchedule(
        iterations=2000,
        manage_interval=100,
        manage_start=50,
        manage_stop=1500,
        opacity_reset_interval=600,
        lpm_interval=50,
        seed=seed,
    )
    diag = base.scene.box_diagonal
    tau = default_grad_threshold(base.cameras.resolution)
    adc = AdcParams(grad_threshold=tau, scale_split_threshold=0.01 * diag)
    lpm = LpmParams(
        local_grad_threshold=tau / 2.0,
        intersection_tolerance=0.01 * diag,
        front_opacity_threshold=0.7,
    )
    cfg = replace(base, init=init, schedule=schedule, adc=adc, lpm=lpm)
    details = {
        "anchor": anchor.tolist(),
        "cluster": [int(i) for i in cluster],
        "dropped": list(drop),
        "occluder": occ,
        "occluded_view": 0,
    }
    return cfg, details


def occluder_pixel_mask(occ: OccluderSpec, camera: Camera) -> np.ndarray:
    """Pixels covered by the occluder's 3-sigma footprint in this camera."""
    from .render import SplatBatch

    single = Scene.from_gaussians([occ.gaussian()])
    batch = SplatBatch(single, camera)
    w, h = camera.resolution
    mask = np.zeros((h, w), dtype=bool)
    if not batch.visible[0]:
        return mask
    x0, x1, y0, y1 = batch.bboxes[0]
    a, b, c = batch.conics[0]
    xs = np.arange(x0, x1) + 0.5 - batch.mean2[0, 0]
    ys = np.arange(y0, y1) + 0.5 - batch.mean2[0, 1]
    msq = a * xs[None, :] ** 2 + 2 * b * ys[:, None] * xs[None, :] + c * ys[:, None] ** 2
    mask[y0:y1, x0:x1] = msq <= 9.0
    return mask


def region_depth_error(scene: Scene, reference: Scene, camera: Camera, mask: np.ndarray, background=(0.0, 0.0, 0.0)) -> float:
    """Mean absolute difference of the two scenes' depth maps over a pixel set."""
    d_scene = render(scene, camera, background).depth
    d_ref = render(reference, camera, background).depth
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(d_scene[mask] - d_ref[mask])))


class AdcManager:
    """Baseline policy: densify/prune at the management cadence, cap all
    opacities at the reset cadence (both inside the management window)."""

    def __init__(self, params: AdcParams, schedule: TrainSchedule, with_reset: bool = True):
        self.params = params
        self.schedule = schedule
        self.with_reset = with_reset

    def manage(self, scene, stats, state, iteration, view_index, rng):
        if not self.schedule.in_manage_window(iteration):
            return None
        acted = False
        events: list[dict] = []
        if iteration % self.schedule.manage_interval == 0:
            before = len(scene)
            scene, stats, edit = densify_and_prune(scene, stats, self.params, rng)
            state = state.apply_edit(edit, scene.generation)
            events.append(
                {"kind": "adc", "iter": iteration, "points_before": before, "points_after": len(scene)}
            )
            acted = True
        if self.with_reset and iteration % self.schedule.opacity_reset_interval == 0:
            scene = global_opacity_reset(scene, self.params.reset_ceiling)
            stats = stats.with_generation(scene.generation)
            state = state.with_generation(scene.generation)
            events.append({"kind": "opacity_reset", "iter": iteration})
            acted = True
        if not acted:
            return None
        return scene, stats, state, events


class LpmAdcManager:
    """Localized point management layered on the ADC densify cadence; the
    global opacity reset is replaced by LPM's targeted front-point reset."""

    def __init__(
        self,
        engine: LpmEngine,
        adc_params: AdcParams,
        schedule: TrainSchedule,
        focus,
        train_camera_indices: Sequence[int],
        audit: bool = False,
    ):
        self.engine = engine
        self.adc = AdcManager(adc_params, schedule, with_reset=False)
        self.schedule = schedule
        self.focus = np.asarray(focus, dtype=np.float64)
        self.train_camera_indices = list(train_camera_indices)
        self.audit = audit
        self.zone_log: list[dict] = []
        self.skipped: list[dict] = []
        self.audit_records: list[dict] = []

    def manage(self, scene, stats, state, iteration, view_index, rng):
        if not self.schedule.in_manage_window(iteration):
            return None
        acted = False
        events: list[dict] = []
        if iteration % self.schedule.lpm_interval == 0:
            cam_idx = self.train_camera_indices[view_index]
            ref = self.engine.choose_reference(cam_idx, self.focus, self.train_camera_indices)
            if ref is not None:
                result = self.engine.step(scene, stats, cam_idx, ref, iteration, rng, audit=self.audit)
                scene, stats = result.scene, result.stats
                for edit in result.edits:
                    state = state.apply_edit(edit, state.generation)
                state = state.with_generation(scene.generation)
                self.zone_log.extend(result.zone_events)
                self.skipped.extend(result.skipped)
                self.audit_records.extend(result.audit)
                events.extend({"kind": "zone", **ev} for ev in result.zone_events)
                acted = True
        adc_result = self.adc.manage(scene, stats, state, iteration, view_index, rng)
        if adc_result is not None:
            scene, stats, state, adc_events = adc_result
            events.extend(adc_events)
            acted = True
        if not acted:
            return None
        return scene, stats, state, events


@dataclass
class MetricsReport:
    psnr_per_view: list[float]
    ssim_per_view: list[float]
    psnr_mean: float
    ssim_mean: float
    point_count: int
    zones: dict
    wall_clock_seconds: float
    log: list[dict]
    config: dict

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        d = {
            "psnr_per_view": self.psnr_per_view,
            "ssim_per_view": self.ssim_per_view,
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "point_count": self.point_count,
            "zones": self.zones,
            "log": self.log,
            "config": self.config,
        }
        if include_wall_clock:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: MetricsReport
    gt_scene: Scene
    init: Scene
    final: Scene
    cameras: list[Camera]
    gt_images: list[ImageBuffer]
    train_indices: list[int]
    test_indices: list[int]
    zone_log: list[dict]
    audit_records: list[dict]
    train_result: TrainResult


def build_manager(config: ExperimentConfig, gt_scene, cameras, gt_images, train_indices, audit=False):
    cfg = config
    if cfg.manager == "adc":
        return AdcManager(cfg.adc, cfg.schedule, with_reset=True)
    if cfg.manager == "adc-low-tau":
        low = replace(cfg.adc, grad_threshold=cfg.lpm.local_grad_threshold)
        return AdcManager(low, cfg.schedule, with_reset=True)
    matcher = make_matcher(
        cfg.lpm.provider, reference=gt_scene, cameras=cameras, images=gt_images
    )
    engine = LpmEngine(cfg.lpm, cfg.adc, matcher, cameras, gt_images, cfg.background)
    return LpmAdcManager(
        engine, cfg.adc, cfg.schedule, focus=(0.0, 0.0, 0.0), train_camera_indices=train_indices, audit=audit
    )


def run_experiment(
    config: ExperimentConfig, output_dir: Optional[Path] = None, audit: bool = False
) -> ExperimentResult:
    """Generate, initialize, train under the configured manager, evaluate,
    and (optionally) write artifacts."""
    cfg = config.resolved()
    started = time.perf_counter()
    gt_scene, cameras, gt_images = generate_scene(cfg.scene, cfg.cameras, cfg.seed, cfg.background)
    train_idx, test_idx = split_views(cfg.cameras.count, cfg.cameras.test_every)
    init = init_scene(gt_scene, cfg.init, cfg.seed + 1)
    train_views = [(cameras[i], gt_images[i]) for i in train_idx]
    test_views = [(cameras[i], gt_images[i]) for i in test_idx]

    manager = build_manager(cfg, gt_scene, cameras, gt_images, train_idx, audit=audit)
    result = train(
        init,
        train_views,
        cfg.schedule,
        lrs=cfg.rates,
        loss_spec=cfg.loss,
        manager=manager,
        test_views=test_views,
        background=cfg.background,
    )

    scores = evaluate_views(result.scene, test_views, cfg.background)
    psnrs = [float(s[0]) for s in scores]
    ssims = [float(s[1]) for s in scores]
    zone_log = getattr(manager, "zone_log", [])
    audit_records = getattr(manager, "audit_records", [])
    zones_summary = {
        "count": len(zone_log),
        "n_densified": int(sum(z["n_densified"] for z in zone_log)),
        "n_inserted": int(sum(z["n_inserted"] for z in zone_log)),
        "n_reset": int(sum(z["n_reset"] for z in zone_log)),
        "n_pruned": int(sum(z["n_pruned"] for z in zone_log)),
    }
    report = MetricsReport(
        psnr_per_view=psnrs,
        ssim_per_view=ssims,
        psnr_mean=float(np.mean(psnrs)) if psnrs else 0.0,
        ssim_mean=float(np.mean(ssims)) if ssims else 0.0,
        point_count=len(result.scene),
        zones=zones_summary,
        wall_clock_seconds=time.perf_counter() - started,
        log=result.log,
        config=cfg.to_dict(),
    )
    out = ExperimentResult(
        config=cfg,
        report=report,
        gt_scene=gt_scene,
        init=init,
        final=result.scene,
        cameras=cameras,
        gt_images=gt_images,
        train_indices=train_idx,
        test_indices=test_idx,
        zone_log=zone_log,
        audit_records=audit_records,
        train_result=result,
    )
    if output_dir is not None:
        write_artifacts(out, Path(output_dir))
    return out


def resolve_output_dir(path_str: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    p = Path(path_str)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def write_artifacts(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(result.report.to_dict(), fh, indent=2, sort_keys=True)
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in result.report.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    with open(out_dir / "zone_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in result.zone_log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    save_scene_file(result.gt_scene, out_dir / "scene_gt.gs3d")
    save_scene_file(result.init, out_dir / "scene_init.gs3d")
    save_scene_file(result.final, out_dir / "scene_final.gs3d")
    renders = out_dir / "renders"
    renders.mkdir(exist_ok=True)
    depth_scale = 2.0 * cfg.cameras.radius
    for i in result.test_indices:
        cam = result.cameras[i]
        out = render(result.final, cam, cfg.background)
        gt_img = result.gt_images[i]
        write_ppm(renders / f"test_{i}.ppm", out.color)
        write_ppm(renders / f"test_{i}_gt.ppm", gt_img)
        write_ppm(renders / f"test_{i}_depth.ppm", grayscale_image(out.depth, depth_scale))
        emap = error_map(out.color, gt_img)
        write_ppm(renders / f"test_{i}_error.ppm", grayscale_image(emap, max(emap.max(), 1e-9)))
