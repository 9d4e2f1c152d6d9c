"""Localized point management.

Pipeline per step: render-error map -> connected high-error regions ->
cross-view region pairing via a correspondence provider -> cone casting and
ray intersection to identify an error-contributing 3D zone -> localized
densification, sparse-zone center insertion, front-point opacity reset, and
density-aware pruning inside that zone only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adc import AdcParams, GradStats, SceneEdit, _densify_rows, _rebuild
from .core import Camera, Gaussian3D, ImageBuffer, Scene, check_same_resolution
from .errors import InvalidParameterError
from .geometry import Cone, Sphere, cone_rays, min_enclosing_circle, min_enclosing_sphere, pairwise_ray_midpoints, triangulation_angle_deg
from .matching import Correspondence
from .render import render


@dataclass(frozen=True)
class LpmParams:
    """Knobs of the localized pipeline. `local_grad_threshold` must sit below
    the global densification threshold; `intersection_tolerance` is the
    ray-pair acceptance distance in world units."""

    local_grad_threshold: float
    intersection_tolerance: float
    error_sigma: float = 2.0
    min_region_area: int = 4
    max_regions: int = 4
    min_support: int = 3
    min_midpoints: int = 4
    min_triangulation_deg: float = 2.0
    sparsity_floor: int = 2
    front_opacity_threshold: float = 0.9
    reset_ceiling: float = 0.01
    density_target: int = 64
    ray_cap: int = 256
    provider: str = "ground-truth"
    error_metric: str = "mae"

    def __post_init__(self):
        if self.local_grad_threshold <= 0:
            raise InvalidParameterError("local_grad_threshold must be positive")
        if self.intersection_tolerance <= 0:
            raise InvalidParameterError("intersection_tolerance must be positive")
        if self.min_region_area < 1 or self.max_regions < 1 or self.min_support < 1:
            raise InvalidParameterError("region/support parameters must be >= 1")
        if not (0 < self.front_opacity_threshold < 1) or not (0 < self.reset_ceiling < 1):
            raise InvalidParameterError("opacity thresholds must be in (0, 1)")
        if self.error_metric not in ("mae", "mse"):
            raise InvalidParameterError(f"error_metric must be 'mae' or 'mse', got {self.error_metric!r}")


@dataclass(frozen=True)
class ErrorRegion:
    """A 4-connected high-error pixel component. `circle_center`/`radius`
    describe the smallest circle around the pixel centers; `centroid` is the
    pixel-center mass center."""

    pixels: np.ndarray
    centroid: np.ndarray
    circle_center: np.ndarray
    radius: float
    mean_error: float

    @property
    def area(self) -> int:
        return self.pixels.shape[0]

    def contains_position(self, pos) -> bool:
        return float(np.linalg.norm(np.asarray(pos, dtype=np.float64) - self.circle_center)) <= self.radius


@dataclass(frozen=True)
class RegionPair:
    region_a: ErrorRegion
    region_b: ErrorRegion
    support: int


@dataclass(frozen=True)
class Zone:
    """An error-contributing sphere in world space."""

    sphere: Sphere
    view_id: int
    iteration: int

    @property
    def center(self) -> np.ndarray:
        return self.sphere.center

    @property
    def radius(self) -> float:
        return self.sphere.radius


def error_map(rendered: ImageBuffer, gt: ImageBuffer, metric: str = "mae") -> np.ndarray:
    """Per-pixel rendering error, (H, W): channel-mean absolute difference
    by default, squared difference with metric='mse'."""
    check_same_resolution(rendered, gt)
    diff = rendered.data - gt.data
    if metric == "mse":
        return np.mean(diff * diff, axis=2)
    return np.mean(np.abs(diff), axis=2)


def extract_regions(
    emap: np.ndarray,
    threshold: Optional[float] = None,
    min_area: int = 4,
    max_regions: int = 4,
    error_sigma: float = 2.0,
) -> list[ErrorRegion]:
    """4-connected components above the threshold, largest mean error first.

    The default threshold is mean + error_sigma * std of the map."""
    if threshold is None:
        threshold = float(emap.mean() + error_sigma * emap.std())
    h, w = emap.shape
    mask = emap > threshold
    seen = np.zeros_like(mask, dtype=bool)
    regions: list[tuple[float, int, ErrorRegion]] = []
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            queue = deque([(sx, sy)])
            seen[sy, sx] = True
            comp = []
            while queue:
                x, y = queue.popleft()
                comp.append((x, y))
                for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
                    if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((nx, ny))
            if len(comp) < min_area:
                continue
            pixels = np.array(comp, dtype=np.int64)
            centers = pixels + 0.5
            center, radius = min_enclosing_circle(centers)
            mean_err = float(emap[pixels[:, 1], pixels[:, 0]].mean())
            regions.append(
                (mean_err, sy * w + sx, ErrorRegion(pixels, centers.mean(axis=0), center, radius, mean_err))
            )
    regions.sort(key=lambda t: (-t[0], t[1]))
    return [r for _, _, r in regions[:max_regions]]


def pair_region(region: ErrorRegion, matches: Correspondence, min_support: int = 3) -> Optional[RegionPair]:
    """Map a region into the reference view through the match set.

    Matches whose view-A position falls inside the region's circumscribed
    circle (closed) vote; with enough support the mapped region is the disk
    of the same radius around the mean mapped position."""
    if len(matches) == 0:
        return None
    a_px = matches.pixels_a()
    inside = np.linalg.norm(a_px - region.circle_center, axis=1) <= region.radius
    support = int(inside.sum())
    if support < min_support:
        return None
    b_px = matches.pixels_b()[inside]
    center_b = b_px.mean(axis=0)
    wb, hb = matches.resolution_b
    r = region.radius
    x0 = max(int(np.floor(center_b[0] - r - 0.5)), 0)
    x1 = min(int(np.ceil(center_b[0] + r + 0.5)), wb - 1)
    y0 = max(int(np.floor(center_b[1] - r - 0.5)), 0)
    y1 = min(int(np.ceil(center_b[1] + r + 0.5)), hb - 1)
    disk = []
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            if np.hypot(x + 0.5 - center_b[0], y + 0.5 - center_b[1]) <= r:
                disk.append((x, y))
    if not disk:
        cx = min(max(int(center_b[0]), 0), wb - 1)
        cy = min(max(int(center_b[1]), 0), hb - 1)
        disk = [(cx, cy)]
    pixels_b = np.array(disk, dtype=np.int64)
    region_b = ErrorRegion(
        pixels=pixels_b,
        centroid=center_b.copy(),
        circle_center=center_b.copy(),
        radius=r,
        mean_error=0.0,
    )
    return RegionPair(region_a=region, region_b=region_b, support=support)


def identify_zone(
    pair: RegionPair,
    camera_a: Camera,
    camera_b: Camera,
    params: LpmParams,
    view_id: int = -1,
    iteration: int = -1,
) -> Optional[Zone]:
    """Triangulate the paired regions into a world-space sphere.

    Rays are cast through both regions' pixels; closest-point midpoints of
    cross pairs within the acceptance distance (both parameters positive)
    form the zone as their smallest enclosing sphere. Returns None for
    near-coaxial cameras or too few accepted midpoints."""
    cone_a = Cone.through_pixels(camera_a, pair.region_a.circle_center, pair.region_a.radius)
    cone_b = Cone.through_pixels(camera_b, pair.region_b.circle_center, pair.region_b.radius)
    if triangulation_angle_deg(cone_a.axis, cone_b.axis) < params.min_triangulation_deg:
        return None
    rays_a = cone_rays(cone_a, pair.region_a.pixels, params.ray_cap)
    rays_b = cone_rays(cone_b, pair.region_b.pixels, params.ray_cap)
    dirs_a = np.array([r.direction for r in rays_a])
    dirs_b = np.array([r.direction for r in rays_b])
    midpoints = pairwise_ray_midpoints(
        cone_a.apex, dirs_a, cone_b.apex, dirs_b, params.intersection_tolerance
    )
    if midpoints.shape[0] < params.min_midpoints:
        return None
    sphere = min_enclosing_sphere(midpoints)
    if sphere.radius <= 0:
        sphere = Sphere(center=sphere.center, radius=1e-12)
    return Zone(sphere=sphere, view_id=view_id, iteration=iteration)


def global_low_threshold_count(scene: Scene, stats: GradStats, adc_params: AdcParams, threshold: float) -> int:
    """Point count a global densify/prune pass at the lowered threshold would
    leave (rng-free arithmetic; split children counts do not depend on the
    sampled positions)."""
    avg = stats.averaged()
    hit = avg > threshold
    small = scene.scales.max(axis=1) < adc_params.scale_split_threshold if len(scene) else np.zeros(0, bool)
    clones = int(np.sum(hit & small))
    splits = int(np.sum(hit & ~small))
    keep_original = ~(hit & ~small)
    pruned_orig = int(np.sum((scene.opacities < adc_params.prune_opacity) & keep_original))
    child_opac = np.concatenate(
        [scene.opacities[hit & small], np.repeat(scene.opacities[hit & ~small], 2)]
    )
    pruned_child = int(np.sum(child_opac < adc_params.prune_opacity))
    return len(scene) + clones + 2 * splits - splits - pruned_orig - pruned_child


def points_in_zone(scene: Scene, zone: Zone) -> np.ndarray:
    """Indices of Gaussians whose mean lies in the closed zone sphere."""
    if len(scene) == 0:
        return np.zeros(0, dtype=np.intp)
    d = np.linalg.norm(scene.means - zone.center, axis=1)
    return np.flatnonzero(d <= zone.radius)


def localized_densify(
    scene: Scene,
    zone: Zone,
    stats: GradStats,
    params: LpmParams,
    adc_params: AdcParams,
    rng: np.random.Generator,
) -> tuple[Scene, GradStats, SceneEdit, int]:
    """Clone/split rule restricted to the zone, at the lowered threshold.

    Consumed statistics rows are reset so the same points are not densified
    again by the next global pass without fresh evidence."""
    k = len(scene)
    mask = np.zeros(k, dtype=bool)
    mask[points_in_zone(scene, zone)] = True
    dropped, added, densified = _densify_rows(
        scene, stats, params.local_grad_threshold, adc_params, rng, mask
    )
    drop_set = set(dropped)
    kept = np.array([i for i in range(k) if i not in drop_set], dtype=np.intp)
    new_scene = _rebuild(scene, kept, added, bump=False)
    edit = SceneEdit(kept=kept, added=len(added))
    new_stats = stats.apply_edit(edit, new_scene.generation)
    old_to_new = {int(o): n for n, o in enumerate(kept)}
    consumed = np.array([old_to_new[i] for i in densified if i in old_to_new], dtype=np.intp)
    if consumed.size:
        new_stats = new_stats.reset_rows(consumed)
    return new_scene, new_stats, edit, len(added)


def insert_center_point(
    scene: Scene,
    zone: Zone,
    region: ErrorRegion,
    gt_image: ImageBuffer,
    params: LpmParams,
) -> tuple[Scene, Optional[SceneEdit], bool]:
    """Drop one fresh Gaussian at the zone center when the zone is sparse.

    The new point is isotropic at a third of the zone radius, faint, and
    colored like the originating region's ground-truth pixels. No-op when
    the zone already holds enough points."""
    if points_in_zone(scene, zone).size >= params.sparsity_floor:
        return scene, None, False
    px = region.pixels
    color = np.clip(gt_image.data[px[:, 1], px[:, 0]].mean(axis=0), 0.0, 1.0)
    g = Gaussian3D(
        mean=zone.center,
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        scale=np.full(3, max(zone.radius / 3.0, 1e-9)),
        opacity=0.1,
        color=color,
    )
    kept = np.arange(len(scene), dtype=np.intp)
    new_scene = _rebuild(scene, kept, [g], bump=False)
    return new_scene, SceneEdit(kept=kept, added=1), True


def reset_front_points(
    scene: Scene,
    zone: Zone,
    region: ErrorRegion,
    camera: Camera,
    params: LpmParams,
) -> tuple[Scene, int]:
    """Knock down high-opacity points sitting between the camera and the zone.

    Front-of-zone: projects inside the originating region's circumscribed
    circle, closer than the zone's near side, and above the opacity
    threshold. Their opacity is set to the reset ceiling."""
    if len(scene) == 0:
        return scene, 0
    pix, depth, in_front = camera.project_points(scene.means)
    zone_depth = float(camera.world_to_camera(zone.center[None, :])[0, 2])
    inside = np.linalg.norm(pix - region.circle_center, axis=1) <= region.radius
    front = (
        in_front
        & inside
        & (depth < zone_depth - zone.radius)
        & (scene.opacities > params.front_opacity_threshold)
    )
    n = int(front.sum())
    if n == 0:
        return scene, 0
    opac = scene.opacities.copy()
    opac[front] = params.reset_ceiling
    return scene.replace(opacities=opac), n


def front_of_zone_mask(scene: Scene, zone: Zone, region: ErrorRegion, camera: Camera, params: LpmParams) -> np.ndarray:
    """The reset predicate, exposed for audits."""
    if len(scene) == 0:
        return np.zeros(0, dtype=bool)
    pix, depth, in_front = camera.project_points(scene.means)
    zone_depth = float(camera.world_to_camera(zone.center[None, :])[0, 2])
    inside = np.linalg.norm(pix - region.circle_center, axis=1) <= region.radius
    return in_front & inside & (depth < zone_depth - zone.radius) & (scene.opacities > params.front_opacity_threshold)


def density_aware_prune(
    scene: Scene,
    zone: Zone,
    added_count: int,
    params: LpmParams,
    protected: frozenset[int] = frozenset(),
) -> tuple[Scene, SceneEdit, int]:
    """Trim the zone back toward its density target, lowest opacity first.

    At most `added_count` points are removed, never below the target, ties
    broken by index; protected rows (same-step insertions) are exempt."""
    idx = points_in_zone(scene, zone)
    excess = idx.size - params.density_target
    remove_n = max(0, min(added_count, excess))
    if remove_n == 0:
        return scene, SceneEdit.identity(len(scene)), 0
    candidates = sorted(
        (int(i) for i in idx if int(i) not in protected),
        key=lambda i: (scene.opacities[i], i),
    )
    removed = set(candidates[:remove_n])
    kept = np.array([i for i in range(len(scene)) if i not in removed], dtype=np.intp)
    new_scene = _rebuild(scene, kept, [], bump=False)
    return new_scene, SceneEdit(kept=kept, added=0), len(removed)


@dataclass
class LpmStepResult:
    scene: Scene
    stats: GradStats
    edits: list[SceneEdit]
    zone_events: list[dict]
    skipped: list[dict]
    audit: list[dict]


class LpmEngine:
    """Holds the pipeline configuration and runs localized steps."""

    def __init__(
        self,
        params: LpmParams,
        adc_params: AdcParams,
        matcher,
        cameras: Sequence[Camera],
        gt_images: Sequence[ImageBuffer],
        background=(0.0, 0.0, 0.0),
    ):
        self.params = params
        self.adc_params = adc_params
        self.matcher = matcher
        self.cameras = list(cameras)
        self.gt_images = list(gt_images)
        self.background = np.asarray(background, dtype=np.float64)

    def choose_reference(self, view_idx: int, focus, candidates: Optional[Sequence[int]] = None) -> Optional[int]:
        """Nearest other camera with enough triangulation angle at the focus
        point; None when every candidate is nearly coaxial."""
        focus = np.asarray(focus, dtype=np.float64)
        cam = self.cameras[view_idx]
        best = None
        best_dist = np.inf
        pool = candidates if candidates is not None else range(len(self.cameras))
        for j in pool:
            if j == view_idx:
                continue
            other = self.cameras[j]
            ang = triangulation_angle_deg(cam.position - focus, other.position - focus)
            if ang < self.params.min_triangulation_deg:
                continue
            dist = float(np.linalg.norm(cam.position - other.position))
            if dist < best_dist:
                best = j
                best_dist = dist
        return best

    def step(
        self,
        scene: Scene,
        stats: GradStats,
        view_idx: int,
        ref_idx: int,
        iteration: int,
        rng: np.random.Generator,
        audit: bool = False,
    ) -> LpmStepResult:
        """One localized management pass driven by the current view's error map."""
        params = self.params
        cam = self.cameras[view_idx]
        gt = self.gt_images[view_idx]
        out = render(scene, cam, self.background)
        emap = error_map(out.color, gt, params.error_metric)
        regions = extract_regions(
            emap,
            min_area=params.min_region_area,
            max_regions=params.max_regions,
            error_sigma=params.error_sigma,
        )
        edits: list[SceneEdit] = []
        zone_events: list[dict] = []
        skipped: list[dict] = []
        audits: list[dict] = []
        matches = self.matcher.match(view_idx, ref_idx)
        if audit:
            # Localization must not exceed what a global pass at the lowered
            # threshold would build on the same state (checked empirically).
            global_count = global_low_threshold_count(
                scene, stats, self.adc_params, params.local_grad_threshold
            )

        for region_no, region in enumerate(regions):
            pair = pair_region(region, matches, params.min_support)
            if pair is None:
                skipped.append({"iter": iteration, "view": view_idx, "region": region_no, "stage": "pairing"})
                continue
            zone = identify_zone(pair, cam, self.cameras[ref_idx], params, view_idx, iteration)
            if zone is None:
                skipped.append({"iter": iteration, "view": view_idx, "region": region_no, "stage": "zone"})
                continue

            pre_scene = scene
            pre_front = front_of_zone_mask(pre_scene, zone, region, cam, params)
            pre_in_zone = np.zeros(len(pre_scene), dtype=bool)
            pre_in_zone[points_in_zone(pre_scene, zone)] = True
            n_before = int(pre_in_zone.sum())
            from_pre = np.arange(len(pre_scene), dtype=np.intp)

            scene, stats, edit_d, n_densified = localized_densify(
                scene, zone, stats, params, self.adc_params, rng
            )
            edits.append(edit_d)
            from_pre = np.concatenate([from_pre[edit_d.kept], np.full(edit_d.added, -1, dtype=np.intp)])

            scene, edit_i, inserted = insert_center_point(scene, zone, region, gt, params)
            protected = frozenset()
            if inserted:
                edits.append(edit_i)
                stats = stats.apply_edit(edit_i, scene.generation)
                from_pre = np.concatenate([from_pre, [-1]])
                protected = frozenset({len(scene) - 1})

            scene, n_reset = reset_front_points(scene, zone, region, cam, params)

            scene, edit_p, n_pruned = density_aware_prune(
                scene, zone, n_densified + int(inserted), params, protected
            )
            edits.append(edit_p)
            from_pre = from_pre[edit_p.kept]
            stats = stats.apply_edit(edit_p, scene.generation)

            zone_events.append(
                {
                    "iter": iteration,
                    "view": view_idx,
                    "zone_center": [float(c) for c in zone.center],
                    "zone_radius": float(zone.radius),
                    "n_points_before": n_before,
                    "n_densified": n_densified,
                    "n_inserted": int(inserted),
                    "n_reset": n_reset,
                    "n_pruned": n_pruned,
                }
            )

            if audit:
                audits.append(
                    self._audit_zone(pre_scene, scene, from_pre, pre_in_zone, pre_front, zone, iteration)
                )

        scene = scene.replace(bump_generation=True)
        stats = stats.with_generation(scene.generation)
        if audit:
            audits.append(
                {
                    "iter": iteration,
                    "kind": "expansion_bound",
                    "final_count": len(scene),
                    "global_low_threshold_count": global_count,
                    "violations": (
                        [] if len(scene) <= global_count else [{"kind": "exceeds_global_lowering"}]
                    ),
                }
            )
        return LpmStepResult(scene, stats, edits, zone_events, skipped, audits)

    @staticmethod
    def _audit_zone(pre_scene, post_scene, from_pre, pre_in_zone, pre_front, zone, iteration) -> dict:
        """Locality check: surviving rows that changed must satisfy the zone
        or front predicate, removed rows must have been in the zone."""
        violations = []
        surviving = from_pre >= 0
        pre_rows = from_pre[surviving]
        post_rows = np.flatnonzero(surviving)
        for post_i, pre_i in zip(post_rows, pre_rows):
            same = (
                np.array_equal(post_scene.means[post_i], pre_scene.means[pre_i])
                and np.array_equal(post_scene.rotations[post_i], pre_scene.rotations[pre_i])
                and np.array_equal(post_scene.scales[post_i], pre_scene.scales[pre_i])
                and post_scene.opacities[post_i] == pre_scene.opacities[pre_i]
                and np.array_equal(post_scene.colors[post_i], pre_scene.colors[pre_i])
            )
            if not same and not (pre_in_zone[pre_i] or pre_front[pre_i]):
                violations.append({"kind": "modified_outside", "pre_index": int(pre_i)})
        removed = set(range(len(pre_scene))) - {int(i) for i in pre_rows}
        for pre_i in sorted(removed):
            if not pre_in_zone[pre_i]:
                violations.append({"kind": "removed_outside", "pre_index": int(pre_i)})
        return {"iter": iteration, "zone_radius": float(zone.radius), "violations": violations}
