"""Synthetic multi-view scene generator.

Stands in for a real multi-camera recording: a square pen observed by three
calibrated cameras tilted ~30 degrees from three sides, with bird proxies
rendered as intensity blobs (painter's algorithm for hard occlusion) plus
additive noise.  Every frame ships with complete annotations: per-view pixel
points, scene-level ground points, and ground-truth density maps at both
levels.  Everything is deterministic given (seed, frame_id).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .density import render_density
from .geometry import (FRONT, GROUND, SIDE, CameraModel, PlaneSpec,
                       build_sampling_grid, project_world_to_pixel)
from . import io as tio


class LayoutError(RuntimeError):
    """Could not place the requested number of birds at the requested separation."""


@dataclass(frozen=True)
class SceneConfig:
    n_views: int = 3
    extent: float = 4.0            # ground grid extent, meters (square)
    margin: float = 0.25           # keep birds this far from the pen edge
    grid_cells: int = 64           # ground grid is grid_cells x grid_cells
    center_height: float = 0.15    # assumed bird center height, meters
    vertical_cells: int = 5        # front/side plane height in cells
    count_min: int = 20
    count_max: int = 50
    min_separation: float = 0.12   # meters between bird centers
    n_clusters: int = 3
    cluster_fraction: float = 0.6
    cluster_spread: float = 0.35   # meters
    bird_radius: float = 0.09      # meters
    image_size: int = 48           # square images
    focal: float = 58.0
    cam_height: float = 2.2
    cam_setback: float = 2.0       # distance behind the pen edge
    noise_std: float = 0.02
    background: float = 0.08
    scene_sigma: float = 2.0       # GT kernel std, ground-grid cells
    view_sigma: float = 1.0        # GT kernel std, feature-grid cells
    feature_scale: float = 0.25    # backbone output resolution / image resolution
    seed: int = 42

    @property
    def cell_size(self) -> float:
        return self.extent / self.grid_cells


def look_at_camera(position, target, focal: float, image_size: int) -> CameraModel:
    """Camera at `position` looking at `target`, world z-up, image v pointing down."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - position
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    t = -R @ position
    c = (image_size - 1) / 2.0
    return CameraModel(fx=focal, fy=focal, cx=c, cy=c, R=R, t=t,
                       image_width=image_size, image_height=image_size)


def build_cameras(config: SceneConfig) -> dict[int, CameraModel]:
    """Three-sided rig around the pen; poses give ~30 degree tilt."""
    e = config.extent
    h = config.cam_height
    s = config.cam_setback
    mid = e / 2.0
    # positions are kept off the fusion planes (x = mid, y = mid), which would
    # otherwise be seen exactly edge-on and have degenerate homographies
    poses = [
        ((mid - 0.4, -s, h), (mid, mid + 0.2, 0.0)),      # south side, looking north
        ((-s, mid + 0.4, h), (mid + 0.2, mid, 0.0)),      # west side, looking east
        ((e + s, mid - 0.4, h), (mid - 0.2, mid, 0.0)),   # east side, looking west
    ]
    cams = {}
    for vid in range(config.n_views):
        pos, tgt = poses[vid % len(poses)]
        cams[vid] = look_at_camera(pos, tgt, config.focal, config.image_size)
    return cams


def build_planes(config: SceneConfig) -> dict[str, PlaneSpec]:
    cs = config.cell_size
    n = config.grid_cells
    mid = config.extent / 2.0
    return {
        GROUND: PlaneSpec(GROUND, config.center_height, (0.0, 0.0), cs, n, n),
        FRONT: PlaneSpec(FRONT, mid, (0.0, 0.0), cs, config.vertical_cells, n),
        SIDE: PlaneSpec(SIDE, mid, (0.0, 0.0), cs, config.vertical_cells, n),
    }


def coverage_masks(config: SceneConfig, cams=None) -> dict[int, np.ndarray]:
    """Per-view boolean masks of ground cells visible at full image resolution."""
    cams = cams or build_cameras(config)
    plane = build_planes(config)[GROUND]
    return {vid: build_sampling_grid(cam, plane, 1.0).mask for vid, cam in cams.items()}


def validate_coverage(config: SceneConfig) -> None:
    """Every ground cell must be seen by at least one camera, and no single
    camera may see everything (otherwise the multi-view premise is vacuous)."""
    masks = coverage_masks(config)
    union = np.zeros_like(next(iter(masks.values())))
    for m in masks.values():
        union |= m
    if not union.all():
        missing = int((~union).sum())
        raise ValueError(f"camera rig leaves {missing} ground cells uncovered")
    for vid, m in masks.items():
        if m.all():
            raise ValueError(f"camera {vid} alone covers the whole pen; rig has no blind spots")


def sample_layout(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Ground positions (n, 2) in meters: clustered + uniform, min separation."""
    n = int(rng.integers(config.count_min, config.count_max + 1))
    lo = config.margin
    hi = config.extent - config.margin
    centers = rng.uniform(lo, hi, size=(max(config.n_clusters, 1), 2))
    placed: list[np.ndarray] = []
    attempts_per_point = 200
    for i in range(n):
        for attempt in range(attempts_per_point):
            if config.n_clusters > 0 and rng.uniform() < config.cluster_fraction:
                c = centers[rng.integers(len(centers))]
                p = rng.normal(c, config.cluster_spread)
            else:
                p = rng.uniform(lo, hi, size=2)
            if not (lo <= p[0] <= hi and lo <= p[1] <= hi):
                continue
            if placed and np.min(np.linalg.norm(np.array(placed) - p, axis=1)) < config.min_separation:
                continue
            placed.append(p)
            break
        else:
            raise LayoutError(
                f"could not place bird {i + 1}/{n} at separation "
                f"{config.min_separation}; lower the density or separation")
    return np.array(placed).reshape(-1, 2)


def render_view(positions: np.ndarray, cam: CameraModel, config: SceneConfig,
                rng: np.random.Generator):
    """Render one view: blob image (1, H, W) plus pixel annotations of the
    visible birds.  Far-to-near painting makes near birds occlude far ones."""
    h, w = cam.image_height, cam.image_width
    img = np.full((h, w), config.background, dtype=np.float64)
    projected = []
    for idx, (x, y) in enumerate(positions):
        u, v, depth = project_world_to_pixel(cam, (x, y, config.center_height))
        if depth > 0:
            projected.append((depth, u, v, idx))
    annotations = []
    uu = np.arange(w, dtype=np.float64)
    vv = np.arange(h, dtype=np.float64)
    # deterministic per-bird brightness, indexed by placement order
    brightness = 0.75 + 0.2 * rng.uniform(size=len(positions))
    for depth, u, v, idx in sorted(projected, key=lambda rec: -rec[0]):
        in_bounds = 0 <= u <= w - 1 and 0 <= v <= h - 1
        r = config.bird_radius * cam.fx / depth
        su, sv = max(r, 0.5), max(0.65 * r, 0.4)
        profile = np.exp(-((vv[:, None] - v) ** 2 / (2 * sv * sv)
                           + (uu[None, :] - u) ** 2 / (2 * su * su)))
        footprint = profile > 0.05
        img[footprint] = config.background + brightness[idx] * profile[footprint]
        if in_bounds:
            annotations.append((u, v))
    if config.noise_std > 0:
        img = img + rng.normal(0.0, config.noise_std, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return img[None, :, :], annotations


def make_frame(config: SceneConfig, cams: dict[int, CameraModel], frame_id: int):
    """Generate one SceneFrame worth of data, deterministic in (seed, frame_id)."""
    rng = np.random.default_rng([config.seed, frame_id])
    positions = sample_layout(config, rng)
    images, view_points, view_density = {}, {}, {}
    feat = int(round(config.image_size * config.feature_scale))
    for vid in sorted(cams):
        img, anns = render_view(positions, cams[vid], config, rng)
        images[vid] = img
        view_points[vid] = anns
        feat_pts = [(u * config.feature_scale, v * config.feature_scale) for u, v in anns]
        view_density[vid] = render_density(feat_pts, feat, feat, 1.0,
                                           sigma=config.view_sigma).grid
    scene_density = render_density(positions, config.grid_cells, config.grid_cells,
                                   config.cell_size, sigma=config.scene_sigma).grid
    return tio.SceneFrame(frame_id=frame_id, images=images, view_points=view_points,
                          scene_points=[tuple(p) for p in positions],
                          view_density=view_density, scene_density=scene_density)


def emit_dataset(config: SceneConfig, n_frames: int, out_dir,
                 train_fraction: float = 0.5) -> None:
    """Write a complete dataset tree: cameras, per-frame artifacts, manifest."""
    validate_coverage(config)
    out = Path(out_dir)
    cams = build_cameras(config)
    (out / "cameras").mkdir(parents=True, exist_ok=True)
    for vid, cam in cams.items():
        tio.write_camera(out / "cameras" / f"view{vid}.cam", cam)
    n_train = int(round(n_frames * train_fraction))
    train_ids = list(range(n_train))
    val_ids = list(range(n_train, n_frames))
    for split, ids in (("train", train_ids), ("val", val_ids)):
        for frame_id in ids:
            frame = make_frame(config, cams, frame_id)
            d = out / split / "frames" / str(frame_id)
            d.mkdir(parents=True, exist_ok=True)
            for vid in sorted(cams):
                tio.write_tensor(d / f"view{vid}.img.tpt", frame.images[vid])
                tio.write_tensor(d / f"view{vid}.den.tpt", frame.view_density[vid])
                tio.write_points_csv(d / f"view{vid}.pts.csv",
                                     [(frame_id, vid, x, y) for x, y in frame.view_points[vid]])
            tio.write_points_csv(d / "scene.pts.csv",
                                 [(frame_id, None, x, y) for x, y in frame.scene_points])
            tio.write_tensor(d / "scene.den.tpt", frame.scene_density)
    meta = config_to_kv(config)
    meta.update({
        "n_frames": n_frames,
        "train_ids": " ".join(str(i) for i in train_ids),
        "val_ids": " ".join(str(i) for i in val_ids),
    })
    tio.write_kv(out / "manifest.txt", meta)


# -- config (de)serialization -------------------------------------------------

_INT_FIELDS = {"n_views", "grid_cells", "vertical_cells", "count_min", "count_max",
               "n_clusters", "image_size", "seed"}


def config_to_kv(config: SceneConfig) -> dict:
    return dict(asdict(config))


def config_from_kv(kv: dict[str, str]) -> SceneConfig:
    kwargs = {}
    for name in SceneConfig.__dataclass_fields__:
        if name in kv:
            kwargs[name] = int(kv[name]) if name in _INT_FIELDS else float(kv[name])
    return SceneConfig(**kwargs)


def load_scene_config(path) -> SceneConfig:
    return config_from_kv(tio.read_kv(path))
