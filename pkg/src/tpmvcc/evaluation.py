"""Counting metrics and the two late-fusion baselines.

The headline numbers are MAE, MSE and frame-level accuracy ("Rate").
Counting literature often labels root-mean-squared error as "MSE", so both
mse and rmse are always reported.

Baselines operate on per-view density predictions (here, the stage-1 view
head): density-weighted fusion (DWF) averages the ground-projected maps with
fixed perspective-aware weights (inverse ground-sampling distance), while
mask fusion partitions the ground grid into per-camera near-field regions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .density import DensityMap, project_density_to_ground
from .geometry import GROUND, CameraModel, PlaneSpec, apply_homography, plane_homography
from .model import TPMVCCModel
from .tensor import Tensor


class CoverageError(RuntimeError):
    """No view covers part of the ground grid the baseline needs."""


@dataclass
class EvalResult:
    method: str
    views: tuple
    pairs: list = field(default_factory=list)   # (true, pred) per frame
    mae: float = 0.0
    mse: float = 0.0
    rmse: float = 0.0
    rate: float = 0.0


def compute_metrics(pairs, method: str = "", views: tuple = ()) -> EvalResult:
    """Aggregate (true, pred) count pairs into MAE / MSE / RMSE / Rate."""
    pairs = [(float(t), float(p)) for t, p in pairs]
    if not pairs:
        raise ValueError("compute_metrics needs at least one (true, pred) pair")
    errs = np.array([p - t for t, p in pairs])
    mae = float(np.abs(errs).mean())
    mse = float((errs ** 2).mean())
    rates = []
    for t, p in pairs:
        if t <= 0:
            warnings.warn(f"frame with non-positive true count {t} excluded from Rate")
            continue
        rates.append(max(0.0, 1.0 - abs(p - t) / t))
    rate = float(np.mean(rates)) if rates else 0.0
    return EvalResult(method=method, views=tuple(views), pairs=pairs,
                      mae=mae, mse=mse, rmse=float(np.sqrt(mse)), rate=rate)


def _cell_weights(cams: dict[int, CameraModel], plane: PlaneSpec):
    """Per-view, per-ground-cell inverse ground-sampling distance (fx/depth),
    zero where the cell is invisible to the view."""
    centers = plane.cell_centers()
    weights = {}
    for vid, cam in cams.items():
        H = plane_homography(cam, plane)
        xy, depth = apply_homography(H, centers)
        visible = (depth > 0) \
            & (xy[..., 0] >= 0) & (xy[..., 0] <= cam.image_width - 1) \
            & (xy[..., 1] >= 0) & (xy[..., 1] <= cam.image_height - 1)
        with np.errstate(divide="ignore"):
            w = np.where(visible, cam.fx / np.maximum(depth, 1e-9), 0.0)
        weights[vid] = w
    return weights


def dwf_baseline(per_view_preds: dict[int, DensityMap], cams: dict[int, CameraModel],
                 plane: PlaneSpec) -> tuple[float, np.ndarray]:
    """Perspective-weighted average of ground-projected per-view density maps."""
    if not per_view_preds:
        raise ValueError("dwf_baseline needs at least one view prediction")
    weights = _cell_weights({vid: cams[vid] for vid in per_view_preds}, plane)
    total_w = sum(weights.values())
    if not (total_w > 0).any():
        raise CoverageError("no view covers any ground cell")
    fused = np.zeros((plane.grid_h, plane.grid_w))
    for vid, dmap in per_view_preds.items():
        projected, _ = project_density_to_ground(dmap, cams[vid], plane)
        with np.errstate(invalid="ignore"):
            share = np.where(total_w > 0, weights[vid] / np.maximum(total_w, 1e-12), 0.0)
        fused += share * projected.grid
    return float(fused.sum()), fused


def mask_fusion_baseline(per_view_preds: dict[int, DensityMap],
                         cams: dict[int, CameraModel],
                         plane: PlaneSpec) -> tuple[float, np.ndarray]:
    """Near-field ownership partition: each covered cell belongs to the view
    with the smallest ground-sampling distance (ties to the lowest view id)."""
    if not per_view_preds:
        raise ValueError("mask_fusion_baseline needs at least one view prediction")
    view_ids = sorted(per_view_preds)
    weights = _cell_weights({vid: cams[vid] for vid in view_ids}, plane)
    stacked = np.stack([weights[vid] for vid in view_ids])   # (V, H, W)
    covered = stacked.max(axis=0) > 0
    if not covered.any():
        raise CoverageError("no view covers any ground cell")
    owner = stacked.argmax(axis=0)     # ties resolve to the lowest index
    fused = np.zeros((plane.grid_h, plane.grid_w))
    for k, vid in enumerate(view_ids):
        projected, _ = project_density_to_ground(per_view_preds[vid], cams[vid], plane)
        own = covered & (owner == k)
        fused[own] = projected.grid[own]
    return float(fused.sum()), fused


def ownership_partition(per_view_ids, cams, plane) -> np.ndarray:
    """Owner view index per covered cell, -1 where uncovered (for inspection)."""
    weights = _cell_weights({vid: cams[vid] for vid in per_view_ids}, plane)
    stacked = np.stack([weights[vid] for vid in sorted(per_view_ids)])
    owner = stacked.argmax(axis=0)
    return np.where(stacked.max(axis=0) > 0, owner, -1)


def evaluate_model(model: TPMVCCModel, frames, view_subset) -> EvalResult:
    """Run the fusion model on each frame with only the selected views."""
    view_subset = tuple(sorted(view_subset))
    for vid in view_subset:
        if vid not in model.cameras:
            raise ValueError(f"unknown view id {vid}")
    pairs = []
    for f in frames:
        images = {vid: Tensor(f.images[vid]) for vid in view_subset}
        pred = model.predict_scene_count(images)
        true = float(f.scene_density.sum())
        pairs.append((true, pred))
    return compute_metrics(pairs, method="tpmvcc", views=view_subset)


def evaluate_baseline(kind: str, model: TPMVCCModel, frames,
                      view_subset, plane: PlaneSpec) -> EvalResult:
    """Run DWF or mask fusion on the stage-1 view head's predictions."""
    fuse = {"dwf": dwf_baseline, "mf": mask_fusion_baseline}[kind]
    view_subset = tuple(sorted(view_subset))
    cams = {vid: model.cameras[vid] for vid in view_subset}
    # view head predicts on the backbone's downscaled grid
    cell_px = 1.0 / model.config.backbone.feature_scale
    pairs = []
    for f in frames:
        preds = {}
        for vid in view_subset:
            feat = model.backbone_forward(Tensor(f.images[vid]))
            dmap = model.view_density_head(feat).data[0]
            preds[vid] = DensityMap(dmap, cell_px)
        count, _ = fuse(preds, cams, plane)
        pairs.append((float(f.scene_density.sum()), count))
    return compute_metrics(pairs, method=kind, views=view_subset)


def format_results_table(results: list[EvalResult]) -> str:
    header = f"{'method':<10} {'views':<10} {'MAE':>8} {'MSE':>9} {'RMSE':>8} {'Rate':>7}"
    lines = [header, "-" * len(header)]
    for r in results:
        views = ",".join(str(v) for v in r.views)
        lines.append(f"{r.method:<10} {views:<10} {r.mae:>8.3f} {r.mse:>9.3f} "
                     f"{r.rmse:>8.3f} {r.rate:>7.3f}")
    return "\n".join(lines)
