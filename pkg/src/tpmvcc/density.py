"""Ground-truth density maps from point annotations, and count recovery.

Entries are per-cell count mass: summing a map yields the object count with
no cell-area factor.  Each point contributes a truncated (4 sigma), per-point
renormalized Gaussian so count conservation is exact rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (CameraModel, PlaneSpec, build_sampling_grid)
from .sampler import WarpOperator


@dataclass
class DensityMap:
    grid: np.ndarray       # (H, W) non-negative per-cell count mass
    cell_size: float       # meters/cell for scene maps, pixels/cell for view maps

    @property
    def count(self) -> float:
        return float(self.grid.sum())


def render_density(points, grid_h: int, grid_w: int, cell_size: float,
                   sigma: float = 2.0) -> DensityMap:
    """Render point annotations into a density map.

    `points` are (x, y) coordinates in the map's native units (meters or
    pixels) relative to the grid origin; `sigma` is in cells.  Points outside
    the grid extent are dropped; every in-extent point contributes total mass
    exactly 1 (Gaussian truncated at 4 sigma, renormalized over in-grid cells).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    grid = np.zeros((grid_h, grid_w), dtype=np.float64)
    extent_w = grid_w * cell_size
    extent_h = grid_h * cell_size
    radius = int(np.ceil(4.0 * sigma))
    for x, y in points:
        if not (0.0 <= x < extent_w and 0.0 <= y < extent_h):
            continue
        # cell-space position of the point (cell centers sit at integer indices)
        cx = x / cell_size - 0.5
        cy = y / cell_size - 0.5
        j0 = max(0, int(np.floor(cx)) - radius)
        j1 = min(grid_w - 1, int(np.ceil(cx)) + radius)
        i0 = max(0, int(np.floor(cy)) - radius)
        i1 = min(grid_h - 1, int(np.ceil(cy)) + radius)
        jj = np.arange(j0, j1 + 1)
        ii = np.arange(i0, i1 + 1)
        dx2 = (jj - cx) ** 2
        dy2 = (ii - cy) ** 2
        patch = np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * sigma * sigma))
        patch[np.sqrt(dy2[:, None] + dx2[None, :]) > 4.0 * sigma] = 0.0
        total = patch.sum()
        if total > 0:
            grid[i0:i1 + 1, j0:j1 + 1] += patch / total
    return DensityMap(grid=grid, cell_size=cell_size)


def count_from_density(dmap: DensityMap) -> float:
    """Total count = plain sum of per-cell mass."""
    return float(dmap.grid.sum())


def project_density_to_ground(view_map: DensityMap, cam: CameraModel,
                              plane: PlaneSpec) -> tuple[DensityMap, bool]:
    """Warp a per-view density map onto the ground grid, preserving counts.

    The warp resamples mass geometrically, which does not conserve it (ground
    cells and view cells have different footprints), so the result is rescaled
    globally to match the input mass that actually lands inside the ground
    grid.  Returns (map, coverage_warning); the warning is set when none of
    the input mass is visible on the ground grid.
    """
    grid = build_sampling_grid(cam, plane, feature_scale=1.0 / view_map.cell_size)
    op = WarpOperator(grid)
    warped = op.apply_array(view_map.grid)
    # input mass visible on the ground grid = adjoint coverage of each source cell
    coverage = op.transpose_array(np.ones((plane.grid_h, plane.grid_w)))
    visible_mass = float(view_map.grid[coverage > 0].sum())
    warped_sum = float(warped.sum())
    if warped_sum <= 0 or visible_mass <= 0:
        return DensityMap(np.zeros((plane.grid_h, plane.grid_w)), plane.cell_size), True
    out = warped * (visible_mass / warped_sum)
    return DensityMap(out, plane.cell_size), False
