"""Pinhole cameras, plane homographies, and sampling-grid construction.

World frame is z-up with the pen floor at z = 0.  The ground plane used for
fusion sits at the assumed animal center height; front/side planes are
axis-aligned vertical planes with configurable offsets.  All operations are
pure and all types are immutable, so grids can be computed once per
(camera, plane) pair and shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GROUND = "ground"
FRONT = "front"
SIDE = "side"

_ORTHO_TOL = 1e-9
_COND_LIMIT = 1e12


class DegenerateGeometryError(ValueError):
    """Camera/plane configuration with no usable projection."""


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray          # 3x3 world->camera rotation
    t: np.ndarray          # 3-vector world->camera translation, meters
    image_width: int
    image_height: int

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("R must be a proper rotation (orthonormal, det +1)")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PlaneSpec:
    kind: str                      # ground | front | side
    offset: float                  # ground: z; front: y; side: x (meters)
    grid_origin: tuple[float, float]   # plane coords of the grid corner, meters
    cell_size: float               # meters per cell
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.kind not in (GROUND, FRONT, SIDE):
            raise ValueError(f"unknown plane kind {self.kind!r}")
        if self.cell_size <= 0 or self.grid_h <= 0 or self.grid_w <= 0:
            raise ValueError("cell_size and grid dims must be positive")

    def cell_centers(self) -> np.ndarray:
        """Plane coordinates (a, b) of every cell center, shape (grid_h, grid_w, 2).

        a runs along columns, b along rows.
        """
        a0, b0 = self.grid_origin
        a = a0 + (np.arange(self.grid_w) + 0.5) * self.cell_size
        b = b0 + (np.arange(self.grid_h) + 0.5) * self.cell_size
        aa, bb = np.meshgrid(a, b)
        return np.stack([aa, bb], axis=-1)

    def lift(self, p: np.ndarray) -> np.ndarray:
        """Map plane coords (..., 2) to world points (..., 3)."""
        p = np.asarray(p, dtype=np.float64)
        a, b = p[..., 0], p[..., 1]
        off = np.full_like(a, self.offset)
        if self.kind == GROUND:
            return np.stack([a, b, off], axis=-1)
        if self.kind == FRONT:       # plane y = offset, axes (x, z)
            return np.stack([a, off, b], axis=-1)
        return np.stack([off, a, b], axis=-1)  # side: plane x = offset, axes (y, z)


@dataclass(frozen=True)
class SamplingGrid:
    """Source feature-map coordinates for every target-plane cell center."""

    u: np.ndarray          # (grid_h, grid_w) source x, continuous pixels
    v: np.ndarray          # (grid_h, grid_w) source y
    mask: np.ndarray       # bool, true iff in front of camera and inside source bounds
    src_h: int
    src_w: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.u[self.mask])) or not np.all(np.isfinite(self.v[self.mask])):
            raise ValueError("sampling grid has non-finite coordinates under the mask")


def project_world_to_pixel(cam: CameraModel, X) -> tuple[float, float, float]:
    """World point (meters) -> (u, v, depth) pixels via the pinhole model."""
    X = np.asarray(X, dtype=np.float64).reshape(3)
    xc = cam.R @ X + cam.t
    depth = xc[2]
    if abs(depth) < 1e-12:
        raise DegenerateGeometryError("point projects at zero depth")
    u = cam.fx * xc[0] / depth + cam.cx
    v = cam.fy * xc[1] / depth + cam.cy
    return float(u), float(v), float(depth)


def plane_homography(cam: CameraModel, plane: PlaneSpec) -> np.ndarray:
    """3x3 map from plane coords [a, b, 1] to homogeneous pixel coords.

    Derived from pixel ~ K (R X + t) with X the lifted plane point: the two
    in-plane world axes pick out columns of R and the offset folds into the
    translation column.
    """
    r1, r2, r3 = cam.R[:, 0], cam.R[:, 1], cam.R[:, 2]
    if plane.kind == GROUND:
        cols = [r1, r2, plane.offset * r3 + cam.t]
    elif plane.kind == FRONT:
        cols = [r1, r3, plane.offset * r2 + cam.t]
    else:
        cols = [r2, r3, plane.offset * r1 + cam.t]
    H = cam.K @ np.stack(cols, axis=1)
    if np.linalg.cond(H) >= _COND_LIMIT:
        raise DegenerateGeometryError(
            f"homography for {plane.kind} plane is near-singular (camera parallel to plane?)")
    return H


def invert_homography(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if np.linalg.cond(H) >= _COND_LIMIT:
        raise DegenerateGeometryError("homography is numerically singular")
    return np.linalg.inv(H)


def apply_homography(H: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply H to points (..., 2); returns mapped (..., 2) and the scale w."""
    p = np.asarray(p, dtype=np.float64)
    ph = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    q = ph @ H.T
    w = q[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = q[..., :2] / w[..., None]
    return xy, w


def build_sampling_grid(cam: CameraModel, plane: PlaneSpec,
                        feature_scale: float = 1.0) -> SamplingGrid:
    """Map every plane cell center into source feature-map coordinates.

    feature_scale is the ratio of feature-map resolution to image resolution
    (0.25 for a backbone with total stride 4).  Cells whose projection falls
    behind the camera or outside the source bounds are masked out.
    """
    H = plane_homography(cam, plane)
    centers = plane.cell_centers()
    xy, w = apply_homography(H, centers)
    # w is the camera-frame depth of the lifted point (third row of K is [0 0 1])
    u = xy[..., 0] * feature_scale
    v = xy[..., 1] * feature_scale
    src_w = int(round(cam.image_width * feature_scale))
    src_h = int(round(cam.image_height * feature_scale))
    mask = (w > 0) & np.isfinite(u) & np.isfinite(v) \
        & (u >= 0) & (u <= src_w - 1) & (v >= 0) & (v <= src_h - 1)
    u = np.where(mask, u, 0.0)
    v = np.where(mask, v, 0.0)
    return SamplingGrid(u=u, v=v, mask=mask, src_h=src_h, src_w=src_w)
