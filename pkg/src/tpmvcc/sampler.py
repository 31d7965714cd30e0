"""Differentiable bilinear warping of feature maps onto plane grids.

A warp is a fixed linear map (cameras do not move), so each sampling grid is
compiled once into a sparse matrix with at most four tent-kernel weights per
target cell.  Forward is a sparse matmul per channel; backward is the exact
transpose (scatter-add), and the grid itself receives no gradient.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .geometry import SamplingGrid
from .tensor import DimensionError, Tensor


def bilinear_weight(p: tuple[float, float], q: tuple[int, int]) -> float:
    """Tent-kernel interpolation weight between a continuous point and an
    integer neighbor: max(0, 1-|dx|) * max(0, 1-|dy|)."""
    wx = max(0.0, 1.0 - abs(q[0] - p[0]))
    wy = max(0.0, 1.0 - abs(q[1] - p[1]))
    return wx * wy


class WarpOperator:
    """Compiled bilinear warp from a source feature map onto a plane grid."""

    def __init__(self, grid: SamplingGrid):
        self.grid_h, self.grid_w = grid.u.shape
        self.src_h, self.src_w = grid.src_h, grid.src_w
        self.mask = grid.mask.copy()
        self._matrix = self._compile(grid)
        self._matrix_t = self._matrix.T.tocsr()

    def _compile(self, grid: SamplingGrid) -> sparse.csr_matrix:
        n_out = self.grid_h * self.grid_w
        n_src = self.src_h * self.src_w
        u = grid.u.ravel()
        v = grid.v.ravel()
        valid = grid.mask.ravel()
        j0 = np.floor(u).astype(np.int64)
        i0 = np.floor(v).astype(np.int64)
        rows, cols, vals = [], [], []
        for di in (0, 1):
            for dj in (0, 1):
                i = i0 + di
                j = j0 + dj
                w = np.maximum(0.0, 1.0 - np.abs(j - u)) * np.maximum(0.0, 1.0 - np.abs(i - v))
                ok = valid & (i >= 0) & (i < self.src_h) & (j >= 0) & (j < self.src_w) & (w > 0)
                rows.append(np.nonzero(ok)[0])
                cols.append((i * self.src_w + j)[ok])
                vals.append(w[ok])
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_out, n_src))
        return mat.tocsr()

    def apply_array(self, source: np.ndarray) -> np.ndarray:
        """Warp a (C,H,W) or (H,W) array; masked cells come out zero."""
        squeeze = source.ndim == 2
        src = source[None] if squeeze else source
        if src.shape[1] != self.src_h or src.shape[2] != self.src_w:
            raise DimensionError(
                f"warp source is {src.shape[1]}x{src.shape[2]}, grid expects "
                f"{self.src_h}x{self.src_w}")
        c = src.shape[0]
        out = (self._matrix @ src.reshape(c, -1).T).T.reshape(c, self.grid_h, self.grid_w)
        return out[0] if squeeze else out

    def transpose_array(self, upstream: np.ndarray) -> np.ndarray:
        """Adjoint of apply_array: scatter grid-space values back to source space."""
        squeeze = upstream.ndim == 2
        up = upstream[None] if squeeze else upstream
        if up.shape[1] != self.grid_h or up.shape[2] != self.grid_w:
            raise DimensionError(
                f"warp upstream is {up.shape[1]}x{up.shape[2]}, grid is "
                f"{self.grid_h}x{self.grid_w}")
        c = up.shape[0]
        out = (self._matrix_t @ up.reshape(c, -1).T).T.reshape(c, self.src_h, self.src_w)
        return out[0] if squeeze else out

    def __call__(self, source: Tensor) -> Tensor:
        """Differentiable warp of a [C,H,W] tensor onto the grid."""
        if source.data.ndim != 3:
            raise DimensionError(f"warp expects [C,H,W], got ndim {source.data.ndim}")
        out = self.apply_array(source.data)
        return Tensor._op(out, [(source, self.transpose_array)])


def warp(source: Tensor, grid: SamplingGrid) -> Tensor:
    """One-shot differentiable warp; prefer a cached WarpOperator in loops."""
    return WarpOperator(grid)(source)
