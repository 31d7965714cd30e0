"""The multi-view counting network: shared FCN-7 backbone per view, tri-plane
projection via compiled bilinear warps, mask-weighted cross-view fusion, and a
dilated convolutional decoder regressing the scene density map.

The cross-view combination is a validity-mask-weighted average, which keeps
the architecture independent of how many views are active; permuting views
changes nothing (views are always folded in sorted id order).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import FRONT, GROUND, SIDE, CameraModel, PlaneSpec, build_sampling_grid
from .sampler import WarpOperator
from .tensor import Tensor

PLANE_KINDS = (GROUND, FRONT, SIDE)


@dataclass(frozen=True)
class FCN7Config:
    in_channels: int = 1
    channels: tuple = (16, 16, 32, 32, 64, 64, 64)
    strides: tuple = (1, 2, 1, 2, 1, 1, 1)
    dilation: int = 2          # applied to layers 4-6; others stay at 1
    kernel: int = 3

    def __post_init__(self):
        if len(self.channels) != 7 or len(self.strides) != 7:
            raise ValueError("backbone is fixed at 7 conv layers")

    @property
    def dilations(self) -> tuple:
        d = self.dilation
        return (1, 1, 1, d, d, d, 1)

    @property
    def feature_scale(self) -> float:
        return 1.0 / float(np.prod(self.strides))


@dataclass(frozen=True)
class ModelConfig:
    backbone: FCN7Config = field(default_factory=FCN7Config)
    decoder_channels: tuple = (64, 32, 1)
    decoder_dilation: int = 2
    front_reduce: str = "mean"      # mean | max over the vertical axis
    init_seed: int = 0


def _he_init(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class TPMVCCModel:
    """Holds parameters, compiled per-(view, plane) warps, and the forward pass."""

    def __init__(self, config: ModelConfig, cameras: dict[int, CameraModel],
                 planes: dict[str, PlaneSpec]):
        self.config = config
        self.cameras = dict(cameras)
        self.planes = dict(planes)
        for kind in PLANE_KINDS:
            if kind not in self.planes:
                raise ValueError(f"missing plane spec: {kind}")
        g = self.planes[GROUND]
        if self.planes[FRONT].grid_w != g.grid_w:
            raise ValueError("front plane width must match ground grid width")
        if self.planes[SIDE].grid_w != g.grid_h:
            raise ValueError("side plane width must match ground grid height")
        self.params: dict[str, Tensor] = {}
        self._build_params()
        scale = config.backbone.feature_scale
        self.warps: dict[tuple[int, str], WarpOperator] = {}
        for vid, cam in self.cameras.items():
            for kind in PLANE_KINDS:
                grid = build_sampling_grid(cam, self.planes[kind], scale)
                self.warps[(vid, kind)] = WarpOperator(grid)

    # -- parameters -----------------------------------------------------------

    def _add_conv(self, rng, name, c_in, c_out, k):
        self.params[f"{name}.w"] = Tensor(_he_init(rng, (c_out, c_in, k, k)), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(c_out), requires_grad=True)

    def _build_params(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.init_seed)
        c_in = cfg.backbone.in_channels
        for i, c_out in enumerate(cfg.backbone.channels):
            self._add_conv(rng, f"backbone.conv{i}", c_in, c_out, cfg.backbone.kernel)
            c_in = c_out
        feat_c = cfg.backbone.channels[-1]
        self._add_conv(rng, "view_head", feat_c, 1, 1)
        for kind in PLANE_KINDS:
            self._add_conv(rng, f"fusion.{kind}", feat_c, feat_c, 1)
        c_in = 3 * feat_c
        for i, c_out in enumerate(cfg.decoder_channels):
            self._add_conv(rng, f"decoder.conv{i}", c_in, c_out, 3)
            c_in = c_out
        # density-emitting layers start at a small positive constant: zero
        # weights plus a positive bias.  He-scale init makes their initial
        # output orders of magnitude larger than the sparse density targets,
        # and one epoch of correction drives the trailing ReLU negative
        # everywhere, after which no gradient flows and training is stuck at
        # the all-zeros map.
        last = len(cfg.decoder_channels) - 1
        for name in (f"decoder.conv{last}", "view_head"):
            self.params[f"{name}.w"].data[:] = 0.0
            self.params[f"{name}.b"].data[:] = 0.01

    def param_names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in self.params if n.startswith(prefix))

    def set_trainable(self, prefixes) -> None:
        """Mark parameters trainable iff their name starts with any prefix."""
        for name, p in self.params.items():
            p.requires_grad = any(name.startswith(pre) for pre in prefixes)
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
        for n, p in self.params.items():
            arr = np.asarray(state[n], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint parameter {n} has shape {arr.shape}, model expects {p.data.shape}")
            p.data = arr.copy()

    # -- forward --------------------------------------------------------------

    def backbone_forward(self, image: Tensor) -> Tensor:
        cfg = self.config.backbone
        scale_div = int(round(1.0 / cfg.feature_scale))
        _, h, w = image.data.shape
        if h % scale_div or w % scale_div:
            raise T.DimensionError(
                f"image dims {h}x{w} must be divisible by the backbone stride {scale_div}")
        x = image
        for i, (stride, dil) in enumerate(zip(cfg.strides, cfg.dilations)):
            pad = dil * (cfg.kernel - 1) // 2
            x = T.conv2d(x, self.params[f"backbone.conv{i}.w"],
                         self.params[f"backbone.conv{i}.b"],
                         stride=stride, dilation=dil, padding=pad)
            x = T.relu(x)
        return x

    def view_density_head(self, features: Tensor) -> Tensor:
        out = T.conv2d(features, self.params["view_head.w"], self.params["view_head.b"])
        return T.relu(out)

    def project_view_to_planes(self, features: Tensor, view_id: int) -> dict[str, Tensor]:
        return {kind: self.warps[(view_id, kind)](features) for kind in PLANE_KINDS}

    def _coverage(self, kind: str, view_ids) -> np.ndarray:
        cover = np.zeros(self.warps[(view_ids[0], kind)].mask.shape)
        for vid in view_ids:
            cover += self.warps[(vid, kind)].mask
        return cover

    def align_views(self, features_by_view: dict[int, Tensor]) -> dict[str, Tensor]:
        """Project per-view features onto each plane, average across views by
        validity mask, and reduce/broadcast the vertical planes onto the
        ground grid axes.  Returns one [C, Hg, Wg] tensor per plane kind."""
        view_ids = sorted(features_by_view)
        g = self.planes[GROUND]
        aligned = {}
        for kind in PLANE_KINDS:
            total = None
            for vid in view_ids:
                w = self.warps[(vid, kind)](features_by_view[vid])
                total = w if total is None else total + w
            cover = self._coverage(kind, view_ids)
            inv = np.where(cover > 0, 1.0 / np.maximum(cover, 1e-12), 0.0)
            avg = total * inv[None, :, :]
            if kind == FRONT:
                reduced = self._reduce_vertical(avg)            # [C, Wg]
                c = reduced.data.shape[0]
                aligned[kind] = reduced.reshape(c, 1, g.grid_w).broadcast_to(
                    (c, g.grid_h, g.grid_w))
            elif kind == SIDE:
                reduced = self._reduce_vertical(avg)            # [C, Hg]
                c = reduced.data.shape[0]
                aligned[kind] = reduced.reshape(c, g.grid_h, 1).broadcast_to(
                    (c, g.grid_h, g.grid_w))
            else:
                aligned[kind] = avg
        return aligned

    def _reduce_vertical(self, plane_feat: Tensor) -> Tensor:
        if self.config.front_reduce == "mean":
            return plane_feat.mean(axis=1)
        raise ValueError(f"unsupported vertical reduction {self.config.front_reduce!r}")

    def fuse_and_decode(self, aligned: dict[str, Tensor]) -> Tensor:
        """Per-plane learnable 1x1 fusion conv, channel concat, then decode."""
        fused_planes = []
        for kind in PLANE_KINDS:
            x = T.conv2d(aligned[kind], self.params[f"fusion.{kind}.w"],
                         self.params[f"fusion.{kind}.b"])
            fused_planes.append(x)
        x = T.concat_channels(fused_planes)
        dil = self.config.decoder_dilation
        n = len(self.config.decoder_channels)
        for i in range(n):
            pad = dil * (3 - 1) // 2
            x = T.conv2d(x, self.params[f"decoder.conv{i}.w"],
                         self.params[f"decoder.conv{i}.b"], dilation=dil, padding=pad)
            x = T.relu(x)
        return x

    def forward_scene(self, images_by_view: dict[int, Tensor]) -> Tensor:
        """Full pipeline: images -> scene density map [1, Hg, Wg]."""
        feats = {vid: self.backbone_forward(img) for vid, img in images_by_view.items()}
        return self.fuse_and_decode(self.align_views(feats))

    def predict_scene_count(self, images_by_view: dict[int, Tensor]) -> float:
        return float(self.forward_scene(images_by_view).data.sum())
