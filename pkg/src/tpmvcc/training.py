"""Three-stage training: single-view pretraining, fusion training with a
frozen backbone, then joint fine-tuning with a decaying learning rate.

Whenever the backbone is frozen, per-frame aligned plane features are
precomputed once and reused across epochs (the projection pipeline up to the
fusion conv is constant in that regime), which makes stage 2 and the
fixed-backbone arm of stage 3 cheap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import io as tio
from . import tensor as T
from .model import PLANE_KINDS, FCN7Config, ModelConfig, TPMVCCModel
from .optim import make_optimizer
from .simulator import SceneConfig, build_cameras, build_planes, config_from_kv
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs_stage1: int = 15
    epochs_stage2: int = 25
    epochs_stage3: int = 10
    # scene-stage rates sit well below stage 1: the density targets are
    # sparse and small, and larger Adam steps drive the decoder's final ReLU
    # into the dead all-zeros regime within an epoch
    lr_stage1: float = 1e-3
    lr_stage2: float = 5e-5
    lr_stage3: float = 2e-5
    optimizer: str = "adam"
    decay_gamma: float = 0.5          # stage-3 step decay factor
    backbone_trainable_in_stage3: bool = True
    dilation: int = 2
    view_subset: tuple = (0, 1, 2)
    seed: int = 0

    def echo(self) -> dict:
        d = asdict(self)
        d["view_subset"] = ",".join(str(v) for v in self.view_subset)
        return d


@dataclass
class TrainReport:
    stage: str
    losses: list = field(default_factory=list)     # per-epoch mean loss
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    def save(self, path) -> None:
        entries = {"stage": self.stage, "wall_clock": self.wall_clock,
                   "epochs": len(self.losses),
                   "losses": " ".join(repr(l) for l in self.losses)}
        entries.update({f"config.{k}": v for k, v in sorted(self.config.items())})
        tio.write_kv(path, entries)


def build_model(dataset: tio.Dataset, train_cfg: TrainConfig) -> tuple[TPMVCCModel, SceneConfig]:
    scene_cfg = config_from_kv(dataset.meta)
    model_cfg = ModelConfig(backbone=FCN7Config(dilation=train_cfg.dilation),
                            init_seed=train_cfg.seed)
    model = TPMVCCModel(model_cfg, dataset.cameras, build_planes(scene_cfg))
    return model, scene_cfg


def model_config_echo(train_cfg: TrainConfig, stage: str) -> dict:
    d = train_cfg.echo()
    d["stage"] = stage
    return d


def _epoch_order(n: int, seed: int, stage: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng([seed, stage, epoch])
    return rng.permutation(n)


def _load_frames(dataset: tio.Dataset, split: str = "train"):
    return list(dataset.frames(split))


def train_stage1(dataset: tio.Dataset, model: TPMVCCModel,
                 cfg: TrainConfig) -> TrainReport:
    """Backbone + view head on per-view density supervision, all views pooled."""
    frames = _load_frames(dataset)
    for f in frames:
        if not f.view_density:
            raise ValueError(f"frame {f.frame_id} has no per-view density maps")
    model.set_trainable(["backbone.", "view_head"])
    params = [model.params[n] for n in model.param_names()
              if n.startswith(("backbone.", "view_head"))]
    opt = make_optimizer(cfg.optimizer, params, cfg.lr_stage1)
    samples = [(f.images[vid], f.view_density[vid])
               for f in frames for vid in sorted(f.images)]
    report = TrainReport("stage1", config=model_config_echo(cfg, "1"))
    start = time.time()
    for epoch in range(cfg.epochs_stage1):
        order = _epoch_order(len(samples), cfg.seed, 1, epoch)
        total = 0.0
        for idx in order:
            img, gt = samples[idx]
            opt.zero_grad()
            pred = model.view_density_head(model.backbone_forward(Tensor(img)))
            loss = T.mse_loss(pred, Tensor(gt[None, :, :]))
            loss.backward()
            opt.step()
            total += loss.item()
        report.losses.append(total / len(samples))
    report.wall_clock = time.time() - start
    return report


def _precompute_aligned(model: TPMVCCModel, frames, view_subset):
    """Aligned plane features per frame with the backbone treated as fixed."""
    cached = []
    for f in frames:
        feats = {vid: Tensor(model.backbone_forward(Tensor(f.images[vid])).data)
                 for vid in view_subset}
        aligned = model.align_views(feats)
        cached.append(({k: v.data for k, v in aligned.items()}, f.scene_density))
    return cached


def _train_fusion_decoder(dataset, model, cfg, stage: int, epochs: int, lr: float,
                          decay_period: int | None, trainable_prefixes,
                          use_cache: bool) -> TrainReport:
    frames = _load_frames(dataset)
    view_subset = sorted(cfg.view_subset)
    for vid in view_subset:
        if vid not in dataset.cameras:
            raise ValueError(f"view {vid} not present in dataset")
    model.set_trainable(trainable_prefixes)
    params = [model.params[n] for n in model.param_names()
              if n.startswith(tuple(trainable_prefixes))]
    steps_per_epoch = len(frames)
    period = decay_period * steps_per_epoch if decay_period else None
    opt = make_optimizer(cfg.optimizer, params, lr,
                         decay_gamma=cfg.decay_gamma, decay_period=period)
    cached = _precompute_aligned(model, frames, view_subset) if use_cache else None
    report = TrainReport(f"stage{stage}", config=model_config_echo(cfg, str(stage)))
    start = time.time()
    for epoch in range(epochs):
        order = _epoch_order(len(frames), cfg.seed, stage, epoch)
        total = 0.0
        for idx in order:
            opt.zero_grad()
            if use_cache:
                aligned_data, scene_gt = cached[idx]
                aligned = {k: Tensor(v) for k, v in aligned_data.items()}
                pred = model.fuse_and_decode(aligned)
            else:
                f = frames[idx]
                scene_gt = f.scene_density
                pred = model.forward_scene({vid: Tensor(f.images[vid]) for vid in view_subset})
            loss = T.mse_loss(pred, Tensor(scene_gt[None, :, :]))
            loss.backward()
            opt.step()
            total += loss.item()
        report.losses.append(total / max(len(frames), 1))
    report.wall_clock = time.time() - start
    return report


def train_stage2(dataset: tio.Dataset, model: TPMVCCModel,
                 cfg: TrainConfig) -> TrainReport:
    """Fusion conv + decoder on scene supervision; backbone frozen."""
    return _train_fusion_decoder(
        dataset, model, cfg, stage=2, epochs=cfg.epochs_stage2, lr=cfg.lr_stage2,
        decay_period=None, trainable_prefixes=["fusion.", "decoder."], use_cache=True)


def train_stage3(dataset: tio.Dataset, model: TPMVCCModel,
                 cfg: TrainConfig) -> TrainReport:
    """Joint fine-tuning with step-decayed LR; optionally keeps the backbone fixed."""
    if cfg.backbone_trainable_in_stage3:
        prefixes = ["backbone.", "fusion.", "decoder."]
        use_cache = False
    else:
        prefixes = ["fusion.", "decoder."]
        use_cache = True
    decay_period = max(1, cfg.epochs_stage3 // 3)
    return _train_fusion_decoder(
        dataset, model, cfg, stage=3, epochs=cfg.epochs_stage3, lr=cfg.lr_stage3,
        decay_period=decay_period, trainable_prefixes=prefixes, use_cache=use_cache)


STAGE_FUNCS = {1: train_stage1, 2: train_stage2, 3: train_stage3}


def run_stage(stage: int, dataset: tio.Dataset, cfg: TrainConfig, out_dir,
              prev_ckpt=None) -> tuple[Path, TrainReport]:
    """Run one stage, loading the previous checkpoint if given, and write the
    resulting checkpoint + report under out_dir."""
    out = Path(out_dir)
    model, _ = build_model(dataset, cfg)
    if prev_ckpt is not None:
        state, _ = tio.load_checkpoint(prev_ckpt)
        model.load_state_dict(state)
    elif stage > 1:
        raise ValueError(f"stage {stage} requires a stage-{stage - 1} checkpoint")
    report = STAGE_FUNCS[stage](dataset, model, cfg)
    ckpt_dir = out / f"stage{stage}"
    tio.save_checkpoint(ckpt_dir, model.state_dict(), model_config_echo(cfg, str(stage)))
    report.save(out / f"stage{stage}.report.txt")
    return ckpt_dir, report


def run_all_stages(dataset: tio.Dataset, cfg: TrainConfig, out_dir):
    """Chain stages 1-3; returns the final checkpoint dir and all reports."""
    reports = []
    ckpt = None
    for stage in (1, 2, 3):
        ckpt, report = run_stage(stage, dataset, cfg, out_dir, prev_ckpt=ckpt)
        reports.append(report)
    return ckpt, reports
