"""Command-line interface: simulate -> train -> eval -> render."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import io as tio
from .evaluation import evaluate_baseline, evaluate_model, format_results_table
from .simulator import SceneConfig, emit_dataset, load_scene_config
from .training import TrainConfig, build_model, run_all_stages, run_stage


@click.group()
def main():
    """Multi-view density-map counting: synthetic data, training, evaluation."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Scene config file (key = value); defaults used when omitted.")
@click.option("--frames", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--train-fraction", type=float, default=0.5, show_default=True)
def simulate(config_path, frames, seed, out_dir, train_fraction):
    """Generate a synthetic multi-view dataset."""
    cfg = load_scene_config(config_path) if config_path else SceneConfig()
    if seed is not None:
        cfg = SceneConfig(**{**cfg.__dict__, "seed": seed})
    emit_dataset(cfg, frames, out_dir, train_fraction)
    click.echo(f"wrote {frames} frames to {out_dir}")


def _parse_views(views: str) -> tuple:
    try:
        return tuple(sorted({int(v) for v in views.split(",") if v != ""}))
    except ValueError:
        raise click.BadParameter(f"bad view list {views!r}; expected e.g. '0,2'")


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--stage", type=click.Choice(["1", "2", "3", "all"]), default="all",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Training config file (key = value) overriding defaults.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--ckpt", "prev_ckpt", type=click.Path(), default=None,
              help="Previous-stage checkpoint (required for stages 2 and 3).")
@click.option("--views", default="0,1,2", show_default=True,
              help="Comma-separated view ids used for fusion training.")
@click.option("--dilation", type=int, default=2, show_default=True)
@click.option("--freeze-backbone", is_flag=True,
              help="Keep the backbone fixed during stage 3.")
@click.option("--seed", type=int, default=0, show_default=True)
def train(data_dir, stage, config_path, out_dir, prev_ckpt, views, dilation,
          freeze_backbone, seed):
    """Run one training stage or the full 3-stage schedule."""
    dataset = tio.open_dataset(data_dir)
    overrides = {}
    if config_path:
        kv = tio.read_kv(config_path)
        for name, f in TrainConfig.__dataclass_fields__.items():
            if name in kv:
                if name == "view_subset":
                    overrides[name] = _parse_views(kv[name])
                elif f.type == "bool":
                    overrides[name] = kv[name].lower() in ("1", "true", "yes")
                elif f.type == "int":
                    overrides[name] = int(kv[name])
                elif f.type == "float":
                    overrides[name] = float(kv[name])
                else:
                    overrides[name] = kv[name]
    cfg = TrainConfig(**overrides)
    cfg.view_subset = overrides.get("view_subset", _parse_views(views))
    cfg.dilation = overrides.get("dilation", dilation)
    cfg.backbone_trainable_in_stage3 = overrides.get(
        "backbone_trainable_in_stage3", not freeze_backbone)
    cfg.seed = overrides.get("seed", seed)
    if stage == "all":
        ckpt, reports = run_all_stages(dataset, cfg, out_dir)
        for r in reports:
            click.echo(f"{r.stage}: final loss {r.losses[-1]:.6g} "
                       f"({r.wall_clock:.1f}s)")
    else:
        n = int(stage)
        if n > 1 and prev_ckpt is None:
            candidate = Path(out_dir) / f"stage{n - 1}"
            if not (candidate / "params.txt").exists():
                raise click.ClickException(
                    f"stage {n} needs a stage-{n - 1} checkpoint; "
                    f"pass --ckpt (looked for {candidate / 'params.txt'})")
            prev_ckpt = candidate
        ckpt, report = run_stage(n, dataset, cfg, out_dir, prev_ckpt=prev_ckpt)
        click.echo(f"{report.stage}: final loss {report.losses[-1]:.6g} "
                   f"({report.wall_clock:.1f}s)")
    click.echo(f"final checkpoint: {ckpt}")


@main.command("eval")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--views", "views_list", multiple=True, default=("0,1,2",),
              show_default=True, help="Repeatable; each value is a view subset.")
@click.option("--baseline", type=click.Choice(["dwf", "mf", "none"]), default="none",
              show_default=True)
@click.option("--split", type=click.Choice(["train", "val"]), default="val",
              show_default=True)
@click.option("--out-csv", type=click.Path(), default=None)
@click.option("--dilation", type=int, default=2, show_default=True)
def eval_cmd(data_dir, ckpt, views_list, baseline, split, out_csv, dilation):
    """Evaluate a checkpoint (and optionally a late-fusion baseline)."""
    dataset = tio.open_dataset(data_dir)
    cfg = TrainConfig(dilation=dilation)
    model, scene_cfg = build_model(dataset, cfg)
    state, ckpt_cfg = tio.load_checkpoint(ckpt)
    if "dilation" in ckpt_cfg:
        ck_d = int(ckpt_cfg["dilation"])
        if ck_d != dilation:
            model, scene_cfg = build_model(dataset, TrainConfig(dilation=ck_d))
    model.load_state_dict(state)
    frames = list(dataset.frames(split))
    from .simulator import build_planes
    from .geometry import GROUND
    plane = build_planes(scene_cfg)[GROUND]
    results = []
    for views in views_list:
        subset = _parse_views(views)
        results.append(evaluate_model(model, frames, subset))
        if baseline != "none":
            results.append(evaluate_baseline(baseline, model, frames, subset, plane))
    click.echo(format_results_table(results))
    if out_csv:
        rows = [{"method": r.method, "views": ",".join(str(v) for v in r.views),
                 "mae": r.mae, "mse": r.mse, "rmse": r.rmse, "rate": r.rate}
                for r in results]
        tio.write_results_csv(out_csv, rows)
        click.echo(f"wrote {out_csv}")


@main.command()
@click.option("--den", "den_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--scale", default="auto", show_default=True,
              help="'auto' maps the max cell to 255, or a fixed multiplier.")
def render(den_path, out_path, scale):
    """Render a 2-D density tensor file as an 8-bit PGM image."""
    arr = tio.read_tensor(den_path)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise click.ClickException(f"{den_path} is not a 2-D density map")
    tio.write_pgm(out_path, arr, scale=scale if scale == "auto" else float(scale))
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
