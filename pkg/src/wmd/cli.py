"""Command-line entry point orchestrating the full pipeline.

Stages run in order: synth, prepare, encode, masks, train, eval, focus,
simulate, report. Every artifact-producing stage records a run manifest and
skips itself when already up to date. Exit codes: 0 success, 2 configuration
error, 3 data/pipeline error, 4 numerical divergence.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import pipeline
from .config import (
    encoder_settings,
    load_config,
    mask_config,
    model_config,
    prepare_config,
    synth_config,
    train_config,
)
from .errors import ConfigError, DivergenceError, RoiError, WmdError


def _workdir(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get("WMD_CACHE_DIR")
    return Path(env) if env else Path("wmd_cache")


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="TOML config file.")
@click.option("--workdir", type=str, default=None, help="Artifact cache root (default: $WMD_CACHE_DIR or ./wmd_cache).")
@click.pass_context
def cli(ctx, config_path, workdir):
    """Walker motion decoding pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_config(config_path)
    ctx.obj["workdir"] = _workdir(workdir)


def _report_stage(result: pipeline.StageResult, label: str) -> None:
    if result.fresh:
        click.echo(f"{label}: wrote {result.path}")
    else:
        click.echo(f"{label}: up to date ({result.path})")


@cli.command()
@click.option("--participants", type=int, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def synth(ctx, participants, reps, seed):
    """Render the synthetic trial tree."""
    cfg = synth_config(ctx.obj["config"], participants=participants, reps=reps, seed=seed)
    _report_stage(pipeline.run_synth(ctx.obj["workdir"], cfg), "synth")


@cli.command()
@click.option("--windows-per-segment", type=int, default=None)
@click.option("--margin", type=int, default=None)
@click.pass_context
def prepare(ctx, windows_per_segment, margin):
    """Index balanced windows and assign dataset splits."""
    cfg = prepare_config(ctx.obj["config"], windows_per_segment=windows_per_segment, margin=margin)
    _report_stage(pipeline.run_prepare(ctx.obj["workdir"], cfg), "prepare")


def _settings(ctx, form, crop, target):
    return encoder_settings(ctx.obj["config"], form=form, crop=crop, target=target)


@cli.command()
@click.option("--form", type=click.Choice(["dif", "add"]), default=None)
@click.option("--crop/--no-crop", default=None)
@click.option("--target", type=int, default=None)
@click.pass_context
def encode(ctx, form, crop, target):
    """Encode indexed windows into cached input tensors."""
    settings = _settings(ctx, form, crop, target)
    _report_stage(pipeline.run_encode(ctx.obj["workdir"], settings), "encode")


@cli.command()
@click.option("--form", type=click.Choice(["dif", "add"]), default=None)
@click.option("--crop/--no-crop", default=None)
@click.option("--target", type=int, default=None)
@click.pass_context
def masks(ctx, form, crop, target):
    """Generate window-level human masks from depth frames."""
    settings = _settings(ctx, form, crop, target)
    cfg = mask_config(ctx.obj["config"])
    _report_stage(pipeline.run_masks(ctx.obj["workdir"], settings, cfg), "masks")


@cli.command()
@click.option("--task", type=click.Choice(["cls", "seg"]), required=True)
@click.option("--backbone", type=str, default=None)
@click.option("--attention/--no-attention", default=None)
@click.option("--scale", type=float, default=None)
@click.option("--input-size", type=int, default=None)
@click.option("--epochs", "max_epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--early-stop", "early_stop_value", type=float, default=None)
@click.option("--name", type=str, default=None)
@click.option("--segmenter-ckpt", type=click.Path(path_type=Path), default=None)
@click.option("--form", type=click.Choice(["dif", "add"]), default=None)
@click.option("--crop/--no-crop", default=None)
@click.option("--target", type=int, default=None)
@click.pass_context
def train(ctx, task, backbone, attention, scale, input_size, max_epochs, batch_size, lr, seed,
          early_stop_value, name, segmenter_ckpt, form, crop, target):
    """Train a classifier or the segmenter on the encoded cache."""
    task_name = "classification" if task == "cls" else "segmentation"
    settings = _settings(ctx, form, crop, target)
    if task == "seg":
        backbone = backbone or "segmenter"
    mdl = model_config(
        ctx.obj["config"],
        backbone=backbone,
        attention=attention,
        scale=scale,
        input_size=input_size if input_size is not None else settings.target,
    )
    trn = train_config(
        ctx.obj["config"],
        task_name,
        max_epochs=max_epochs,
        batch_size=batch_size,
        lr=lr,
        seed=seed,
        early_stop_value=early_stop_value,
    )
    result = pipeline.run_train(
        ctx.obj["workdir"], settings, mdl, trn, name=name, segmenter_ckpt=segmenter_ckpt
    )
    _report_stage(result, "train")


@cli.command(name="eval")
@click.option("--ckpt", type=click.Path(path_type=Path), required=True)
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="val")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--form", type=click.Choice(["dif", "add"]), default=None)
@click.option("--crop/--no-crop", default=None)
@click.option("--target", type=int, default=None)
@click.pass_context
def eval_cmd(ctx, ckpt, split, out, form, crop, target):
    """Offline metric report for a trained checkpoint."""
    settings = _settings(ctx, form, crop, target)
    path = pipeline.run_eval(ctx.obj["workdir"], ckpt, settings, split, out)
    click.echo(f"eval: wrote {path}")


@cli.command()
@click.option("--ckpt", type=click.Path(path_type=Path), required=True)
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="val")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--form", type=click.Choice(["dif", "add"]), default=None)
@click.option("--crop/--no-crop", default=None)
@click.option("--target", type=int, default=None)
@click.pass_context
def focus(ctx, ckpt, split, out, form, crop, target):
    """Score model focus against human masks (heatmap vs mask overlap)."""
    settings = _settings(ctx, form, crop, target)
    report, path = pipeline.run_focus(ctx.obj["workdir"], ckpt, settings, split, out)
    click.echo(f"focus: wrote {path} ({len(report.rows)} rows, {report.skipped_corrupted} skipped)")


@cli.command()
@click.option("--ckpt", type=click.Path(path_type=Path), required=True)
@click.option("--trial", "trial_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--gt-track", type=click.Choice(["merged", "joy", "vel"]), default="merged")
@click.option("--plot", is_flag=True, default=False)
@click.option("--form", type=click.Choice(["dif", "add"]), default=None)
@click.option("--crop/--no-crop", default=None)
@click.option("--target", type=int, default=None)
@click.pass_context
def simulate(ctx, ckpt, trial_dir, out, gt_track, plot, form, crop, target):
    """Stream an untrimmed trial through the model with debouncing."""
    settings = _settings(ctx, form, crop, target)
    sim, path = pipeline.run_simulate(
        ctx.obj["workdir"], ckpt, trial_dir, settings, out, gt_track=gt_track, plot=plot
    )
    median_ms = 1000 * float(sim.latencies_s.mean())
    click.echo(
        f"simulate: wrote {path} ({len(sim.times)} windows, "
        f"mean latency {median_ms:.1f} ms, final IA {sim.metrics[-1].ia:.4f})"
    )


@cli.command()
@click.pass_context
def report(ctx):
    """Summarize all stage manifests and report files."""
    summary = pipeline.run_report(ctx.obj["workdir"])
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 130
    except click.exceptions.ClickException as exc:
        exc.show()
        return 2
    except (ConfigError, RoiError) as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except DivergenceError as exc:
        click.echo(f"divergence: {exc}", err=True)
        return 4
    except WmdError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
