"""Batch pipeline stages shared by the CLI and the verification suite.

Each stage writes its artifacts plus a run manifest into the work directory;
stages chain by manifest key, so a rerun with identical configuration and
seeds is detected as up to date and skipped. All stages are deterministic
under (config, seed).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .checkpoint import load_model, save_checkpoint
from .data.ops import SplitRatios, merge_labels, select_balanced_windows, split_dataset
from .data.synthetic import SyntheticRenderer, SyntheticSceneConfig, config_for_trial
from .data.trial_io import (
    TrialWriter,
    list_trial_dirs,
    read_label_track,
    read_trial,
    read_trial_meta,
)
from .data.types import CIRCUITS, GAIT_SPEEDS, ActionClass, FrameRGBD
from .encoder import (
    EncodedInput,
    Window,
    encode_and_transform,
    read_tensor,
    write_tensor,
)
from .errors import ConfigError, DataError, PipelineError
from .manifest import RunManifest, hash_file, hash_text, read_manifest, stage_up_to_date
from .masks import (
    HumanMask,
    MaskConfig,
    composite_window_mask,
    detect_corruption,
    read_mask_png,
    repair_mask,
    segment_person_depth,
    write_mask_png,
)
from .metrics import overlap
from .models import ModelConfig, build_classifier, build_encoder_classifier, build_segmenter
from .simulate import EncoderSettings, plot_simulation, run_trial
from .train import TrainConfig, evaluate, train_classifier, train_segmenter

TRIALS_DIR = "trials"
PREPARED_DIR = "prepared"
ENCODED_DIR = "encoded"
MASKS_DIR = "masks"
RUNS_DIR = "runs"
REPORTS_DIR = "reports"


def _config_dict(obj) -> dict:
    if dataclasses.is_dataclass(obj):
        return json.loads(json.dumps(dataclasses.asdict(obj), default=str))
    return dict(obj)


def settings_key(settings: EncoderSettings) -> str:
    crop = "crop" if settings.crop else "full"
    return f"{settings.form.value}_{crop}_{settings.target}"


@dataclass(frozen=True)
class SynthStageConfig:
    participants: int = 15
    speeds: tuple[float, ...] = GAIT_SPEEDS
    circuits: tuple[str, ...] = CIRCUITS
    reps: int = 2
    seed: int = 0
    scene: SyntheticSceneConfig = SyntheticSceneConfig()

    def __post_init__(self):
        if self.participants < 1 or self.reps < 1:
            raise ConfigError("participants and reps must be >= 1")
        for s in self.speeds:
            if s not in GAIT_SPEEDS:
                raise ConfigError(f"speed {s} not in {GAIT_SPEEDS}")
        for c in self.circuits:
            if c not in CIRCUITS:
                raise ConfigError(f"unknown circuit {c!r}")


@dataclass(frozen=True)
class TrialSpec:
    participant_id: int
    gait_speed: float
    circuit: str
    rep: int
    seed: int


def plan_trials(cfg: SynthStageConfig) -> list[TrialSpec]:
    """Deterministic trial plan: participants x speeds x circuits x reps."""
    specs = []
    for pid in range(1, cfg.participants + 1):
        for speed in cfg.speeds:
            for circuit in cfg.circuits:
                for rep in range(cfg.reps):
                    token = f"{cfg.seed}/{pid}/{speed}/{circuit}/{rep}"
                    seed = int(hashlib.sha256(token.encode()).hexdigest()[:12], 16)
                    specs.append(TrialSpec(pid, speed, circuit, rep, seed))
    return specs


@dataclass
class StageResult:
    path: Path
    fresh: bool


def run_synth(workdir: Path, cfg: SynthStageConfig) -> StageResult:
    out = Path(workdir) / TRIALS_DIR
    manifest = RunManifest(
        stage="synth", config=_config_dict(cfg), seeds={"synth": cfg.seed}, inputs_hash=""
    )
    if stage_up_to_date(out, manifest):
        return StageResult(out, fresh=False)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    started = time.perf_counter()
    count = 0
    for spec in plan_trials(cfg):
        scene = config_for_trial(cfg.scene, spec.participant_id, spec.gait_speed, spec.circuit)
        renderer = SyntheticRenderer(scene, spec.seed)
        writer = TrialWriter(
            out, spec.participant_id, spec.gait_speed, spec.circuit, scene.fps, spec.rep
        )
        for i in range(renderer.num_frames):
            writer.add_frame(i, renderer.frame(i))
        writer.finish(renderer.joy, renderer.vel)
        count += 1
    manifest.duration_s = time.perf_counter() - started
    manifest.outputs = {"trials": count}
    manifest.write(out)
    return StageResult(out, fresh=True)


def _require_stage(workdir: Path, subdir: str, stage: str) -> dict:
    upstream = read_manifest(Path(workdir) / subdir)
    if upstream is None:
        raise PipelineError(stage)
    return upstream


@dataclass(frozen=True)
class PrepareStageConfig:
    windows_per_segment: int = 10
    margin: int = 2
    window_len: int = 4
    stride: int = 2
    ratios: SplitRatios = SplitRatios()


def run_prepare(workdir: Path, cfg: PrepareStageConfig) -> StageResult:
    """Index balanced, boundary-free windows per trial and assign splits."""
    upstream = _require_stage(workdir, TRIALS_DIR, "synth")
    out = Path(workdir) / PREPARED_DIR
    manifest = RunManifest(
        stage="prepare", config=_config_dict(cfg), seeds={}, inputs_hash=upstream["key"]
    )
    if stage_up_to_date(out, manifest):
        return StageResult(out, fresh=False)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    trials = {}
    participants = set()
    for trial_dir in list_trial_dirs(Path(workdir) / TRIALS_DIR):
        meta = read_trial_meta(trial_dir)
        participants.add(meta["participant"])
        fps = meta["fps"]
        n30 = len(list((trial_dir / "rgb").glob("*.png")))
        merged = merge_labels(
            read_label_track(trial_dir / "labels_joy.csv", "JOY"),
            read_label_track(trial_dir / "labels_vel.csv", "VEL"),
        )
        n15 = len(range(0, n30, 2))
        classes = [merged.class_at((2 * i) / fps) for i in range(n15)]
        windows = select_balanced_windows(
            classes, cfg.windows_per_segment, cfg.window_len, cfg.stride, cfg.margin
        )
        trials[trial_dir.name] = {
            "participant": meta["participant"],
            "fps": fps,
            "windows": [[s, int(c)] for s, c in windows],
        }
    if not trials:
        raise DataError("no trials found to prepare")
    split = split_dataset(sorted(participants), cfg.ratios)
    dataset = {
        "split": {
            "train": sorted(split.train_ids),
            "val": sorted(split.val_ids),
            "test": sorted(split.test_ids),
        },
        "trials": trials,
    }
    (out / "dataset.json").write_text(json.dumps(dataset, indent=2, sort_keys=True))
    manifest.duration_s = time.perf_counter() - started
    manifest.outputs = {"trials": len(trials)}
    manifest.write(out)
    return StageResult(out, fresh=True)


def load_dataset_index(workdir: Path) -> dict:
    path = Path(workdir) / PREPARED_DIR / "dataset.json"
    if not path.exists():
        raise PipelineError("prepare")
    return json.loads(path.read_text())


def _window_frame_indices(start: int, window_len: int, fps_ratio: int = 2) -> list[int]:
    """30 Hz frame indices backing a 15 Hz window starting at `start`."""
    return [fps_ratio * (start + k) for k in range(window_len)]


def _read_rgb(trial_dir: Path, index: int) -> np.ndarray:
    path = trial_dir / "rgb" / f"{index:06d}.png"
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DataError(f"missing frame {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def _read_depth(trial_dir: Path, index: int) -> np.ndarray:
    path = trial_dir / "depth" / f"{index:06d}.png"
    depth = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if depth is None:
        raise DataError(f"missing depth frame {path}")
    return np.asarray(depth, dtype=np.uint16)


def run_encode(workdir: Path, settings: EncoderSettings) -> StageResult:
    upstream = _require_stage(workdir, PREPARED_DIR, "prepare")
    key = settings_key(settings)
    out = Path(workdir) / ENCODED_DIR / key
    manifest = RunManifest(
        stage="encode", config=_config_dict(settings), seeds={}, inputs_hash=upstream["key"]
    )
    if stage_up_to_date(out, manifest):
        return StageResult(out, fresh=False)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    started = time.perf_counter()

    dataset = load_dataset_index(workdir)
    total = 0
    for trial_name, info in sorted(dataset["trials"].items()):
        trial_dir = Path(workdir) / TRIALS_DIR / trial_name
        fps = info["fps"]
        needed = sorted(
            {i for start, _ in info["windows"] for i in _window_frame_indices(start, settings.window_len)}
        )
        frames = {}
        for i in needed:
            rgb = _read_rgb(trial_dir, i)
            frames[i] = FrameRGBD(
                rgb=rgb,
                depth=np.ones(rgb.shape[:2], dtype=np.uint16),
                timestamp=i / fps,
            )
        h, w = next(iter(frames.values())).rgb.shape[:2]
        geometry = settings.geometry_for(w, h)
        images, starts, classes, end_times = [], [], [], []
        for start, class_id in info["windows"]:
            window = Window(
                frames=tuple(frames[i] for i in _window_frame_indices(start, settings.window_len)),
                start_index=start,
                fps=fps / 2,
            )
            encoded = encode_and_transform(window, settings.form, geometry, ActionClass(class_id))
            images.append(encoded.image)
            starts.append(start)
            classes.append(class_id)
            end_times.append(window.end_time)
        trial_out = out / trial_name
        trial_out.mkdir(parents=True)
        write_tensor(trial_out / "windows.bin", np.stack(images))
        (trial_out / "windows.json").write_text(
            json.dumps(
                {
                    "starts": starts,
                    "classes": classes,
                    "end_times": end_times,
                    "form": settings.form.value,
                    "cropped": settings.crop,
                    "target": settings.target,
                },
                indent=2,
            )
        )
        total += len(starts)
    manifest.duration_s = time.perf_counter() - started
    manifest.outputs = {"windows": total}
    manifest.write(out)
    return StageResult(out, fresh=True)


def run_masks(workdir: Path, settings: EncoderSettings, mask_cfg: MaskConfig = MaskConfig()) -> StageResult:
    upstream = _require_stage(workdir, PREPARED_DIR, "prepare")
    key = settings_key(settings)
    out = Path(workdir) / MASKS_DIR / key
    manifest = RunManifest(
        stage="masks",
        config={"settings": _config_dict(settings), "mask": _config_dict(mask_cfg)},
        seeds={},
        inputs_hash=upstream["key"],
    )
    if stage_up_to_date(out, manifest):
        return StageResult(out, fresh=False)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    started = time.perf_counter()

    dataset = load_dataset_index(workdir)
    total, skipped = 0, 0
    for trial_name, info in sorted(dataset["trials"].items()):
        trial_dir = Path(workdir) / TRIALS_DIR / trial_name
        trial_out = out / trial_name
        trial_out.mkdir(parents=True)
        kept, dropped = [], []
        depth_cache: dict[int, np.ndarray] = {}
        mask_cache: dict[int, tuple[np.ndarray, bool]] = {}
        geometry = None
        for start, _ in info["windows"]:
            per_frame, corrupted = [], []
            for i in _window_frame_indices(start, settings.window_len):
                if i not in mask_cache:
                    depth = depth_cache.setdefault(i, _read_depth(trial_dir, i))
                    mask = segment_person_depth(depth, mask_cfg)
                    bad = detect_corruption(mask, mask_cfg)
                    if not bad:
                        mask = repair_mask(mask)
                    mask_cache[i] = (mask, bad)
                mask, bad = mask_cache[i]
                per_frame.append(mask)
                corrupted.append(bad)
            if geometry is None:
                h, w = per_frame[0].shape
                geometry = settings.geometry_for(w, h)
            if any(corrupted):
                dropped.append(start)
                skipped += 1
                continue
            human = composite_window_mask(per_frame, settings.form, geometry, start, corrupted)
            write_mask_png(trial_out / f"win_{start:06d}.png", human.mask)
            kept.append(start)
            total += 1
        (trial_out / "masks.json").write_text(
            json.dumps({"kept": kept, "skipped": dropped}, indent=2)
        )
    manifest.duration_s = time.perf_counter() - started
    manifest.outputs = {"masks": total, "skipped": skipped}
    manifest.write(out)
    return StageResult(out, fresh=True)


def load_encoded_split(
    workdir: Path, settings: EncoderSettings, split_name: str
) -> tuple[np.ndarray, np.ndarray, list[tuple[str, int]]]:
    """Stack one split's encoded windows: (images, labels, (trial, start) refs)."""
    dataset = load_dataset_index(workdir)
    encoded_root = Path(workdir) / ENCODED_DIR / settings_key(settings)
    if not read_manifest(encoded_root):
        raise PipelineError("encode")
    wanted = set(dataset["split"][split_name])
    images, labels, refs = [], [], []
    for trial_name, info in sorted(dataset["trials"].items()):
        if info["participant"] not in wanted:
            continue
        sidecar = json.loads((encoded_root / trial_name / "windows.json").read_text())
        tensor = read_tensor(encoded_root / trial_name / "windows.bin")
        images.append(tensor)
        labels.extend(sidecar["classes"])
        refs.extend((trial_name, s) for s in sidecar["starts"])
    if not images:
        raise DataError(f"split {split_name!r} holds no encoded windows")
    return np.concatenate(images), np.asarray(labels, dtype=np.int64), refs


def load_masks_for_refs(
    workdir: Path, settings: EncoderSettings, refs: list[tuple[str, int]]
) -> dict[tuple[str, int], np.ndarray]:
    masks_root = Path(workdir) / MASKS_DIR / settings_key(settings)
    if not read_manifest(masks_root):
        raise PipelineError("masks")
    out = {}
    for trial_name, start in refs:
        path = masks_root / trial_name / f"win_{start:06d}.png"
        if path.exists():
            out[(trial_name, start)] = read_mask_png(path)
    return out


def _build_model(model_cfg: ModelConfig, seed: int, segmenter_ckpt: Path | None):
    if model_cfg.backbone == "segmenter":
        return build_segmenter(model_cfg, seed)
    if model_cfg.backbone == "encoder_classifier":
        weights = None
        if segmenter_ckpt is not None:
            seg_model, _ = load_model(segmenter_ckpt)
            weights = seg_model.encoder.state_dict()
        return build_encoder_classifier(model_cfg, weights, seed)
    return build_classifier(model_cfg, seed)


def run_train(
    workdir: Path,
    settings: EncoderSettings,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    name: str | None = None,
    segmenter_ckpt: Path | None = None,
) -> StageResult:
    encoded_manifest = read_manifest(Path(workdir) / ENCODED_DIR / settings_key(settings))
    if encoded_manifest is None:
        raise PipelineError("encode")
    inputs = [encoded_manifest["key"]]
    if train_cfg.task == "segmentation":
        masks_manifest = read_manifest(Path(workdir) / MASKS_DIR / settings_key(settings))
        if masks_manifest is None:
            raise PipelineError("masks")
        inputs.append(masks_manifest["key"])
    if segmenter_ckpt is not None:
        inputs.append(hash_file(Path(segmenter_ckpt)))

    if name is None:
        att = "_att" if model_cfg.attention else ""
        name = f"{train_cfg.task[:3]}_{model_cfg.backbone}{att}_{settings_key(settings)}_s{train_cfg.seed}"
    out = Path(workdir) / RUNS_DIR / name
    manifest = RunManifest(
        stage="train",
        config={
            "settings": _config_dict(settings),
            "model": _config_dict(model_cfg),
            "train": _config_dict(train_cfg),
        },
        seeds={"train": train_cfg.seed},
        inputs_hash=hash_text("/".join(inputs)),
    )
    if stage_up_to_date(out, manifest):
        return StageResult(out, fresh=False)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    started = time.perf_counter()

    model = _build_model(model_cfg, train_cfg.seed, segmenter_ckpt)
    if train_cfg.task == "classification":
        train_images, train_labels, _ = load_encoded_split(workdir, settings, "train")
        val_images, val_labels, _ = load_encoded_split(workdir, settings, "val")
        log = train_classifier(model, (train_images, train_labels), (val_images, val_labels), train_cfg)
    else:
        train_images, _, train_refs = load_encoded_split(workdir, settings, "train")
        val_images, _, val_refs = load_encoded_split(workdir, settings, "val")
        train_masks = load_masks_for_refs(workdir, settings, train_refs)
        val_masks = load_masks_for_refs(workdir, settings, val_refs)

        def _pair(images, refs, mask_map):
            keep = [k for k, r in enumerate(refs) if r in mask_map]
            if not keep:
                raise DataError("no uncorrupted masks paired with encoded windows")
            stacked = np.stack([mask_map[refs[k]].astype(np.float32) for k in keep])
            return images[keep], stacked

        log = train_segmenter(
            model, _pair(train_images, train_refs, train_masks), _pair(val_images, val_refs, val_masks), train_cfg
        )

    log.to_csv(out / "log.csv")
    ckpt_manifest = {
        "model_config": model_cfg.as_dict(),
        "task": train_cfg.task,
        "seed": train_cfg.seed,
        "epoch": log.best_epoch,
        "val_metric": log.best_value,
        "selection": log.selection,
    }
    save_checkpoint(out / "best.ckpt", model, ckpt_manifest)
    if log.last_state is not None:
        last = _build_model(model_cfg, train_cfg.seed, None)
        last.load_state_dict(log.last_state)
        save_checkpoint(out / "last.ckpt", last, {**ckpt_manifest, "epoch": log.epochs_run - 1})
    manifest.duration_s = time.perf_counter() - started
    manifest.outputs = {
        "epochs": log.epochs_run,
        "best_epoch": log.best_epoch,
        "best_value": log.best_value,
    }
    manifest.write(out)
    return StageResult(out, fresh=True)


def run_eval(
    workdir: Path,
    ckpt: Path,
    settings: EncoderSettings,
    split: str = "val",
    out_path: Path | None = None,
) -> Path:
    model, ckpt_manifest = load_model(ckpt)
    reports = Path(workdir) / REPORTS_DIR
    reports.mkdir(parents=True, exist_ok=True)
    if out_path is None:
        out_path = reports / f"eval_{Path(ckpt).parent.name}_{split}.json"
    if ckpt_manifest.get("task") == "segmentation":
        images, _, refs = load_encoded_split(workdir, settings, split)
        mask_map = load_masks_for_refs(workdir, settings, refs)
        dices, ious = [], []
        for i, ref in enumerate(refs):
            if ref not in mask_map:
                continue
            pred = model.segment(images[i]) >= 0.5
            iou, dice = overlap(pred, mask_map[ref])
            dices.append(dice)
            ious.append(iou)
        if not dices:
            raise DataError("no mask pairs available for evaluation")
        report = {
            "overlap": {
                "dice_mean": float(np.mean(dices)),
                "dice_std": float(np.std(dices)),
                "iou_mean": float(np.mean(ious)),
                "iou_std": float(np.std(ious)),
            },
            "samples": len(dices),
        }
    else:
        images, labels, _ = load_encoded_split(workdir, settings, split)
        report = evaluate(model, images, labels)
    Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return Path(out_path)


def run_focus(
    workdir: Path,
    ckpt: Path,
    settings: EncoderSettings,
    split: str = "val",
    out_path: Path | None = None,
):
    from .focus import focus_report

    model, _ = load_model(ckpt)
    images, labels, refs = load_encoded_split(workdir, settings, split)
    mask_map = load_masks_for_refs(workdir, settings, refs)
    samples = []
    for i, ref in enumerate(refs):
        if ref not in mask_map:
            continue
        encoded = EncodedInput(
            image=images[i],
            form=settings.form,
            cropped=settings.crop,
            window_ref=ref[1],
            action=ActionClass(int(labels[i])),
        )
        samples.append((encoded, HumanMask(mask=mask_map[ref], corrupted=False, source_window=ref[1])))
    report = focus_report(model, samples)
    reports = Path(workdir) / REPORTS_DIR
    reports.mkdir(parents=True, exist_ok=True)
    if out_path is None:
        out_path = reports / f"focus_{Path(ckpt).parent.name}_{split}.csv"
    out_path = Path(out_path)
    report.to_csv(out_path)
    report.to_json(out_path.with_suffix(".json"))
    return report, out_path


def run_simulate(
    workdir: Path,
    ckpt: Path,
    trial_dir: Path,
    settings: EncoderSettings,
    out_path: Path | None = None,
    gt_track: str = "merged",
    plot: bool = False,
):
    model, _ = load_model(ckpt)
    trial = read_trial(trial_dir)
    sim = run_trial(trial, model, settings, gt_track=gt_track)
    reports = Path(workdir) / REPORTS_DIR
    reports.mkdir(parents=True, exist_ok=True)
    if out_path is None:
        out_path = reports / f"sim_{Path(trial_dir).name}.json"
    out_path = Path(out_path)
    sim.to_json(out_path)
    if plot:
        plot_simulation(
            sim,
            out_path.with_suffix(".labels.png"),
            out_path.with_suffix(".metrics.png"),
        )
    return sim, out_path


def run_report(workdir: Path) -> dict:
    """Aggregate stage manifests and report files into one summary."""
    workdir = Path(workdir)
    summary: dict = {"stages": {}, "reports": []}
    for sub in (TRIALS_DIR, PREPARED_DIR):
        manifest = read_manifest(workdir / sub)
        if manifest:
            summary["stages"][manifest["stage"]] = {
                "key": manifest["key"],
                "outputs": manifest.get("outputs", {}),
            }
    for root in (workdir / ENCODED_DIR, workdir / MASKS_DIR, workdir / RUNS_DIR):
        if not root.exists():
            continue
        for child in sorted(root.iterdir()):
            manifest = read_manifest(child)
            if manifest:
                summary["stages"][f"{manifest['stage']}:{child.name}"] = {
                    "key": manifest["key"],
                    "outputs": manifest.get("outputs", {}),
                }
    reports_dir = workdir / REPORTS_DIR
    if reports_dir.exists():
        summary["reports"] = sorted(p.name for p in reports_dir.iterdir() if p.is_file())
    out = workdir / REPORTS_DIR
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
