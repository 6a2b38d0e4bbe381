"""Multi-task training loop, evaluation protocols, and bundle persistence.

Each training step interleaves tasks by sampling from the configured task mix,
builds the task's colorization target on the fly, forms the noisy interpolant,
and regresses the velocity (noise minus data) with the flow-matching loss.
The color codec is frozen throughout; only the flow transformer trains.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import decode as decode_ops
from .checkpoint import read_container, write_container
from .codec import CodecParams, decode, encode, identity_codec, load_codec, save_codec
from .config import DEFAULTS
from .errors import (
    CodecNotFrozenError,
    EmptyDatasetError,
    NonFiniteLossError,
    UnknownProtocolError,
)
from .flow import LossConfig, cfm_loss_tensor, euler_sample, interpolate, noise_like
from .grids import PartLabeling, SparseVoxelGrid
from .model import (
    TASK_FULL,
    TASK_GUIDED,
    TASK_INTERACTIVE,
    TASK_NAMES,
    ModelConfig,
    PointPrompt,
    TaskCondition,
    VelocityTransformer,
    load_parameters_flat,
    parameters_flat,
)
from .shapes import (
    DatasetEntry,
    make_full_target,
    make_interactive_target,
    render_guidance,
    shape_palette,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    max_steps: int = 2000
    task_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    log_every: int = 50
    checkpoint_every: int = 0
    guidance_view: str = "+z"
    guidance_size: int = 64
    lr_schedule: str = "constant"  # constant | cosine
    lr_final_fraction: float = 0.1
    weighting: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if abs(sum(self.task_mix) - 1.0) > 1e-9 or any(p < 0 for p in self.task_mix):
            raise ValueError("task_mix must be a probability triple")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        floor = self.learning_rate * self.lr_final_fraction
        progress = (step - 1) / max(1, self.max_steps - 1)
        return floor + (self.learning_rate - floor) * 0.5 * (
            1.0 + np.cos(np.pi * progress)
        )


@dataclass
class ModelBundle:
    """Everything needed to answer all three tasks with one checkpoint."""

    codec: CodecParams
    flow: VelocityTransformer
    config: dict
    step: int = 0

    def __post_init__(self):
        if not self.codec.frozen:
            raise CodecNotFrozenError("bundle requires a frozen codec")


def _prepare_entry(codec: CodecParams, entry: DatasetEntry):
    z = encode(codec, entry.grid)
    return {
        "entry": entry,
        "z": z,
        "z_t": torch.from_numpy(z.latents),
        "coords_t": torch.from_numpy(z.coords.astype(np.int64)),
        "palettes": {},
    }


def _palette_for(prep, index: int):
    if index not in prep["palettes"]:
        entry = prep["entry"]
        prep["palettes"][index] = shape_palette(entry.labeling, entry.seed, index)
    return prep["palettes"][index]


def _sample_condition(prep, task: int, rng: np.random.Generator, cfg: TrainConfig):
    """Draw one training sample's colorization target and condition."""
    entry = prep["entry"]
    grid, labeling = entry.grid, entry.labeling
    if task == TASK_INTERACTIVE:
        part = int(rng.integers(labeling.num_parts))
        rows = np.nonzero(labeling.mask(part))[0]
        n_clicks = int(rng.integers(1, 11))
        # i.i.d. with replacement: repeated clicks occur at inference time too
        # (the click protocol re-submits click 1 once a part is covered)
        chosen = rng.choice(rows, size=n_clicks, replace=True)
        prompt = PointPrompt(points=grid.centers()[np.sort(chosen)])
        return make_interactive_target(grid, labeling, part), TaskCondition(
            TASK_INTERACTIVE, prompt=prompt
        )
    palette = _palette_for(prep, int(rng.integers(10)))
    target = make_full_target(grid, labeling, palette)
    if task == TASK_FULL:
        return target, TaskCondition(TASK_FULL)
    gmap = render_guidance(
        grid, target, view=cfg.guidance_view, width=cfg.guidance_size, height=cfg.guidance_size
    )
    return target, TaskCondition(TASK_GUIDED, guidance=gmap)


def train(
    cfg: TrainConfig,
    entries: list[DatasetEntry],
    model_config: ModelConfig | None = None,
    codec_params: CodecParams | None = None,
    out_dir=None,
    log=None,
) -> tuple[ModelBundle, list[dict]]:
    """Train the multi-task flow model; returns the bundle and the loss curve.

    Deterministic for a fixed config: one RNG stream drives every sampling
    decision and torch is seeded before parameter init.
    """
    if not entries:
        raise EmptyDatasetError("training requires a non-empty dataset")
    codec_params = codec_params or identity_codec()
    if not codec_params.frozen:
        raise CodecNotFrozenError("codec must be frozen before flow training")
    model_config = model_config or ModelConfig(d_latent=codec_params.d_lat)
    if model_config.d_latent != codec_params.d_lat:
        raise ValueError("model d_latent must equal the codec's d_lat")

    codec_checksum = codec_params.checksum()
    torch.manual_seed(cfg.seed)
    model = VelocityTransformer(model_config)
    opt = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )
    rng = np.random.default_rng(cfg.seed)
    prepared = [_prepare_entry(codec_params, e) for e in entries]

    curve: list[dict] = []
    tasks = (TASK_INTERACTIVE, TASK_FULL, TASK_GUIDED)
    for step in range(1, cfg.max_steps + 1):
        lr = cfg.lr_at(step)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad()
        batch_losses, batch_tasks = [], []
        for _ in range(cfg.batch_size):
            task = int(rng.choice(tasks, p=cfg.task_mix))
            prep = prepared[int(rng.integers(len(prepared)))]
            target, cond = _sample_condition(prep, task, rng, cfg)
            y = encode(codec_params, target)
            t = float(rng.uniform())
            eps = noise_like(y, int(rng.integers(2**31)))
            y_t = interpolate(y, eps, t)
            tokens, guidance = model.condition_tensors(cond)
            v_hat = model(
                torch.from_numpy(y_t.latents),
                prep["z_t"],
                prep["coords_t"],
                t,
                task,
                tokens,
                guidance,
                latent_resolution=prep["z"].resolution,
            )
            loss = cfm_loss_tensor(
                v_hat, torch.from_numpy(y.latents), torch.from_numpy(eps.latents), t, cfg.weighting
            )
            if not torch.isfinite(loss):
                raise NonFiniteLossError(f"loss became non-finite at step {step}")
            (loss / cfg.batch_size).backward()
            batch_losses.append(float(loss.detach()))
            batch_tasks.append(TASK_NAMES[task])
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        record = {
            "step": step,
            "loss": float(np.mean(batch_losses)),
            "tasks": batch_tasks,
        }
        curve.append(record)
        if log and (step % cfg.log_every == 0 or step == 1):
            log(f"step {step:>6d}  loss {record['loss']:.5f}  tasks {batch_tasks}")
        if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_bundle(
                ModelBundle(codec_params, model, _config_echo(cfg, model_config), step),
                out_dir,
            )

    if codec_params.checksum() != codec_checksum:
        raise CodecNotFrozenError("codec parameters changed during flow training")
    bundle = ModelBundle(codec_params, model, _config_echo(cfg, model_config), cfg.max_steps)
    if out_dir:
        save_bundle(bundle, out_dir)
    return bundle, curve


def _config_echo(cfg: TrainConfig, model_config: ModelConfig) -> dict:
    return {
        "train": {
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "max_steps": cfg.max_steps,
            "task_mix": list(cfg.task_mix),
            "seed": cfg.seed,
            "beta1": cfg.betas[0],
            "beta2": cfg.betas[1],
            "weight_decay": cfg.weight_decay,
            "grad_clip": cfg.grad_clip,
        },
        "model": {
            "d_model": model_config.d_model,
            "blocks": model_config.blocks,
            "heads": model_config.heads,
            "point_embed": model_config.point_embed,
            "patch_size": model_config.patch_size,
            "d_latent": model_config.d_latent,
            "d_freq": model_config.d_freq,
            "ffn_ratio": model_config.ffn_ratio,
            "mask_padded": model_config.mask_padded,
        },
    }


# --- inference helpers ------------------------------------------------------------


def sample_colored(
    bundle: ModelBundle,
    grid: SparseVoxelGrid,
    cond: TaskCondition,
    steps: int,
    seed: int,
) -> SparseVoxelGrid:
    """Run the sampler for one shape and decode latents back to voxel colors."""
    z = encode(bundle.codec, grid)
    x = euler_sample(bundle.flow, z, cond, steps, seed)
    return decode(bundle.codec, x, grid.coords)


def interactive_segmenter(bundle: ModelBundle, grid: SparseVoxelGrid, steps: int):
    """Bind the bundle to one shape: (click points, seed) -> boolean mask."""
    z = encode(bundle.codec, grid)

    def segmenter(points: np.ndarray, sample_seed: int) -> np.ndarray:
        cond = TaskCondition(TASK_INTERACTIVE, prompt=PointPrompt(points=points))
        x = euler_sample(bundle.flow, z, cond, steps, sample_seed)
        colored = decode(bundle.codec, x, grid.coords)
        return decode_ops.decode_interactive(colored)

    return segmenter


PROTOCOLS = ("iou_at_n", "full", "guided_full")


def evaluate(
    bundle: ModelBundle,
    entries: list[DatasetEntry],
    protocol: str,
    steps: int = 12,
    seed: int = 0,
    delta_c: float = 0.3,
    policy: str = "interior",
    guidance_view: str = "+z",
    guidance_size: int = 64,
    dataset_name: str = "",
    checkpoint: str = "",
) -> dict:
    """Run one evaluation protocol and emit the metrics report."""
    if protocol not in PROTOCOLS:
        raise UnknownProtocolError(f"protocol must be one of {PROTOCOLS}")
    if not entries:
        raise EmptyDatasetError("evaluation requires a non-empty dataset")
    report = {
        "dataset": dataset_name,
        "checkpoint": checkpoint,
        "protocol": protocol,
        "steps": steps,
        "seed": seed,
        "iou_at": None,
        "full_iou": None,
    }
    timer = {"calls": 0, "elapsed": 0.0}

    if protocol == "iou_at_n":

        def make_segmenter(entry):
            inner = interactive_segmenter(bundle, entry.grid, steps)

            def timed(points, sample_seed):
                start = time.perf_counter()
                out = inner(points, sample_seed)
                timer["elapsed"] += time.perf_counter() - start
                timer["calls"] += 1
                return out

            return timed

        sub = decode_ops.iou_at_n_report(make_segmenter, entries, seed=seed, policy=policy)
        report.update(sub)
    else:
        guided = protocol == "guided_full"
        per_shape = []
        total = 0.0
        for idx, entry in enumerate(entries):
            if guided:
                palette = shape_palette(entry.labeling, entry.seed, 0)
                target = make_full_target(entry.grid, entry.labeling, palette)
                gmap = render_guidance(
                    entry.grid, target, view=guidance_view,
                    width=guidance_size, height=guidance_size,
                )
                cond = TaskCondition(TASK_GUIDED, guidance=gmap)
            else:
                cond = TaskCondition(TASK_FULL)
            start = time.perf_counter()
            colored = sample_colored(bundle, entry.grid, cond, steps, seed + idx)
            timer["elapsed"] += time.perf_counter() - start
            timer["calls"] += 1
            if guided:
                pred = decode_ops.decode_guided(colored, palette)
            else:
                pred = decode_ops.decode_full(colored, delta_c)
            match = decode_ops.match_parts(pred, entry.labeling)
            score = 100.0 * match.mean_iou
            total += score
            per_shape.append(
                {
                    "id": entry.shape_id,
                    "num_parts": entry.labeling.num_parts,
                    "pred_parts": pred.num_parts,
                    "full_iou": score,
                }
            )
        report["per_shape"] = per_shape
        report["full_iou"] = total / len(entries)

    report["time_per_inference_s"] = (
        timer["elapsed"] / timer["calls"] if timer["calls"] else 0.0
    )
    return report


def run_segmentation(
    bundle: ModelBundle,
    grid: SparseVoxelGrid,
    labeling: PartLabeling | None,
    task_name: str,
    clicks: list[tuple[int, int, int]],
    steps: int = 12,
    seed: int = 0,
    palette_seed: int | None = None,
    delta_c: float = 0.3,
    guidance_view: str = "+z",
    guidance_size: int = 64,
) -> dict:
    """One end-to-end request: colors, decoded labels, and IoU versus ground
    truth when a labeling is available. Used by both the CLI and the service."""
    name_to_task = {v: k for k, v in TASK_NAMES.items()}
    if task_name not in name_to_task:
        raise UnknownProtocolError(f"task must be one of {sorted(name_to_task)}")
    task = name_to_task[task_name]
    index = grid.index_of()
    rows = []
    for c in clicks:
        key = tuple(int(v) for v in c)
        if key not in index:
            raise ValueError(f"click {key} is not an active voxel")
        rows.append(index[key])

    palette = None
    if task == TASK_INTERACTIVE:
        cond = TaskCondition(
            TASK_INTERACTIVE, prompt=PointPrompt(points=grid.centers()[rows])
        )
    elif task == TASK_FULL:
        cond = TaskCondition(TASK_FULL)
    else:
        if labeling is None:
            raise ValueError("guided segmentation requires ground-truth labels")
        from .grids import sample_palette_adaptive

        palette = sample_palette_adaptive(
            labeling.num_parts, palette_seed if palette_seed is not None else seed
        )
        target = make_full_target(grid, labeling, palette)
        gmap = render_guidance(
            grid, target, view=guidance_view, width=guidance_size, height=guidance_size
        )
        cond = TaskCondition(TASK_GUIDED, guidance=gmap)

    start = time.perf_counter()
    colored = sample_colored(bundle, grid, cond, steps, seed)
    elapsed_ms = 1000.0 * (time.perf_counter() - start)

    iou_vs_gt = None
    if task == TASK_INTERACTIVE:
        mask = decode_ops.decode_interactive(colored)
        labels = mask.astype(np.int32)
        if labeling is not None and rows:
            part_id = int(labeling.labels[rows[0]])
            iou_vs_gt = decode_ops.iou(mask, labeling.mask(part_id))
    else:
        if task == TASK_GUIDED:
            pred = decode_ops.decode_guided(colored, palette)
        else:
            pred = decode_ops.decode_full(colored, delta_c)
        labels = pred.labels
        if labeling is not None:
            iou_vs_gt = decode_ops.match_parts(pred, labeling).mean_iou

    return {
        "colors": colored.colors.copy(),
        "labels": np.asarray(labels, dtype=np.int32),
        "iou_vs_gt": iou_vs_gt,
        "elapsed_ms": elapsed_ms,
        "colored_grid": colored,
    }


# --- persistence ----------------------------------------------------------------


def save_bundle(bundle: ModelBundle, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_codec(bundle.codec, out_dir / "codec.ckpt")
    cfg = bundle.flow.config
    header = {
        "kind": "flow",
        "step": bundle.step,
        "model": {
            "d_model": cfg.d_model,
            "blocks": cfg.blocks,
            "heads": cfg.heads,
            "point_embed": cfg.point_embed,
            "patch_size": cfg.patch_size,
            "d_latent": cfg.d_latent,
            "d_freq": cfg.d_freq,
            "ffn_ratio": cfg.ffn_ratio,
            "rope_base": cfg.rope_base,
            "mask_padded": cfg.mask_padded,
            "time_scale": cfg.time_scale,
        },
        "optimizer": bundle.config.get("train", {}),
        "num_parameters": bundle.flow.num_parameters(),
    }
    write_container(out_dir / "flow.ckpt", header, parameters_flat(bundle.flow))
    (out_dir / "bundle.json").write_text(
        json.dumps({"step": bundle.step, "config": bundle.config}, indent=2, sort_keys=True)
    )


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    codec_params = load_codec(path / "codec.ckpt")
    header, flat = read_container(path / "flow.ckpt")
    if header.get("kind") != "flow":
        raise ValueError("not a flow checkpoint")
    model = VelocityTransformer(ModelConfig(**header["model"]))
    load_parameters_flat(model, flat)
    model.eval()
    meta = json.loads((path / "bundle.json").read_text())
    return ModelBundle(
        codec=codec_params, flow=model, config=meta.get("config", {}), step=header["step"]
    )


def model_config_from(cfg: dict, d_latent: int = 3) -> ModelConfig:
    """Build a ModelConfig from the flat key/value configuration."""
    return ModelConfig(
        d_model=cfg["model.d_model"],
        blocks=cfg["model.blocks"],
        heads=cfg["model.heads"],
        point_embed=cfg["model.point_embed"],
        patch_size=cfg["model.patch_size"],
        d_freq=cfg["model.d_freq"],
        ffn_ratio=cfg["model.ffn_ratio"],
        mask_padded=cfg["model.mask_padded"],
        d_latent=d_latent,
    )


def train_config_from(cfg: dict) -> TrainConfig:
    mix = cfg["train.task_mix"]
    if isinstance(mix, (int, float)):
        mix = (float(mix),) * 3
    return TrainConfig(
        learning_rate=float(cfg["train.learning_rate"]),
        lr_schedule=cfg["train.lr_schedule"],
        lr_final_fraction=float(cfg["train.lr_final_fraction"]),
        batch_size=int(cfg["train.batch_size"]),
        max_steps=int(cfg["train.max_steps"]),
        task_mix=tuple(float(p) for p in mix),
        seed=int(cfg["train.seed"]),
        betas=(float(cfg["train.beta1"]), float(cfg["train.beta2"])),
        weight_decay=float(cfg["train.weight_decay"]),
        grad_clip=float(cfg["train.grad_clip"]),
        log_every=int(cfg["train.log_every"]),
        checkpoint_every=int(cfg["train.checkpoint_every"]),
        guidance_view=cfg["data.guidance_view"],
        guidance_size=int(cfg["data.guidance_size"]),
    )
