"""Key/value experiment configuration: `section.key = value` text files."""

from __future__ import annotations

from pathlib import Path

DEFAULTS = {
    "model.d_model": 128,
    "model.blocks": 4,
    "model.heads": 4,
    "model.point_embed": "label",
    "model.patch_size": 8,
    "model.d_freq": 32,
    "model.ffn_ratio": 4,
    "model.mask_padded": False,
    "flow.steps": 12,
    "flow.weighting": "uniform",
    "flow.seed": 0,
    "train.learning_rate": 1e-4,
    "train.lr_schedule": "constant",
    "train.lr_final_fraction": 0.1,
    "train.batch_size": 4,
    "train.max_steps": 2000,
    "train.task_mix": (1 / 3, 1 / 3, 1 / 3),
    "train.seed": 0,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.weight_decay": 0.01,
    "train.grad_clip": 1.0,
    "train.log_every": 50,
    "train.checkpoint_every": 0,
    "clicks.policy": "interior",
    "codec.mode": "identity",
    "codec.d_lat": 8,
    "codec.stride": 2,
    "data.resolution": 32,
    "data.guidance_view": "+z",
    "data.guidance_size": 64,
}


def _coerce(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in raw:
        return tuple(float(part) for part in raw.split(","))
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config(text: str) -> dict:
    """Parse `section.key = value` lines; '#' starts a comment."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(raw)
    return values


def load_config(path=None) -> dict:
    """Defaults overlaid with an optional config file."""
    merged = dict(DEFAULTS)
    if path is not None:
        merged.update(parse_config(Path(path).read_text()))
    return merged
