"""Command-line entry points: data generation, training, evaluation, one-shot
segmentation, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .codec import CodecTrainConfig, identity_codec, load_codec, save_codec, train_codec
from .config import load_config
from .decode import format_full_table, format_iou_table
from .grids import PartLabeling, read_grid, write_grid
from .shapes import (
    DatasetConfig,
    load_dataset,
    make_full_target,
    sample_dataset,
    save_dataset,
    shape_palette,
)
from .training import (
    evaluate,
    load_bundle,
    model_config_from,
    run_segmentation,
    train,
    train_config_from,
)


def _add_config_arg(p):
    p.add_argument("--config", default=None, help="key/value config file")


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    resolution = args.resolution or cfg["data.resolution"]
    ds_cfg = DatasetConfig(
        resolution=resolution,
        max_active_voxels=args.max_voxels,
        min_part_voxels=args.min_part_voxels,
    )
    entries = sample_dataset(args.count, args.seed, ds_cfg, prefix=args.split)
    save_dataset(args.out, args.split, entries)
    print(f"wrote {len(entries)} shapes to {args.out}/{args.split} (R={resolution})")
    return 0


def cmd_train_codec(args) -> int:
    cfg = load_config(args.config)
    entries = load_dataset(args.data, args.split)
    mode = cfg["codec.mode"]
    if mode == "identity":
        params = identity_codec()
    else:
        colored = [
            make_full_target(e.grid, e.labeling, shape_palette(e.labeling, e.seed, 0))
            for e in entries
        ]
        params = train_codec(
            colored,
            CodecTrainConfig(
                mode=mode, d_lat=cfg["codec.d_lat"], stride=cfg["codec.stride"]
            ),
        )
    save_codec(params, args.out)
    print(f"saved {mode} codec to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    entries = load_dataset(args.data, args.split)
    codec_params = load_codec(args.codec) if args.codec else identity_codec()
    model_cfg = model_config_from(cfg, d_latent=codec_params.d_lat)
    train_cfg = train_config_from(cfg)
    bundle, curve = train(
        train_cfg,
        entries,
        model_config=model_cfg,
        codec_params=codec_params,
        out_dir=args.out,
        log=print,
    )
    print(f"trained {bundle.flow.num_parameters()} parameters for {bundle.step} steps")
    print(f"final loss {curve[-1]['loss']:.5f}; bundle saved to {args.out}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_bundle(args.ckpt)
    entries = load_dataset(args.data, args.split)
    report = evaluate(
        bundle,
        entries,
        protocol=args.protocol,
        steps=args.steps,
        seed=args.seed,
        dataset_name=f"{args.data}:{args.split}",
        checkpoint=str(args.ckpt),
    )
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
        print(f"report written to {args.report}")
    if args.protocol == "iou_at_n":
        print(format_iou_table(report))
    else:
        print(format_full_table(report))
    print(f"time per inference: {report['time_per_inference_s']:.3f}s (steps={args.steps})")
    return 0


def cmd_segment(args) -> int:
    bundle = load_bundle(args.ckpt)
    grid, labeling = read_grid(args.shape)
    clicks = []
    if args.clicks:
        for part in args.clicks.split(";"):
            coords = [int(v) for v in part.split(",")]
            if len(coords) != 3:
                raise SystemExit(f"bad click {part!r}; expected i,j,k")
            clicks.append(tuple(coords))
    result = run_segmentation(
        bundle,
        grid,
        labeling,
        args.task,
        clicks,
        steps=args.steps,
        seed=args.seed,
        palette_seed=args.palette_seed,
    )
    uniq, compact = np.unique(result["labels"], return_inverse=True)
    out_labeling = PartLabeling(labels=compact.astype(np.int32), num_parts=len(uniq))
    write_grid(result["colored_grid"], args.out, out_labeling)
    msg = f"wrote {args.out} ({result['elapsed_ms']:.0f} ms"
    if result["iou_vs_gt"] is not None:
        msg += f", IoU vs ground truth {100 * result['iou_vs_gt']:.2f}"
    print(msg + ")")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    bundle = load_bundle(args.ckpt)
    entries = load_dataset(args.data, args.split)
    host, _, port = args.bind.partition(":")
    app = create_app(bundle, entries, studio_dir=args.studio)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic shape dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--max-voxels", type=int, default=None)
    p.add_argument("--min-part-voxels", type=int, default=1)
    _add_config_arg(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-codec", help="train (or emit) the color codec")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    _add_config_arg(p)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train", help="train the multi-task flow model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--codec", default=None, help="codec.ckpt (default: identity)")
    _add_config_arg(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--protocol", choices=["iou_at_n", "full", "guided_full"], required=True)
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="segment one shape file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--shape", required=True, help="input .svg1 file")
    p.add_argument("--task", choices=["interactive", "full", "guided"], required=True)
    p.add_argument("--clicks", default="", help='voxel clicks "i,j,k;i,j,k;..."')
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--palette-seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output .svg1 file")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--studio", default=None, help="built studio assets to serve at /studio")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
