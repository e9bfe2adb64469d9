"""Command-line interface.

Exit codes: 0 success, 1 configuration/usage errors, 2 missing checkpoints.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_from_file,
    write_effective_config,
)

EXIT_CONFIG = 1
EXIT_MISSING_CKPT = 2


def _load_config(args) -> RunConfig:
    cfg = config_from_file(args.config) if args.config else config_from_dict({})
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                   help="override a config key (repeatable)")


def _require_ckpt(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        print(f"error: checkpoint not found: {p}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING_CKPT)
    return p


def cmd_make_data(args) -> int:
    from .dataset import make_dataset

    cfg = _load_config(args)
    data = cfg.data
    if args.seed is not None:
        data = dataclasses.replace(data, seed=args.seed)
    if args.n_scenes is not None:
        data = dataclasses.replace(data, n_scenes=args.n_scenes)
    if args.views is not None:
        data = dataclasses.replace(data, views=args.views)
    cfg = dataclasses.replace(cfg, data=data)
    make_dataset(
        args.out,
        n_scenes=data.n_scenes,
        views=data.views,
        image_size=data.image_size,
        seed=data.seed,
        val_scenes=data.val_scenes,
    )
    write_effective_config(cfg, args.out)
    print(f"wrote {data.n_scenes} scenes x {data.views} views to {args.out}")
    return 0


def cmd_train_step1(args) -> int:
    from .train import train_step1

    cfg = _load_config(args)
    if args.iterations is not None:
        cfg = apply_overrides(cfg, [f"train.step1.iterations={args.iterations}"])
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"train.seed={args.seed}"])
    write_effective_config(cfg, args.out)
    ckpt = train_step1(args.data, args.out, cfg)
    print(f"step-1 checkpoint: {ckpt}")
    return 0


def cmd_train_step2(args) -> int:
    from .train import train_step2

    cfg = _load_config(args)
    if args.iterations is not None:
        cfg = apply_overrides(cfg, [f"train.step2.iterations={args.iterations}"])
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"train.seed={args.seed}"])
    step1 = _require_ckpt(args.step1_ckpt)
    write_effective_config(cfg, args.out)
    ckpt = train_step2(args.data, args.out, cfg, step1)
    print(f"step-2 checkpoint: {ckpt}")
    return 0


def cmd_infer(args) -> int:
    from .dataset import load_image, save_image
    from .geometry import vector_to_camera
    from .scenes import orbit_cameras
    from .train import load_pipeline, restore_image, synthesize_views

    cfg = _load_config(args)
    ckpt_path = _require_ckpt(args.ckpt)
    if args.cameras is None and args.orbit is None:
        print("error: provide --cameras or --orbit", file=sys.stderr)
        return EXIT_CONFIG
    pipeline, _ = load_pipeline(ckpt_path)
    image = load_image(Path(args.image))
    size = pipeline.model_cfg.image_size
    if image.shape != (size, size, 3):
        print(f"error: input image must be {size}x{size}x3, got {image.shape}", file=sys.stderr)
        return EXIT_CONFIG
    if args.cameras is not None:
        vectors = json.loads(Path(args.cameras).read_text())
        cams = [vector_to_camera(np.asarray(v)) for v in vectors]
    else:
        cams = orbit_cameras(args.orbit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = args.steps or cfg.infer.ddim_steps
    seed = cfg.infer.seed if args.seed is None else args.seed
    restored = restore_image(pipeline, image, steps=steps, seed=seed)
    save_image(out / "restored.png", restored)
    views = synthesize_views(pipeline, image, cams, steps=steps, seed=seed)
    for i, view in enumerate(views):
        save_image(out / f"view_{i:02d}.png", view)
    write_effective_config(cfg, out)
    print(f"wrote restored.png and {len(views)} views to {out}")
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate

    cfg = _load_config(args)
    ckpt_path = _require_ckpt(args.ckpt)
    split = args.split or cfg.eval.split
    try:
        report = evaluate(
            ckpt_path,
            args.data,
            split=split,
            out_dir=args.out,
            seed=cfg.eval.seed,
            ddim_steps=args.steps or cfg.eval.ddim_steps,
            max_scenes=cfg.eval.max_scenes,
        )
    except ValueError as e:
        if "empty split" in str(e):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    if args.out:
        write_effective_config(cfg, args.out)
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


def cmd_ablate_featloss(args) -> int:
    from .train import run_feature_loss_ablation

    cfg = _load_config(args)
    if args.iterations is not None:
        cfg = apply_overrides(cfg, [f"train.step2.iterations={args.iterations}"])
    step1 = _require_ckpt(args.step1_ckpt)
    write_effective_config(cfg, args.out)
    report = run_feature_loss_ablation(
        args.data, args.out, cfg, step1, seeds=tuple(range(args.seeds))
    )
    print(json.dumps({k: v for k, v in report.items() if k != "runs"}, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewlift")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="render a synthetic multi-view dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-scenes", type=int, dest="n_scenes")
    p.add_argument("--views", type=int)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train-step1", help="train the restoration stack")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_step1)

    p = sub.add_parser("train-step2", help="train the view-synthesis modules")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--step1-ckpt", required=True, dest="step1_ckpt")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_step2)

    p = sub.add_parser("infer", help="restore an image and synthesize novel views")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cameras", help="JSON file with a list of 25-vectors")
    p.add_argument("--orbit", type=int, help="generate K orbit poses instead of --cameras")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compute the metrics report for a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-featloss", help="feature-loss ablation direction check")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--step1-ckpt", required=True, dest="step1_ckpt")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_ablate_featloss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING_CKPT


if __name__ == "__main__":
    sys.exit(main())
