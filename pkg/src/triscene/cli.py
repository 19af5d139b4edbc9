"""Command-line entry point: ``triscene {make-data,train,generate,evaluate}``."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("triscene")


def _cmd_make_data(args):
    from .toyscene import ToySceneSpec, render_toy_dataset

    render_toy_dataset(ToySceneSpec(), args.views, args.resolution, args.fov,
                       np.random.default_rng(args.seed), out_dir=args.out,
                       sigma_xy=args.sigma, height=args.height)
    print(f"wrote {args.views} views to {args.out}")


def _cmd_train(args):
    from .checkpoint import load_checkpoint
    from .config import load_config, resolved_json
    from .dataio import load_dataset
    from .training import train

    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(resolved_json(config))
    images = load_dataset(args.data).load_images()
    state = None
    if args.resume:
        state, config = load_checkpoint(args.resume, config)
    state = train(config, images, out, state=state)
    print(f"trained to iteration {state.iteration}; checkpoint {out / 'latest.ckpt'}")


def _cmd_generate(args):
    from .checkpoint import load_checkpoint
    from .dataio import write_depth_png, write_png
    from .evaluation import (latent_for_seed, reference_pose, render_depth, render_grid,
                             render_interpolation, render_scene_panorama, tile)

    state, config = load_checkpoint(args.checkpoint)
    gen = state.generator.eval()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    res, ns = args.resolution, args.n_samples
    if args.interpolate:
        s1, s2 = args.interpolate
        frames = render_interpolation(gen, reference_pose(state), config.fov_deg, res,
                                      latent_for_seed(s1, gen.z_dim), latent_for_seed(s2, gen.z_dim),
                                      args.steps, n_samples=ns)
        write_png(out, tile(frames.numpy()))
    elif args.panorama:
        position = (0.0, float(state.poses.height), 0.0)
        write_png(out, render_scene_panorama(gen, args.seed, position, res, n_samples=ns).numpy())
    elif args.depth:
        rgb, depth = render_depth(gen, args.seed, reference_pose(state), config.fov_deg, res, n_samples=ns)
        write_png(out, rgb.numpy())
        write_depth_png(out.with_name(out.stem + "_depth.png"), depth.numpy())
    else:
        seeds = [args.seed + i for i in range(args.rows)]
        yaws = np.linspace(0.0, 360.0, args.cols, endpoint=False)
        grid = render_grid(gen, seeds, yaws, config.fov_deg, res,
                           position=(0.0, float(state.poses.height), 0.0), n_samples=ns)
        write_png(out, tile(grid.numpy()))
    print(f"wrote {out}")


def _cmd_evaluate(args):
    from .evaluation import evaluate_checkpoint

    report = evaluate_checkpoint(args.checkpoint, args.data, seed=args.seed, n_eval=args.n_eval)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="triscene", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="render the procedural toy room dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=32)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--fov", type=float, default=65.0)
    p.add_argument("--sigma", type=float, default=0.3, help="std of camera x/z positions")
    p.add_argument("--height", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_data)

    p = sub.add_parser("train", help="train from a key-value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="render images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--panorama", action="store_true")
    mode.add_argument("--grid", action="store_true", help="seeds x views grid (default)")
    mode.add_argument("--depth", action="store_true")
    mode.add_argument("--interpolate", nargs=2, type=int, metavar=("SEED1", "SEED2"))
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int, default=3)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--n-samples", type=int, default=96)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="KID + diversity JSON report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-eval", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.info("command %s: %s", args.command, json.dumps(
        {k: v for k, v in vars(args).items() if k != "func"}, sort_keys=True))
    try:
        args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # one-line diagnostic for every failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
