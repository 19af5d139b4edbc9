"""Scaled-down smoke experiments on the toy room.

``run_smoke`` trains one model and writes a JSON summary with the patch KID
at initialization and at the end, the final diversity score, and a resume
check (reload the final checkpoint, take one more step, compare the loss
with the uninterrupted run).  ``python -m triscene.experiments`` runs the
progressive and the fixed ``s = 1`` variants back to back.
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .metrics import DownsampleEmbedder
from .toyscene import ToySceneSpec, render_toy_dataset
from .training import evaluate_diversity, init_state, make_sampler, patch_kid, train, train_step

log = logging.getLogger(__name__)

# Reduced for a single CPU core: batch 4, 24 samples per ray and narrower
# convolution stacks.  Triplane size, patch size, image count and the
# iteration budget follow the smoke protocol; 30 iterations per epoch lets
# both schedules run to completion inside 3000 iterations.
SMOKE_CONFIG = dict(
    iterations=3000,
    iterations_per_epoch=30,
    batch_size=4,
    triplane_resolution=64,
    triplane_channels=16,
    patch_size=32,
    n_samples=24,
    g_channel_base=1024,
    d_channel_base=1024,
    checkpoint_every=500,
    metric_every=1000,
    eval_patches=200,
    seed=0,
)
SMOKE_VIEWS = 32
SMOKE_RESOLUTION = 256


def smoke_config(scale_mode="progressive", **overrides):
    values = dict(SMOKE_CONFIG, scale_mode=scale_mode, fixed_scale=1.0)
    values.update(overrides)
    return TrainConfig(**values)


def smoke_dataset(seed=0):
    images, _ = render_toy_dataset(ToySceneSpec(), SMOKE_VIEWS, SMOKE_RESOLUTION, 65.0,
                                   np.random.default_rng(seed))
    return torch.as_tensor(images, dtype=torch.float32)


def _step_loss(record):
    return {k: record[k] for k in ("d_total", "g_total")}


def run_smoke(scale_mode, out_dir, images=None, **overrides):
    """Train one smoke model; returns (and writes) the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = smoke_config(scale_mode, **overrides)
    images = smoke_dataset() if images is None else images
    data = make_sampler(config, images)
    embedder = DownsampleEmbedder(16)

    start = time.time()
    state = init_state(config)
    kid_init = patch_kid(state, config, data, embedder=embedder)
    div_init = evaluate_diversity(state, config)
    state = train(config, images, out, state=state)
    kid_final = patch_kid(state, config, data, embedder=embedder)
    div_final = evaluate_diversity(state, config)
    train_seconds = time.time() - start

    # resume check: one extra step from the live state vs from the reloaded file
    ckpt = out / "resume_probe.ckpt"
    save_checkpoint(state, config, ckpt)
    live = _step_loss(train_step(state, config, data))
    resumed_state, _ = load_checkpoint(ckpt, config)
    resumed = _step_loss(train_step(resumed_state, config, data))

    summary = {
        "scale_mode": scale_mode,
        "config": config.to_dict(),
        "embedder_id": embedder.id,
        "kid_init": kid_init,
        "kid_final": kid_final,
        "kid_drop": 1.0 - kid_final / kid_init if kid_init > 0 else float("nan"),
        "diversity_init": div_init,
        "diversity_final": div_final,
        "resume_live": live,
        "resume_reloaded": resumed,
        "resume_max_abs_diff": max(abs(live[k] - resumed[k]) for k in live),
        "train_seconds": train_seconds,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    log.info("smoke %s: %s", scale_mode, json.dumps({k: v for k, v in summary.items() if k != "config"}))
    return summary


def main(argv=None):
    parser = argparse.ArgumentParser(description="toy-room smoke experiments")
    parser.add_argument("--out", default="experiments/smoke")
    parser.add_argument("--modes", nargs="+", default=["progressive", "fixed"])
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    images = smoke_dataset()
    for mode in args.modes:
        run_smoke(mode, Path(args.out) / mode, images)


if __name__ == "__main__":
    main()
