"""Checkpoint evaluation and the image products rendered from a trained model."""

import numpy as np
import torch

from .cameras import DecomposedPose, yaw_facing
from .rendering import render_panorama, render_view


def latent_for_seed(seed, z_dim):
    return torch.randn(1, z_dim, generator=torch.Generator().manual_seed(int(seed)))


def evaluate_checkpoint(checkpoint, dataset, config=None, seed=0, n_eval=None):
    """KID and diversity of a saved model against a dataset directory.

    Returns ``{kid, diversity, n_eval, embedder_id, seed, iteration}``.
    Both metrics use their own seeded streams, so repeated calls agree.
    """
    from .checkpoint import load_checkpoint
    from .dataio import load_dataset
    from .metrics import DownsampleEmbedder
    from .training import evaluate_diversity, make_sampler, patch_kid

    state, config = load_checkpoint(checkpoint, config)
    images = torch.as_tensor(load_dataset(dataset).load_images())
    data = make_sampler(config, images)
    n_eval = n_eval or config.eval_patches
    embedder = DownsampleEmbedder(16)
    return {
        "kid": patch_kid(state, config, data, n=n_eval, seed=seed, embedder=embedder),
        "diversity": evaluate_diversity(state, config, seed=seed),
        "n_eval": int(n_eval),
        "embedder_id": embedder.id,
        "seed": int(seed),
        "iteration": int(state.iteration),
    }


@torch.no_grad()
def render_interpolation(generator, pose, fov_deg, resolution, z1, z2, steps, n_samples=96):
    """Frames for ``w`` linearly interpolated between the mapped ``z1`` and ``z2``."""
    if steps < 2:
        raise ValueError("interpolation needs at least two steps")
    w1, w2 = generator.map_latent(z1), generator.map_latent(z2)
    frames = []
    for t in np.linspace(0.0, 1.0, steps):
        w = (1.0 - t) * w1 + t * w2
        grid = generator.synthesize_triplanes(w)
        frames.append(render_view(generator.field(grid), pose, fov_deg, resolution,
                                  n_samples=n_samples).colors[0])
    return torch.stack(frames)


@torch.no_grad()
def render_grid(generator, seeds, yaws, fov_deg, resolution, position=(0.0, 0.0, 0.0), n_samples=96):
    """Rows are scenes (one per seed), columns are views at the given yaw angles."""
    rows = []
    for seed in seeds:
        grid = generator.sample_scene(latent_for_seed(seed, generator.z_dim))
        field = generator.field(grid)
        row = [render_view(field, yaw_facing(y, position, torch.float32), fov_deg, resolution,
                           n_samples=n_samples).colors[0] for y in yaws]
        rows.append(torch.stack(row))
    return torch.stack(rows)


@torch.no_grad()
def render_depth(generator, seed, pose, fov_deg, resolution, n_samples=96):
    grid = generator.sample_scene(latent_for_seed(seed, generator.z_dim))
    out = render_view(generator.field(grid), pose, fov_deg, resolution, n_samples=n_samples)
    return out.colors[0], out.depth[0]


@torch.no_grad()
def render_scene_panorama(generator, seed, position, height_resolution, n_samples=96):
    grid = generator.sample_scene(latent_for_seed(seed, generator.z_dim))
    return render_panorama(generator.field(grid), position, height_resolution, n_samples=n_samples)


def tile(images):
    """``[R, C, H, W, 3]`` (or ``[C, H, W, 3]``) to one ``[R*H, C*W, 3]`` array."""
    images = np.asarray(images)
    if images.ndim == 4:
        images = images[None]
    R, C, H, W, _ = images.shape
    return images.transpose(0, 2, 1, 3, 4).reshape(R * H, C * W, 3)


def reference_pose(state):
    """The first stored camera of the pose set, as float32."""
    pose = state.poses.pose(0).detach()
    return DecomposedPose(pose.rz, pose.ry, pose.rx, pose.p).to(torch.float32)
