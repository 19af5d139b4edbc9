"""Adversarial objective and the alternating G/D/pose optimization loop.

With ``f(a) = -log(1 + exp(-a))`` and discriminator logits that grow with
realism, the adversarial value of a batch is::

    V = mean f(D(real, s)) + mean f(-D(fake, s))

The discriminator maximizes ``V`` while paying ``l1 * R1(real) + l2 * E_R(real)``,
so it minimizes ``-V + l1 * R1 + l2 * E_R`` (the logistic GAN loss).  The
generator (and, while gated on, the camera poses) minimizes the
non-saturating ``mean -f(D(fake, s))``.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cameras import expected_patch_scale, init_pose_set, sample_cameras
from .config import resolved_json
from .discriminator import PatchDiscriminator, reconstruction_loss
from .exceptions import InvalidInputError, TrainingDivergedError
from .field import occupancy_at
from .generator import TriplaneGenerator
from .patches import RealPatchSampler, crop_real_patch, cutout, sample_scale, sample_window, translate
from .rendering import generate_patch_rays, render_rays

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "iteration", "d_fake", "d_real", "d_r1", "d_recon", "d_total",
                  "g_total", "kid", "diversity")


def f_loss(a):
    """``-log(1 + exp(-a))`` evaluated without overflow."""
    a = torch.as_tensor(a)
    return -(torch.relu(-a) + torch.log1p(torch.exp(-a.abs())))


@dataclass
class LossTerms:
    """Terms of one discriminator evaluation.

    ``fake`` and ``real`` are the adversarial value terms (each <= 0);
    ``r1`` and ``recon`` are already weighted.  ``value`` is their plain sum
    and ``total`` is what the discriminator minimizes.
    """

    fake: torch.Tensor
    real: torch.Tensor
    r1: torch.Tensor
    recon: torch.Tensor

    @property
    def value(self):
        return self.fake + self.real + self.r1 + self.recon

    @property
    def total(self):
        return -self.fake - self.real + self.r1 + self.recon

    def as_floats(self):
        # logged as losses, so d_total is the sum of the four columns
        return {"d_fake": -float(self.fake.detach()), "d_real": -float(self.real.detach()),
                "d_r1": float(self.r1.detach()), "d_recon": float(self.recon.detach()),
                "d_total": float(self.total.detach())}


def assemble_objective(fake_logits, real_logits, r1, recon, lambda_r1, lambda_recon):
    return LossTerms(f_loss(-fake_logits).mean(), f_loss(real_logits).mean(),
                     lambda_r1 * r1, lambda_recon * recon)


def discriminator_objective(disc, real, fake, real_scales, fake_scales, lambda_r1=0.5,
                            lambda_recon=50.0):
    """Full discriminator objective on one batch; returns :class:`LossTerms`.

    ``real`` gets gradient tracking for the R1 term; ``fake`` is detached.
    """
    real = real.detach().requires_grad_(True)
    real_logits, tap = disc.forward_input(disc.build_input(real, real_scales), return_tap=True)
    if lambda_r1 > 0:
        (grad,) = torch.autograd.grad(real_logits.sum(), real, create_graph=True)
        r1 = grad.square().flatten(1).sum(dim=1).mean()
    else:
        r1 = real_logits.new_zeros(())
    if lambda_recon > 0:
        recon = reconstruction_loss(disc.reconstruct(tap), disc.recon_target(real.detach()))
    else:
        recon = real_logits.new_zeros(())
    fake_logits = disc(fake.detach(), fake_scales)
    return assemble_objective(fake_logits, real_logits, r1, recon, lambda_r1, lambda_recon)


def generator_objective(disc, fake, scales):
    """Non-saturating generator loss ``mean -f(D(fake, s))`` (``ln 2`` at zero logits)."""
    return (-f_loss(disc(fake, scales))).mean()


@dataclass
class TrainState:
    generator: TriplaneGenerator
    discriminator: PatchDiscriminator
    poses: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    opt_pose: torch.optim.Optimizer
    rng: np.random.Generator
    torch_rng: torch.Generator
    iteration: int = 0
    history: list = field(default_factory=list, repr=False)

    def epoch(self, config):
        return config.epoch_of(self.iteration)


def build_models(config):
    gen = TriplaneGenerator(config.triplane_resolution, config.triplane_channels, config.aggregation,
                            z_dim=config.z_dim, channel_base=config.g_channel_base,
                            channel_max=config.g_channel_max)
    disc = PatchDiscriminator(config.patch_size, config.d_channel_base, config.d_channel_max)
    return gen, disc


def init_state(config):
    """Fresh models, pose set, optimizers and RNG streams, all seeded from ``config.seed``."""
    torch.manual_seed(config.seed)
    gen, disc = build_models(config)
    rng = np.random.default_rng(config.seed)
    poses = init_pose_set(config.camera_sigma_xy, config.camera_height, config.n_cameras, rng,
                          config.jitter_translation, config.jitter_rotation_deg)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=betas)
    opt_pose = torch.optim.Adam(poses.parameters(), lr=config.learning_rate, betas=betas)
    torch_rng = torch.Generator().manual_seed(config.seed + 1)
    return TrainState(gen, disc, poses, opt_g, opt_d, opt_pose, rng, torch_rng)


def pose_gate_open(config, epoch):
    """Poses train only while patches are expected to be large (mean scale > 0.5)."""
    if not config.pose_optimization:
        return False
    return expected_patch_scale(config.scale_schedule.bounds(epoch)) > 0.5


def render_fake_batch(state, config, batch_size, epoch, *, scale_range=None, stratified=True,
                      track_pose=False):
    """Sample latents, cameras and windows; render patches ``[B, H, H, 3]``.

    Returns ``(patches, scales, spec)`` where ``spec`` records every sampling
    decision for diagnostics.
    """
    gen = state.generator
    z = torch.randn(batch_size, gen.z_dim, generator=state.torch_rng)
    grid = gen.sample_scene(z)
    field = gen.field(grid)

    def occupancy(centers):
        return occupancy_at(field, centers.to(grid.planes.dtype).unsqueeze(1))[:, 0]

    pose, index = sample_cameras(state.poses, occupancy, batch_size, state.rng,
                                 config.max_camera_attempts, config.occupancy_threshold)
    if not track_pose:
        pose = pose.detach()
    if scale_range is None:
        scales = sample_scale(epoch, state.rng, config.scale_schedule, size=batch_size)
    else:
        scales = state.rng.uniform(scale_range[0], scale_range[1], size=batch_size)
    centers = sample_window(scales, state.rng)
    bundle = generate_patch_rays(pose, config.fov_deg, torch.as_tensor(scales, dtype=torch.float64),
                                 torch.as_tensor(centers), config.patch_size, camera_index=index)
    bundle.origins = bundle.origins.float()
    bundle.directions = bundle.directions.float()
    out = render_rays(field, bundle, config.n_samples, stratified=stratified, generator=state.torch_rng)
    spec = {"camera_index": index.tolist(), "scales": scales.tolist(), "centers": centers.tolist()}
    return out.colors, torch.as_tensor(scales, dtype=torch.float32), spec


def _augment_2d(config, patches, rng):
    if config.translation_augmentation:
        max_shift = max(1, patches.shape[1] // 8)
        shift = rng.integers(-max_shift, max_shift + 1, size=2)
        patches = translate(patches, (int(shift[0]), int(shift[1])))
    if config.cutout_augmentation:
        patches = cutout(patches, rng)
    return patches


def train_step(state, config, data):
    """One D update followed by one G (and gated pose) update.

    Returns a dict of logged loss terms.
    """
    epoch = state.epoch(config)
    gate = pose_gate_open(config, epoch)
    B = config.batch_size
    disc = state.discriminator

    fake, fake_scales, fake_spec = render_fake_batch(state, config, B, epoch, track_pose=gate)
    real, real_scales, real_specs = data.sample(B, epoch, state.rng)
    fake = _augment_2d(config, fake, state.rng)
    real = _augment_2d(config, real, state.rng)
    batch_spec = {"iteration": state.iteration, "epoch": epoch, "fake": fake_spec,
                  "real": [vars(s) for s in real_specs]}

    # discriminator
    for p in disc.parameters():
        p.requires_grad_(True)
    state.opt_d.zero_grad(set_to_none=True)
    terms = discriminator_objective(disc, real, fake, real_scales, fake_scales,
                                    config.lambda_r1, config.lambda_recon)
    if not bool(torch.isfinite(terms.total)):
        raise TrainingDivergedError(
            f"non-finite discriminator loss at iteration {state.iteration}", batch_spec)
    terms.total.backward()
    state.opt_d.step()

    # generator and poses
    for p in disc.parameters():
        p.requires_grad_(False)
    state.opt_g.zero_grad(set_to_none=True)
    state.opt_pose.zero_grad(set_to_none=True)
    g_loss = generator_objective(disc, fake, fake_scales)
    if not bool(torch.isfinite(g_loss)):
        raise TrainingDivergedError(f"non-finite generator loss at iteration {state.iteration}", batch_spec)
    g_loss.backward()
    state.opt_g.step()
    if gate:
        state.opt_pose.step()
        state.poses.renormalize_()
    for p in disc.parameters():
        p.requires_grad_(True)

    state.iteration += 1
    # ``iteration`` counts completed steps
    return {"epoch": epoch, "iteration": state.iteration, **terms.as_floats(),
            "g_total": float(g_loss.detach()), "pose_opt": gate}


def make_sampler(config, images):
    return RealPatchSampler(images, config.fov_deg, config.patch_size, config.scale_schedule,
                            config.aug_schedule, config.perspective_augmentation)


@torch.no_grad()
def patch_kid(state, config, data, n=None, seed=1234, embedder=None):
    """KID between ``n`` real and ``n`` rendered patches at a fixed scale range.

    Uses its own RNG streams so evaluation never perturbs training.
    """
    from .metrics import DownsampleEmbedder, kid

    n = n or config.eval_patches
    embedder = embedder or DownsampleEmbedder(16)
    scale_range = (config.eval_scale_min, config.eval_scale_max)
    if config.scale_mode == "fixed":
        scale_range = (config.fixed_scale, config.fixed_scale)
    eval_state = TrainState(state.generator, state.discriminator, state.poses, state.opt_g,
                            state.opt_d, state.opt_pose, np.random.default_rng(seed),
                            torch.Generator().manual_seed(seed))
    fakes, reals = [], []
    chunk = 8
    for i in range(0, n, chunk):
        b = min(chunk, n - i)
        fake, _, _ = render_fake_batch(eval_state, config, b, 0, scale_range=scale_range,
                                       stratified=False)
        fakes.append(fake)
        idx = eval_state.rng.integers(0, len(data), size=b)
        scales = eval_state.rng.uniform(scale_range[0], scale_range[1], size=b)
        centers = sample_window(scales, eval_state.rng)
        reals.append(crop_real_patch(data.images[idx], scales, centers, config.patch_size))
    return kid(embedder(torch.cat(reals)), embedder(torch.cat(fakes)))


def fixed_pose(state):
    return state.poses.pose(0).detach()


def evaluate_diversity(state, config, seed=0):
    from .metrics import diversity

    return diversity(state.generator, fixed_pose(state), config.fov_deg, config.diversity_resolution,
                     n_latents=config.diversity_latents, seed=seed, n_samples=config.n_samples)


class MetricLog:
    """Append-only CSV log with a fixed column set."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)

    def append(self, row):
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([row.get(c, "") for c in METRIC_COLUMNS])


def train(config, images, out_dir, state=None, progress=None):
    """Run (or resume) training; returns the final :class:`TrainState`.

    Writes ``latest.ckpt`` every ``checkpoint_every`` iterations and at the
    end, and appends losses plus periodic KID/diversity to ``metrics.csv``.
    """
    from .checkpoint import save_checkpoint

    images = torch.as_tensor(np.asarray(images, dtype=np.float32))
    if images.dim() != 4:
        raise InvalidInputError("images must be [N, H, W, 3]")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("resolved config: %s", resolved_json(config))
    data = make_sampler(config, images)
    state = state or init_state(config)
    metrics = MetricLog(out / "metrics.csv")
    while state.iteration < config.iterations:
        record = train_step(state, config, data)
        it = state.iteration
        if it % config.metric_every == 0 or it == config.iterations:
            record["kid"] = patch_kid(state, config, data)
            record["diversity"] = evaluate_diversity(state, config)
            log.info("iter %d epoch %d kid %.4f div %.4f", it, record["epoch"], record["kid"],
                     record["diversity"])
        if it % 50 == 0 or "kid" in record:
            metrics.append(record)
        if progress is not None:
            progress(record)
        if it % config.checkpoint_every == 0 or it == config.iterations:
            save_checkpoint(state, config, out / "latest.ckpt")
    return state


__all__ = [
    "f_loss", "assemble_objective", "discriminator_objective", "generator_objective",
    "LossTerms", "TrainState", "init_state", "train_step", "train", "patch_kid",
    "evaluate_diversity", "MetricLog", "pose_gate_open",
]
