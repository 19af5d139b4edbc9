import csv
import math

import numpy as np
import pytest
import torch

from triscene.cameras import PoseSet, angle_pair
from triscene.checkpoint import load_checkpoint, save_checkpoint
from triscene.config import TrainConfig
from triscene.discriminator import PatchDiscriminator, r1_penalty, recon_regularizer
from triscene.exceptions import TrainingDivergedError
from triscene.generator import TriplaneGenerator
from triscene.rendering import generate_patch_rays, render_rays
from triscene.training import (assemble_objective, discriminator_objective, f_loss, generator_objective,
                               init_state, make_sampler, pose_gate_open, train, train_step)

LN2 = math.log(2.0)


def zero_disc(patch=16):
    d = PatchDiscriminator(patch_size=patch, channel_base=128, channel_max=16)
    with torch.no_grad():
        for p in d.parameters():
            p.zero_()
    return d


def test_f_values():
    assert f_loss(torch.tensor(0.0, dtype=torch.float64)).item() == pytest.approx(-LN2, abs=1e-15)
    a = torch.linspace(-60, 60, 1001, dtype=torch.float64)
    v = f_loss(a)
    assert (v[1:] > v[:-1]).all() and v[-1].abs() < 1e-20
    ref = -np.logaddexp(0.0, 50.0)
    assert abs(f_loss(torch.tensor(-50.0, dtype=torch.float64)).item() - (-50.0)) <= 1e-9
    assert abs(f_loss(torch.tensor(-50.0, dtype=torch.float64)).item() - ref) <= 1e-12
    assert torch.isfinite(f_loss(torch.tensor([-1e4, 1e4]))).all()


def test_zero_logits_no_regularizers():
    terms = discriminator_objective(zero_disc(), torch.rand(4, 16, 16, 3), torch.rand(4, 16, 16, 3),
                                    torch.ones(4), torch.ones(4), lambda_r1=0.0, lambda_recon=0.0)
    assert terms.value.item() == pytest.approx(2 * -LN2, abs=1e-6)
    assert terms.total.item() == pytest.approx(2 * LN2, abs=1e-6)


def test_constant_discriminator_has_zero_r1():
    terms = discriminator_objective(zero_disc(), torch.rand(2, 16, 16, 3), torch.rand(2, 16, 16, 3),
                                    torch.ones(2), torch.ones(2))
    assert terms.r1.item() == 0.0


def test_objective_matches_term_by_term_oracle():
    torch.manual_seed(1)
    d = PatchDiscriminator(patch_size=16, channel_base=128, channel_max=16).double()
    real, fake = torch.rand(3, 16, 16, 3, dtype=torch.float64), torch.rand(3, 16, 16, 3, dtype=torch.float64)
    sr, sf = torch.tensor([0.3, 0.5, 0.9]), torch.tensor([0.4, 0.6, 0.7])
    terms = discriminator_objective(d, real, fake, sr, sf, lambda_r1=0.5, lambda_recon=50.0)
    with torch.no_grad():
        lf, lr = d(fake, sf), d(real, sr)
    # f(a) = -log(1 + e^-a): fake logits enter as f(-D), real logits as f(D)
    oracle_fake = np.mean([-np.logaddexp(0, x) for x in lf.tolist()])
    oracle_real = np.mean([-np.logaddexp(0, -x) for x in lr.tolist()])
    r1 = 0.5 * r1_penalty(d, real, sr).item()
    rec = 50.0 * recon_regularizer(d, real, sr).item()
    assert terms.fake.item() == pytest.approx(oracle_fake, abs=1e-6)
    assert terms.real.item() == pytest.approx(oracle_real, abs=1e-6)
    assert terms.r1.item() == pytest.approx(r1, abs=1e-6)
    assert terms.recon.item() == pytest.approx(rec, abs=1e-6)
    assert terms.value.item() == pytest.approx(oracle_fake + oracle_real + r1 + rec, abs=1e-6)
    assert terms.total.item() == pytest.approx(-oracle_fake - oracle_real + r1 + rec, abs=1e-6)


def test_assemble_objective_plain_numbers():
    z = torch.zeros(5, dtype=torch.float64)
    t = assemble_objective(z, z, torch.tensor(2.0), torch.tensor(0.1), 0.5, 50.0)
    assert t.value.item() == pytest.approx(-2 * LN2 + 1.0 + 5.0, abs=1e-12)
    assert t.total.item() == pytest.approx(2 * LN2 + 1.0 + 5.0, abs=1e-12)


def test_generator_objective_convention_and_monotone():
    d = zero_disc()
    val = generator_objective(d, torch.rand(3, 16, 16, 3), torch.ones(3)).item()
    # minimized quantity is -f(D(fake)); at zero logits that is ln 2 (f itself is -ln 2)
    assert val == pytest.approx(LN2, abs=1e-7)

    class Shift(torch.nn.Module):
        def __init__(self, b):
            super().__init__()
            self.b = b

        def forward(self, patches, scales):
            return torch.full((patches.shape[0],), self.b)

    vals = [generator_objective(Shift(b), torch.rand(2, 16, 16, 3), torch.ones(2)).item() for b in (-2, 0, 1, 3)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_pose_translation_gradient_nonzero_and_matches_fd():
    torch.manual_seed(0)
    gen = TriplaneGenerator(resolution=16, channels=4, channel_base=256, channel_max=32).double()
    disc = PatchDiscriminator(patch_size=16, channel_base=128, channel_max=16).double()
    with torch.no_grad():
        grid = gen.sample_scene(torch.randn(1, 128, dtype=torch.float64))
    field = gen.field(grid)
    poses = PoseSet(torch.tensor([[0.1, -0.2]]), angle_pair(torch.tensor([30.0])))

    def loss():
        bundle = generate_patch_rays(poses.pose(torch.tensor([0])), 65.0, torch.tensor([0.7], dtype=torch.float64),
                                     torch.zeros(1, 2, dtype=torch.float64), 16)
        out = render_rays(field, bundle, n_samples=16)
        return generator_objective(disc, out.colors, torch.tensor([0.7], dtype=torch.float64))

    loss().backward()
    g = poses.pxz.grad[0].clone()
    assert g.abs().max() > 0
    h = 1e-7
    with torch.no_grad():
        for i in range(2):
            poses.pxz[0, i] += h
            up = loss().item()
            poses.pxz[0, i] -= 2 * h
            down = loss().item()
            poses.pxz[0, i] += h
            assert g[i].item() == pytest.approx((up - down) / (2 * h), rel=1e-3, abs=1e-8)


def test_epoch_counter():
    assert TrainConfig().epoch_of(3500) == 3


def test_pose_gate(tiny_config):
    cfg = tiny_config.replace(scale_ramp_epochs=100)
    assert pose_gate_open(cfg, 0)
    assert not pose_gate_open(cfg, 100)
    assert not pose_gate_open(cfg.replace(pose_optimization=False), 0)
    assert pose_gate_open(cfg.replace(scale_mode="fixed", fixed_scale=1.0), 500)


def snapshot(state):
    mods = (state.generator, state.discriminator, state.poses)
    return [t.detach().clone() for m in mods for t in m.state_dict().values()]


def test_zero_learning_rate_leaves_parameters_bitwise(tiny_config, tiny_images):
    cfg = tiny_config.replace(learning_rate=1e-300)
    state = init_state(cfg)
    for opt in (state.opt_g, state.opt_d, state.opt_pose):
        for group in opt.param_groups:
            group["lr"] = 0.0
    before = snapshot(state)
    data = make_sampler(cfg, tiny_images)
    for _ in range(2):
        train_step(state, cfg, data)
    after = snapshot(state)
    assert all(torch.equal(a, b) for a, b in zip(before, after))


def test_same_seed_same_losses(tiny_config, tiny_images):
    def run():
        state = init_state(tiny_config)
        data = make_sampler(tiny_config, tiny_images)
        return [train_step(state, tiny_config, data) for _ in range(10)]

    a, b = run(), run()
    for ra, rb in zip(a, b):
        assert ra["d_total"] == rb["d_total"] and ra["g_total"] == rb["g_total"]


def test_resume_reproduces_next_step(tiny_config, tiny_images, tmp_path):
    data = make_sampler(tiny_config, tiny_images)
    state = init_state(tiny_config)
    for _ in range(3):
        train_step(state, tiny_config, data)
    save_checkpoint(state, tiny_config, tmp_path / "mid.ckpt")
    live = train_step(state, tiny_config, data)
    resumed, _ = load_checkpoint(tmp_path / "mid.ckpt", tiny_config)
    again = train_step(resumed, tiny_config, data)
    for key in ("d_total", "g_total", "d_r1", "d_recon"):
        assert abs(live[key] - again[key]) <= 1e-6


def test_nonfinite_loss_aborts_with_batch_spec(tiny_config, tiny_images):
    state = init_state(tiny_config)
    with torch.no_grad():
        next(state.generator.synthesis.parameters()).fill_(float("nan"))
    with pytest.raises(TrainingDivergedError) as info:
        train_step(state, tiny_config, make_sampler(tiny_config, tiny_images))
    spec = info.value.batch_spec
    assert spec["iteration"] == 0 and "camera_index" in spec["fake"] and len(spec["real"]) == 2


def test_train_writes_checkpoint_and_metric_log(tiny_config, tiny_images, tmp_path):
    state = train(tiny_config, tiny_images.numpy(), tmp_path)
    assert state.iteration == tiny_config.iterations
    assert (tmp_path / "latest.ckpt").exists()
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "iteration", "d_fake", "d_real", "d_r1", "d_recon", "d_total",
                             "g_total", "kid", "diversity"]
    evaluated = [r for r in rows if r["kid"]]
    assert [int(r["iteration"]) for r in evaluated] == [3, 6]
    for r in rows:
        parts = sum(float(r[k]) for k in ("d_fake", "d_real", "d_r1", "d_recon"))
        assert parts == pytest.approx(float(r["d_total"]), abs=1e-5)


@pytest.mark.slow
def test_logit_gap_grows_on_toy_scene():
    from triscene.toyscene import ToySceneSpec, render_toy_dataset
    from triscene.training import render_fake_batch

    images, _ = render_toy_dataset(ToySceneSpec(), 8, 64, 65.0, np.random.default_rng(0))
    cfg = TrainConfig(iterations=200, iterations_per_epoch=1000, batch_size=4, triplane_resolution=16,
                      triplane_channels=8, patch_size=16, n_samples=12, g_channel_base=256, g_channel_max=64,
                      d_channel_base=256, d_channel_max=64, n_cameras=64, seed=0)
    state = init_state(cfg)
    data = make_sampler(cfg, torch.as_tensor(images, dtype=torch.float32))

    def gap():
        rng_state, trng = state.rng.bit_generator.state, state.torch_rng.get_state()
        state.rng = np.random.default_rng(99)
        state.torch_rng.manual_seed(99)
        with torch.no_grad():
            real, rs, _ = data.sample(16, 0, state.rng)
            fake, fs, _ = render_fake_batch(state, cfg, 16, 0, stratified=False)
            value = (state.discriminator(real, rs).mean() - state.discriminator(fake, fs).mean()).item()
        state.rng = np.random.default_rng()
        state.rng.bit_generator.state = rng_state
        state.torch_rng.set_state(trng)
        return value

    start = gap()
    for _ in range(200):
        train_step(state, cfg, data)
    assert gap() > start
