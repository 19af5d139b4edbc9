import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from triscene.exceptions import ContractViolationError, InvalidWindowError
from triscene.patches import (AugSchedule, RealPatchSampler, ScaleSchedule, aug_angle_bound, crop_real_patch,
                              cutout, perspective_augment, sample_scale, sample_window, scale_bounds,
                              translate, window_is_valid)


def crop_oracle(img, s, center, size):
    """Per-pixel bilinear resampler written as plain loops."""
    Hs, Ws = img.shape[:2]
    out = np.zeros((size, size, 3))
    for i in range(size):
        for j in range(size):
            g_i, g_j = -1 + (2 * i + 1) / size, -1 + (2 * j + 1) / size
            u, v = center[0] + s * g_j, center[1] + s * g_i
            px = min(max((u + 1) * Ws / 2 - 0.5, 0), Ws - 1)
            py = min(max((v + 1) * Hs / 2 - 0.5, 0), Hs - 1)
            x0, y0 = min(int(np.floor(px)), Ws - 2), min(int(np.floor(py)), Hs - 2)
            ax, ay = px - x0, py - y0
            out[i, j] = ((1 - ax) * (1 - ay) * img[y0, x0] + ax * (1 - ay) * img[y0, x0 + 1]
                         + (1 - ax) * ay * img[y0 + 1, x0] + ax * ay * img[y0 + 1, x0 + 1])
    return out


def test_scale_bounds_values():
    assert scale_bounds(0) == (0.6, 0.8)
    lo, hi = scale_bounds(50)
    assert lo == pytest.approx(0.425, abs=1e-15) and hi == pytest.approx(0.675, abs=1e-15)
    assert scale_bounds(100) == (0.25, 0.55)
    assert scale_bounds(250) == (0.25, 0.55)


@given(st.integers(0, 300), st.integers(0, 300))
def test_scale_bounds_monotone(a, b):
    a, b = sorted((a, b))
    assert scale_bounds(b)[0] <= scale_bounds(a)[0]
    assert scale_bounds(b)[1] <= scale_bounds(a)[1]
    lo, hi = scale_bounds(a)
    assert 0 < lo <= hi <= 1


def test_sample_scale_range_and_mean(rng):
    s = sample_scale(0, rng, size=100_000)
    assert s.min() >= 0.6 and s.max() <= 0.8
    assert abs(s.mean() - 0.7) < 0.002


def test_degenerate_schedule_is_constant(rng):
    sched = ScaleSchedule(0.5, 0.5, 0.5, 0.5, 10)
    assert (sample_scale(3, rng, sched, size=1000) == 0.5).all()


def test_sample_window_cases(rng):
    assert (sample_window(np.ones(100), rng) == 0).all()
    c = sample_window(np.full(10_000, 0.5), rng)
    assert np.abs(c).max() <= 0.5


@given(st.floats(1e-6, 1.0), st.integers(0, 2**32 - 1))
def test_window_invariant(s, seed):
    c = sample_window(np.full(64, s), np.random.default_rng(seed))
    assert (np.abs(c) + s <= 1).all()


def test_crop_whole_image(rng):
    img = rng.random((128, 128, 3))
    got = crop_real_patch(torch.as_tensor(img), 1.0, (0.0, 0.0), 64).numpy()
    np.testing.assert_allclose(got, crop_oracle(img, 1.0, (0.0, 0.0), 64), atol=1e-12)
    # 2:1 downsampling with centered taps averages each 2x2 block
    np.testing.assert_allclose(got, img.reshape(64, 2, 64, 2, 3).mean(axis=(1, 3)), atol=1e-12)


def test_grid_aligned_crop_is_pixel_exact(rng):
    img = rng.random((512, 512, 3))
    s = 64 / 512
    i0, j0 = 100, 37  # top-left source pixel of the window
    center = (-1 + 2 * j0 / 512 + s, -1 + 2 * i0 / 512 + s)
    got = crop_real_patch(torch.as_tensor(img), s, center, 64).numpy()
    np.testing.assert_allclose(got, img[i0:i0 + 64, j0:j0 + 64], atol=1e-12)


@given(st.floats(0.05, 1.0), st.floats(0, 1), st.floats(0, 1))
def test_crop_matches_loop_oracle(s, a, b):
    img = np.random.default_rng(0).random((40, 40, 3))
    center = ((1 - s) * (2 * a - 1), (1 - s) * (2 * b - 1))
    got = crop_real_patch(torch.as_tensor(img), s, center, 12).numpy()
    np.testing.assert_allclose(got, crop_oracle(img, s, center, 12), atol=1e-6)


def test_crop_rejects_out_of_bounds_window():
    with pytest.raises(InvalidWindowError):
        crop_real_patch(torch.zeros(16, 16, 3), 0.5, (0.6, 0.0), 8)


def test_aug_angle_bound_values():
    assert aug_angle_bound(0) == 0.0
    assert aug_angle_bound(50) == 7.5
    assert aug_angle_bound(100) == 15.0
    assert aug_angle_bound(150) == 15.0


def test_zero_angle_is_identity():
    img = torch.rand(16, 16, 3)
    out, mask = perspective_augment(img, 65.0, 0.0)
    assert torch.equal(out, img) and mask.all()


def test_angle_beyond_bound_is_contract_violation():
    with pytest.raises(ContractViolationError):
        perspective_augment(torch.rand(8, 8, 3), 65.0, 10.0, bound=aug_angle_bound(50))


def smooth_image(n):
    y, x = np.mgrid[0:n, 0:n] / n
    return torch.as_tensor(np.stack([0.5 + 0.4 * np.sin(3 * x + 1), 0.5 + 0.4 * np.cos(2 * y),
                                     0.5 + 0.3 * np.sin(2 * x + 3 * y)], -1))


def psnr(a, b):
    mse = float(((a - b) ** 2).mean())
    return 10 * math.log10(1.0 / mse)


@pytest.mark.parametrize("phi", [5.0, 10.0, 15.0])
def test_round_trip_psnr(phi):
    img = smooth_image(128)
    fwd, m1 = perspective_augment(img, 65.0, phi)
    back, m2 = perspective_augment(fwd, 65.0, -phi)
    # back-warp footprint must also read valid pixels of the forward warp
    valid = m2 & torch.as_tensor(np.pad(m1.numpy(), 1)[2:, 2:] & np.pad(m1.numpy(), 1)[:-2, :-2])
    assert valid.sum() > 0.4 * valid.numel()
    assert psnr(back[valid], img[valid]) >= 40


def test_lines_stay_straight():
    n = 128
    y = np.arange(n)[:, None] + 0.0 * np.arange(n)[None, :]
    line = np.exp(-0.5 * ((y - 30.3) / 1.5) ** 2)
    img = torch.as_tensor(np.repeat(line[..., None], 3, axis=-1))
    out, mask = perspective_augment(img, 65.0, 12.0)
    rows = np.arange(n, dtype=np.float64)
    xs, ys = [], []
    for col in range(n):
        column = out[:, col, 0].numpy()
        support = torch.as_tensor(column > 1e-6)
        if column.sum() < 1.0 or not mask[support, col].all():
            continue
        xs.append(col)
        ys.append((column * rows).sum() / column.sum())
    assert len(xs) > n // 2
    coef = np.polyfit(xs, ys, 1)
    resid = np.abs(np.polyval(coef, xs) - np.asarray(ys))
    assert abs(coef[0]) > 1e-3  # the line is tilted by the warp
    assert resid.max() <= 0.25


def test_mask_marks_supported_pixels():
    out, mask = perspective_augment(torch.ones(32, 32, 3), 65.0, 15.0)
    assert not mask.all() and mask.any()
    assert torch.allclose(out[mask], torch.ones_like(out[mask]), atol=1e-12)


def test_window_is_valid_respects_mask():
    mask = torch.ones(32, 32, dtype=torch.bool)
    mask[:, :4] = False
    assert window_is_valid(mask, 0.5, (0.5, 0.0), 16)
    assert not window_is_valid(mask, 0.5, (-0.5, 0.0), 16)


def test_real_patch_sampler_batch(rng):
    images = torch.rand(3, 64, 64, 3)
    sampler = RealPatchSampler(images, 65.0, 16)
    patches, scales, specs = sampler.sample(6, 120, rng)
    assert patches.shape == (6, 16, 16, 3)
    lo, hi = scale_bounds(120)
    assert ((scales >= lo - 1e-6) & (scales <= hi + 1e-6)).all()
    for spec in specs:
        assert max(abs(c) for c in spec.center) + spec.scale <= 1


def test_fixed_schedule_and_unaugmented_sampler_matches_crop(rng):
    images = torch.rand(2, 32, 32, 3)
    sampler = RealPatchSampler(images, 65.0, 8, ScaleSchedule.fixed(1.0), AugSchedule(), perspective=False)
    patches, scales, specs = sampler.sample(2, 500, rng)
    assert (scales == 1).all()
    for p, spec in zip(patches, specs):
        assert torch.allclose(p, crop_real_patch(images[spec.source], 1.0, (0.0, 0.0), 8))


def test_translate_and_cutout(rng):
    p = torch.arange(2 * 4 * 4 * 3, dtype=torch.float32).reshape(2, 4, 4, 3)
    t = translate(p, (1, 0))
    assert torch.equal(t[:, 1:], p[:, :-1]) and torch.equal(t[:, 0], p[:, 0])
    c = cutout(torch.zeros(2, 8, 8, 3), rng, fraction=0.25, fill=1.0)
    assert (c.sum(dim=(1, 2, 3)) == 2 * 2 * 3).all()
