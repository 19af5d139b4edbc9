"""Progressive patch scaling, window sampling, real-patch cropping and
scheduled perspective augmentation.

Images and patches are channels-last tensors ``[..., H, W, 3]`` in [0, 1].
Cropping uses the same pixel-center convention as ray generation, so the
crop of a real image and the render of the same window line up pixel for
pixel.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import ContractViolationError, InvalidInputError
from .rendering import check_window, pixel_centers


def _lerp(a, b, frac):
    # (1 - f) a + f b reproduces both endpoints exactly
    return (1.0 - frac) * a + frac * b


@dataclass(frozen=True)
class ScaleSchedule:
    """Linear ramp of the patch-scale range ``(s_min, s_max)`` over epochs."""

    s_min_start: float = 0.6
    s_max_start: float = 0.8
    s_min_end: float = 0.25
    s_max_end: float = 0.55
    ramp_epochs: int = 100

    def __post_init__(self):
        for lo, hi in ((self.s_min_start, self.s_max_start), (self.s_min_end, self.s_max_end)):
            if not 0 < lo <= hi <= 1:
                raise ValueError(f"invalid scale range ({lo}, {hi})")
        if self.s_min_end > self.s_min_start or self.s_max_end > self.s_max_start:
            raise ValueError("scale bounds must not increase over training")

    @classmethod
    def fixed(cls, scale):
        """Constant scale, e.g. ``fixed(1.0)`` for full-image discrimination."""
        return cls(scale, scale, scale, scale, 1)

    def bounds(self, epoch):
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        if epoch >= self.ramp_epochs:
            return (self.s_min_end, self.s_max_end)
        frac = epoch / self.ramp_epochs
        return (_lerp(self.s_min_start, self.s_min_end, frac),
                _lerp(self.s_max_start, self.s_max_end, frac))


@dataclass(frozen=True)
class AugSchedule:
    """Maximum perspective-augmentation angle, ramped linearly then held."""

    max_angle_start: float = 0.0
    max_angle_end: float = 15.0
    ramp_epochs: int = 100

    def bound(self, epoch):
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        if epoch >= self.ramp_epochs:
            return self.max_angle_end
        return _lerp(self.max_angle_start, self.max_angle_end, epoch / self.ramp_epochs)


DEFAULT_SCALE_SCHEDULE = ScaleSchedule()
DEFAULT_AUG_SCHEDULE = AugSchedule()


def scale_bounds(epoch, schedule=DEFAULT_SCALE_SCHEDULE):
    return schedule.bounds(epoch)


def aug_angle_bound(epoch, schedule=DEFAULT_AUG_SCHEDULE):
    return schedule.bound(epoch)


def sample_scale(epoch, rng, schedule=DEFAULT_SCALE_SCHEDULE, size=None):
    lo, hi = schedule.bounds(epoch)
    return rng.uniform(lo, hi, size=size)


def sample_window(scale, rng):
    """Window center uniform over ``[-(1 - s), 1 - s]^2``.

    Written as ``(1 - s) * (2u - 1)`` so ``|u0| + s <= 1`` holds in floating
    point, not just in exact arithmetic.
    """
    scale = np.asarray(scale, dtype=np.float64)
    u = rng.random(size=scale.shape + (2,))
    return (1.0 - scale)[..., None] * (2.0 * u - 1.0)


@dataclass
class PatchSpec:
    scale: float
    center: tuple
    source: int  # real image index, or camera index for generated patches


def _to_bchw(images):
    if images.dim() == 3:
        images = images.unsqueeze(0)
    return images.permute(0, 3, 1, 2)


def crop_real_patch(image, scale, center, size=64):
    """Bilinearly resample the ``s``-wide window at ``center`` to ``size^2``.

    ``image`` is ``[H', W', 3]`` or ``[B, H', W', 3]``; ``scale`` and ``center``
    are scalars/``[2]`` or batched ``[B]``/``[B, 2]``.
    """
    image = torch.as_tensor(image)
    single = image.dim() == 3
    src = _to_bchw(image)
    B = src.shape[0]
    dtype = src.dtype if src.is_floating_point() else torch.float32
    src = src.to(dtype)
    scale = torch.as_tensor(scale, dtype=torch.float64).reshape(-1).expand(B)
    center = torch.as_tensor(center, dtype=torch.float64).reshape(-1, 2).expand(B, 2)
    check_window(scale, center)
    g = pixel_centers(size)
    gy, gx = torch.meshgrid(g, g, indexing="ij")
    ux = center[:, 0, None, None] + scale[:, None, None] * gx
    uy = center[:, 1, None, None] + scale[:, None, None] * gy
    grid = torch.stack([ux, uy], dim=-1).to(dtype)
    out = F.grid_sample(src, grid, mode="bilinear", padding_mode="border", align_corners=False)
    out = out.permute(0, 2, 3, 1)
    return out[0] if single else out


def rotation_homography_coords(size, fov_deg, angle_deg, dtype=torch.float64):
    """Source image-plane coordinates ``[size, size, 2]`` for a yaw warp.

    Output pixel ``u`` reads the source at ``K R_y(angle) K^-1 u``; points
    that rotate behind the camera get NaN.
    """
    t = math.tan(math.radians(fov_deg) / 2.0)
    g = pixel_centers(size, dtype)
    gy, gx = torch.meshgrid(g, g, indexing="ij")
    d = torch.stack([gx * t, gy * t, torch.ones_like(gx)], dim=-1)
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    R = torch.tensor([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=dtype)
    r = d @ R.T
    z = r[..., 2]
    ux = r[..., 0] / (z * t)
    uy = r[..., 1] / (z * t)
    behind = z <= 0
    ux = torch.where(behind, torch.full_like(ux, float("nan")), ux)
    uy = torch.where(behind, torch.full_like(uy, float("nan")), uy)
    return torch.stack([ux, uy], dim=-1)


def perspective_augment(image, fov_deg, angle_deg, bound=None):
    """Re-project ``image`` as if the camera yawed by ``angle_deg``.

    Returns ``(warped, mask)`` where ``mask`` marks output pixels whose source
    location lies between source pixel centers (fully supported bilinear
    footprint).  ``bound`` enforces the current schedule limit.
    """
    if bound is not None and abs(angle_deg) > bound + 1e-9:
        raise ContractViolationError(f"augmentation angle {angle_deg} exceeds bound {bound}")
    image = torch.as_tensor(image)
    single = image.dim() == 3
    src = _to_bchw(image)
    if src.shape[-1] != src.shape[-2]:
        raise InvalidInputError("perspective augmentation expects square images")
    size = src.shape[-1]
    if angle_deg == 0:
        mask = torch.ones(src.shape[0], size, size, dtype=torch.bool)
        return (image, mask[0]) if single else (image, mask)
    coords = rotation_homography_coords(size, fov_deg, angle_deg)
    lim = 1.0 - 1.0 / size
    valid = torch.isfinite(coords).all(-1) & (coords.abs() <= lim + 1e-12).all(-1)
    grid = torch.nan_to_num(coords, nan=2.0).to(src.dtype).expand(src.shape[0], size, size, 2)
    out = F.grid_sample(src, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    out = out.permute(0, 2, 3, 1)
    mask = valid.expand(src.shape[0], size, size)
    return (out[0], mask[0]) if single else (out, mask)


def window_is_valid(mask, scale, center, size):
    """True if every bilinear tap of the window's ``size^2`` samples is valid."""
    n = mask.shape[-1]
    lo = [c - scale * (1 - 1.0 / size) for c in center]
    hi = [c + scale * (1 - 1.0 / size) for c in center]

    def px(u, fn):
        return int(min(max(fn((u + 1) * n / 2 - 0.5), 0), n - 1))

    x0, x1 = px(lo[0], math.floor), px(hi[0], math.ceil)
    y0, y1 = px(lo[1], math.floor), px(hi[1], math.ceil)
    return bool(mask[y0:y1 + 1, x0:x1 + 1].all())


def sample_valid_window(mask, scale, rng, size, max_tries=32):
    """Rejection-sample a window lying fully inside ``mask``; None if none found."""
    for _ in range(max_tries):
        center = sample_window(scale, rng)
        if window_is_valid(mask, float(scale), center.tolist(), size):
            return center
    return None


def translate(patches, shift):
    """Shift ``[B, H, W, 3]`` patches by integer ``(dy, dx)`` with edge padding."""
    dy, dx = shift
    H, W = patches.shape[1:3]
    iy = (torch.arange(H) - dy).clamp(0, H - 1)
    ix = (torch.arange(W) - dx).clamp(0, W - 1)
    return patches[:, iy][:, :, ix]


def cutout(patches, rng, fraction=0.25, fill=0.5):
    """Fill one random square of side ``fraction * H`` per patch."""
    B, H, W, _ = patches.shape
    side = max(1, int(round(fraction * H)))
    mask = torch.ones(B, H, W, 1, dtype=patches.dtype)
    for b in range(B):
        y, x = rng.integers(0, H - side + 1), rng.integers(0, W - side + 1)
        mask[b, y:y + side, x:x + side] = 0
    return patches * mask + fill * (1 - mask)


class RealPatchSampler:
    """Draws augmented real patches with their scales for one training batch."""

    def __init__(self, images, fov_deg, patch_size, scale_schedule=DEFAULT_SCALE_SCHEDULE,
                 aug_schedule=DEFAULT_AUG_SCHEDULE, perspective=True):
        images = torch.as_tensor(images)
        if images.dim() != 4 or images.shape[-1] != 3:
            raise InvalidInputError("images must be [N, H, W, 3]")
        self.images = images.float()
        self.fov_deg = float(fov_deg)
        self.patch_size = int(patch_size)
        self.scale_schedule = scale_schedule
        self.aug_schedule = aug_schedule
        self.perspective = perspective

    def __len__(self):
        return self.images.shape[0]

    def sample(self, batch_size, epoch, rng):
        """Returns ``(patches [B, H, H, 3], scales [B], specs)``."""
        bound = self.aug_schedule.bound(epoch) if self.perspective else 0.0
        idx = rng.integers(0, len(self), size=batch_size)
        scales = sample_scale(epoch, rng, self.scale_schedule, size=batch_size)
        angles = rng.uniform(-bound, bound, size=batch_size) if bound > 0 else np.zeros(batch_size)
        patches, specs = [], []
        for b in range(batch_size):
            img = self.images[idx[b]]
            center = None
            if angles[b] != 0:
                warped, mask = perspective_augment(img, self.fov_deg, float(angles[b]), bound)
                center = sample_valid_window(mask, scales[b], rng, self.patch_size)
                if center is not None:
                    img = warped
            if center is None:
                angles[b] = 0.0
                center = sample_window(scales[b], rng)
            patches.append(crop_real_patch(img, scales[b], center, self.patch_size))
            specs.append(PatchSpec(float(scales[b]), tuple(center.tolist()), int(idx[b])))
        return torch.stack(patches), torch.as_tensor(scales, dtype=torch.float32), specs
