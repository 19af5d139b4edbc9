"""Scale-conditioned patch discriminator and its regularizers.

The scale of each patch is appended to the RGB input as a constant fourth
channel.  No layer mixes batch members (no batch norm, no minibatch
statistics), so a patch's logit does not depend on what else is in the
batch.  A small decoder reconstructs a 16x16 copy of real patches from the
8x8 trunk feature; its L1 error is the reconstruction regularizer.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigurationError, InvalidInputError

TAP_RESOLUTION = 8
RECON_RESOLUTION = 16


class EqualConv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        self.scale = 1.0 / math.sqrt(in_channels * kernel_size ** 2)
        self.padding = kernel_size // 2

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class EqualLinear(nn.Module):
    def __init__(self, in_features, out_features):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.scale = 1.0 / math.sqrt(in_features)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


def lrelu(x):
    return F.leaky_relu(x, 0.2) * math.sqrt(2)


class ResidualDown(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv0 = EqualConv2d(in_channels, in_channels, 3)
        self.conv1 = EqualConv2d(in_channels, out_channels, 3)
        self.skip = EqualConv2d(in_channels, out_channels, 1, bias=False)

    def forward(self, x):
        y = F.avg_pool2d(self.skip(x), 2)
        x = lrelu(self.conv0(x))
        x = F.avg_pool2d(lrelu(self.conv1(x)), 2)
        return (x + y) / math.sqrt(2)


class PatchDiscriminator(nn.Module):
    def __init__(self, patch_size=64, channel_base=8192, channel_max=256, recon_channels=32):
        super().__init__()
        log2 = int(math.log2(patch_size))
        if 2 ** log2 != patch_size or patch_size < 2 * TAP_RESOLUTION:
            raise ConfigurationError(f"patch size must be a power of two >= 16, got {patch_size}")
        self.patch_size = patch_size

        def nch(res):
            return max(1, min(channel_base // res, channel_max))

        self.from_rgb = EqualConv2d(4, nch(patch_size), 1)
        self.blocks = nn.ModuleList()
        self.block_out_res = []
        res = patch_size
        while res > 4:
            self.blocks.append(ResidualDown(nch(res), nch(res // 2)))
            res //= 2
            self.block_out_res.append(res)
        self.epilogue_conv = EqualConv2d(nch(4), nch(4), 3)
        self.fc = EqualLinear(nch(4) * 16, nch(4))
        self.out = EqualLinear(nch(4), 1)
        self.recon_size = min(RECON_RESOLUTION, patch_size)
        self.recon_conv0 = EqualConv2d(nch(TAP_RESOLUTION), recon_channels, 3)
        self.recon_conv1 = EqualConv2d(recon_channels, 3, 3)

    @staticmethod
    def build_input(patches, scales):
        """``[B, H, W, 3]`` patches in [0, 1] plus scales ``[B]`` -> ``[B, 4, H, W]``.

        RGB is mapped to [-1, 1]; the fourth channel is the scale repeated
        over every pixel.
        """
        if patches.dim() != 4 or patches.shape[-1] != 3:
            raise InvalidInputError(f"patches must be [B, H, W, 3], got {tuple(patches.shape)}")
        B, H, W, _ = patches.shape
        scales = torch.as_tensor(scales, dtype=patches.dtype).reshape(-1)
        if scales.numel() == 1:
            scales = scales.expand(B)
        if scales.shape[0] != B:
            raise InvalidInputError("one scale per patch is required")
        rgb = patches.permute(0, 3, 1, 2) * 2.0 - 1.0
        plane = scales[:, None, None, None].expand(B, 1, H, W)
        return torch.cat([rgb, plane], dim=1)

    def forward_input(self, x, return_tap=False):
        if x.shape[1] != 4 or x.shape[-1] != self.patch_size or x.shape[-2] != self.patch_size:
            raise InvalidInputError(
                f"expected [B, 4, {self.patch_size}, {self.patch_size}] input, got {tuple(x.shape)}")
        h = lrelu(self.from_rgb(x))
        tap = None
        for block, res in zip(self.blocks, self.block_out_res):
            h = block(h)
            if res == TAP_RESOLUTION:
                tap = h
        h = lrelu(self.epilogue_conv(h))
        h = lrelu(self.fc(h.flatten(1)))
        logits = self.out(h)[:, 0]
        return (logits, tap) if return_tap else logits

    def forward(self, patches, scales):
        return self.forward_input(self.build_input(patches, scales))

    def reconstruct(self, tap):
        """Decode the 8x8 trunk feature to a ``recon_size^2`` image in [-1, 1] units."""
        h = F.interpolate(tap, size=(self.recon_size, self.recon_size), mode="bilinear",
                          align_corners=False)
        return self.recon_conv1(lrelu(self.recon_conv0(h)))

    def recon_target(self, patches):
        rgb = patches.permute(0, 3, 1, 2) * 2.0 - 1.0
        return F.interpolate(rgb, size=(self.recon_size, self.recon_size), mode="bilinear",
                             align_corners=False, antialias=True)

    def score_and_reconstruct(self, patches, scales):
        """Logits plus ``(reconstruction, target)`` for real patches."""
        logits, tap = self.forward_input(self.build_input(patches, scales), return_tap=True)
        return logits, self.reconstruct(tap), self.recon_target(patches)


def discriminate(params, patch, scale):
    """Logit(s) of ``params`` for one ``[H, W, 3]`` patch or a batch."""
    single = patch.dim() == 3
    if single:
        patch = patch.unsqueeze(0)
    logits = params(patch, scale)
    return logits[0] if single else logits


def r1_penalty(disc, real_patches, scales):
    """Batch mean of ``|grad_patch D(patch, s)|^2`` (graph kept for training)."""
    if not real_patches.requires_grad:
        real_patches = real_patches.detach().requires_grad_(True)
    logits = disc(real_patches, scales)
    (grad,) = torch.autograd.grad(logits.sum(), real_patches, create_graph=True)
    return grad.square().flatten(1).sum(dim=1).mean()


def reconstruction_loss(recon, target):
    return (recon - target).abs().mean()


def recon_regularizer(disc, real_patches, scales):
    _, recon, target = disc.score_and_reconstruct(real_patches, scales)
    return reconstruction_loss(recon, target)
