"""Latent-to-triplane generator.

A mapping MLP turns ``z`` into a style vector ``w``; a style-modulated
convolutional synthesis network grows a learned 4x4 constant to an
``N x N x 3C`` feature image, which is split channel-wise into the xy, xz
and yz planes.  Layers use equalized learning rate (weights stored at unit
variance and scaled at runtime), which is what makes the 2e-3 Adam step
size reasonable.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigurationError, InvalidInputError
from .field import FieldDecoder, TriplaneField, TriplaneGrid

Z_DIM = 128
W_DIM = 128


class EqualLinear(nn.Module):
    def __init__(self, in_features, out_features, bias_init=0.0, lr_mul=1.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features) / lr_mul)
        self.bias = nn.Parameter(torch.full((out_features,), float(bias_init)))
        self.scale = lr_mul / math.sqrt(in_features)
        self.lr_mul = lr_mul

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias * self.lr_mul)


class MappingNetwork(nn.Module):
    def __init__(self, z_dim=Z_DIM, w_dim=W_DIM, layers=4, lr_mul=0.01):
        super().__init__()
        self.z_dim = z_dim
        dims = [z_dim] + [w_dim] * layers
        self.layers = nn.ModuleList(EqualLinear(a, b, lr_mul=lr_mul) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, z):
        x = z * torch.rsqrt(z.square().mean(dim=-1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2) * math.sqrt(2)
        return x


class ModulatedConv2d(nn.Module):
    """Per-sample style-modulated convolution (grouped-conv formulation)."""

    def __init__(self, in_channels, out_channels, kernel_size, w_dim=W_DIM, demodulate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.affine = EqualLinear(w_dim, in_channels, bias_init=1.0)
        self.scale = 1.0 / math.sqrt(in_channels * kernel_size ** 2)
        self.padding = kernel_size // 2
        self.demodulate = demodulate

    def forward(self, x, w):
        B, C, H, W = x.shape
        styles = self.affine(w)  # [B, C]
        weight = self.weight.unsqueeze(0) * self.scale * styles[:, None, :, None, None]
        if self.demodulate:
            weight = weight * torch.rsqrt(weight.square().sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        out_c = weight.shape[1]
        weight = weight.reshape(B * out_c, C, *weight.shape[3:])
        out = F.conv2d(x.reshape(1, B * C, H, W), weight, padding=self.padding, groups=B)
        return out.reshape(B, out_c, H, W) + self.bias[None, :, None, None]


class StyledLayer(nn.Module):
    def __init__(self, in_channels, out_channels, w_dim=W_DIM):
        super().__init__()
        self.conv = ModulatedConv2d(in_channels, out_channels, 3, w_dim)

    def forward(self, x, w):
        return F.leaky_relu(self.conv(x, w), 0.2) * math.sqrt(2)


class SynthesisNetwork(nn.Module):
    def __init__(self, resolution, out_channels, w_dim=W_DIM, channel_base=16384, channel_max=256):
        super().__init__()
        log2 = int(math.log2(resolution))
        if 2 ** log2 != resolution or resolution < 4:
            raise ConfigurationError(f"triplane resolution must be a power of two >= 4, got {resolution}")
        self.resolution = resolution
        self.out_channels = out_channels

        def nch(res):
            return max(1, min(channel_base // res, channel_max))

        self.const = nn.Parameter(torch.randn(nch(4), 4, 4))
        self.initial = StyledLayer(nch(4), nch(4), w_dim)
        self.blocks = nn.ModuleList()
        for k in range(3, log2 + 1):
            res = 2 ** k
            self.blocks.append(nn.ModuleList([StyledLayer(nch(res // 2), nch(res), w_dim),
                                              StyledLayer(nch(res), nch(res), w_dim)]))
        self.to_features = ModulatedConv2d(nch(resolution), out_channels, 1, w_dim, demodulate=False)

    def forward(self, w):
        x = self.const.unsqueeze(0).expand(w.shape[0], *self.const.shape)
        x = self.initial(x, w)
        for up_layer, layer in self.blocks:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = layer(up_layer(x, w), w)
        return self.to_features(x, w)


class TriplaneGenerator(nn.Module):
    """Maps ``z`` to a :class:`TriplaneGrid` and owns the field decoder."""

    def __init__(self, resolution=256, channels=32, aggregation="sum", z_dim=Z_DIM, w_dim=W_DIM,
                 mapping_layers=4, channel_base=16384, channel_max=256, decoder_hidden=64):
        super().__init__()
        self.resolution = resolution
        self.channels = channels
        self.z_dim = z_dim
        self.w_dim = w_dim
        self.mapping = MappingNetwork(z_dim, w_dim, mapping_layers)
        self.synthesis = SynthesisNetwork(resolution, 3 * channels, w_dim, channel_base, channel_max)
        self.decoder = FieldDecoder(channels, decoder_hidden, aggregation)

    def _check_latent(self, v, dim, name):
        v = torch.as_tensor(v)
        if v.dim() == 1:
            v = v.unsqueeze(0)
        if v.dim() != 2 or v.shape[-1] != dim:
            raise InvalidInputError(f"{name} must have dimension {dim}, got shape {tuple(v.shape)}")
        if not bool(torch.isfinite(v).all()):
            raise InvalidInputError(f"{name} contains non-finite values")
        return v.to(self.mapping.layers[0].weight.dtype)

    def map_latent(self, z):
        return self.mapping(self._check_latent(z, self.z_dim, "z"))

    def synthesize(self, w):
        """Raw ``[B, 3C, N, N]`` feature image before the plane split."""
        return self.synthesis(self._check_latent(w, self.w_dim, "w"))

    def synthesize_triplanes(self, w):
        feat = self.synthesize(w)
        B, _, N, _ = feat.shape
        if N != self.resolution or feat.shape[1] != 3 * self.channels:
            raise ConfigurationError("synthesis output does not match the triplane configuration")
        return TriplaneGrid(feat.reshape(B, 3, self.channels, N, N))

    def sample_scene(self, z):
        return self.synthesize_triplanes(self.map_latent(z))

    def field(self, grid):
        return TriplaneField(grid, self.decoder)

    def forward(self, z):
        return self.sample_scene(z)

    def num_parameters(self):
        return sum(p.numel() for p in self.parameters())
