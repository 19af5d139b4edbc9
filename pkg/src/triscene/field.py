"""Triplane scene representation and point queries.

A scene is three axis-aligned feature planes covering the cube [-1, 1]^3.
A point ``x`` reads plane ``xy`` at ``(x, y)``, plane ``xz`` at ``(x, z)`` and
plane ``yz`` at ``(y, z)``; the three features are aggregated and decoded to
color and density by a small MLP.  Planes are stored as ``[C, N, N]`` images
whose column index follows the first coordinate and whose row index follows
the second, with grid nodes at ``-1 + 2 i / (N - 1)``.
"""

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigurationError, InvalidInputError

PLANE_ORDER = ("xy", "xz", "yz")
PLANE_AXES = ((0, 1), (0, 2), (1, 2))
AGGREGATIONS = ("sum", "concat")
DEFAULT_PROBE_STEP = 2.0 / 96


class FieldSample(NamedTuple):
    rgb: torch.Tensor  # [..., 3] in [0, 1]
    sigma: torch.Tensor  # [...] >= 0


@dataclass
class TriplaneGrid:
    """Batched triplanes, ``planes`` of shape ``[B, 3, C, N, N]`` (xy, xz, yz)."""

    planes: torch.Tensor

    def __post_init__(self):
        if self.planes.dim() == 4:
            self.planes = self.planes.unsqueeze(0)
        if self.planes.dim() != 5 or self.planes.shape[1] != 3:
            raise InvalidInputError(
                f"planes must have shape [B, 3, C, N, N], got {tuple(self.planes.shape)}")
        if self.planes.shape[-1] != self.planes.shape[-2]:
            raise InvalidInputError("feature planes must be square")

    @classmethod
    def from_planes(cls, xy, xz, yz):
        shapes = {tuple(p.shape) for p in (xy, xz, yz)}
        if len(shapes) != 1:
            raise InvalidInputError(f"planes disagree in shape: {sorted(shapes)}")
        return cls(torch.stack([xy, xz, yz], dim=-4))

    @classmethod
    def zeros(cls, resolution, channels, batch_size=1, dtype=torch.float32):
        return cls(torch.zeros(batch_size, 3, channels, resolution, resolution, dtype=dtype))

    @property
    def xy(self):
        return self.planes[:, 0]

    @property
    def xz(self):
        return self.planes[:, 1]

    @property
    def yz(self):
        return self.planes[:, 2]

    @property
    def batch_size(self):
        return self.planes.shape[0]

    @property
    def channels(self):
        return self.planes.shape[2]

    @property
    def resolution(self):
        return self.planes.shape[-1]

    def is_finite(self):
        return bool(torch.isfinite(self.planes).all())

    def detach(self):
        return TriplaneGrid(self.planes.detach())

    def __getitem__(self, index):
        planes = self.planes[index]
        return TriplaneGrid(planes)


def _check_finite(t, name):
    if not bool(torch.isfinite(t).all()):
        raise InvalidInputError(f"{name} contains non-finite values")


def bilinear_sample(plane, uv):
    """Bilinearly interpolate ``plane`` at ``uv`` in [-1, 1]^2.

    ``plane`` is ``[C, N, N]`` or ``[B, C, N, N]``; ``uv`` is ``[..., 2]`` (or
    ``[B, ..., 2]`` for a batched plane).  Coordinates outside the square are
    clamped to the boundary.  Returns features of shape ``[..., C]``.
    """
    _check_finite(uv, "uv")
    batched = plane.dim() == 4
    if not batched:
        plane = plane.unsqueeze(0)
        uv = uv.unsqueeze(0)
    lead = uv.shape[1:-1]
    grid = uv.clamp(-1.0, 1.0).reshape(uv.shape[0], -1, 1, 2).to(plane.dtype)
    out = F.grid_sample(plane, grid, mode="bilinear", padding_mode="border", align_corners=True)
    out = out[..., 0].transpose(1, 2).reshape(uv.shape[0], *lead, plane.shape[1])
    return out if batched else out[0]


def triplane_features(grid, x):
    """Per-plane features at points ``x`` of shape ``[B, M, 3]``.

    Returns ``[B, 3, M, C]``.  A grid with batch size 1 broadcasts over
    the point batch.
    """
    planes = grid.planes
    B, M = x.shape[0], x.shape[1]
    if planes.shape[0] == 1 and B > 1:
        planes = planes.expand(B, *planes.shape[1:])
    elif planes.shape[0] != B:
        raise InvalidInputError(f"grid batch {planes.shape[0]} does not match points batch {B}")
    C, N = planes.shape[2], planes.shape[-1]
    uv = torch.stack([x[..., list(axes)] for axes in PLANE_AXES], dim=1)  # [B, 3, M, 2]
    uv = uv.clamp(-1.0, 1.0).to(planes.dtype).reshape(B * 3, M, 1, 2)
    out = F.grid_sample(planes.reshape(B * 3, C, N, N), uv, mode="bilinear",
                        padding_mode="border", align_corners=True)
    return out[..., 0].reshape(B, 3, C, M).transpose(2, 3)


def aggregate(features, aggregation):
    """Combine ``[B, 3, M, C]`` per-plane features to the decoder input."""
    if aggregation == "sum":
        return features.sum(dim=1)
    if aggregation == "concat":
        B, _, M, C = features.shape
        return features.permute(0, 2, 1, 3).reshape(B, M, 3 * C)
    raise ConfigurationError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")


class FieldDecoder(nn.Module):
    """Decodes aggregated triplane features to color and density.

    Two shared layers feed a one-layer density head and a two-layer color
    head; hidden layers are ``hidden`` wide with leaky-ReLU activations.
    Density goes through softplus and color through a logistic sigmoid.
    """

    def __init__(self, channels, hidden=64, aggregation="sum", negative_slope=0.2):
        super().__init__()
        if aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"unknown aggregation {aggregation!r}")
        self.channels = channels
        self.aggregation = aggregation
        self.negative_slope = negative_slope
        self.in_features = channels if aggregation == "sum" else 3 * channels
        self.shared = nn.ModuleList([nn.Linear(self.in_features, hidden), nn.Linear(hidden, hidden)])
        self.density = nn.Linear(hidden, 1)
        self.color = nn.ModuleList([nn.Linear(hidden, hidden), nn.Linear(hidden, 3)])

    def raw(self, features):
        """Pre-activation ``(color_logits, density_logit)``."""
        h = features
        for layer in self.shared:
            h = F.leaky_relu(layer(h), self.negative_slope)
        density = self.density(h)[..., 0]
        c = F.leaky_relu(self.color[0](h), self.negative_slope)
        return self.color[1](c), density

    def forward(self, features):
        if features.shape[-1] != self.in_features:
            raise ConfigurationError(
                f"decoder expects {self.in_features} input features, got {features.shape[-1]}")
        logits, density = self.raw(features)
        return FieldSample(torch.sigmoid(logits), F.softplus(density))


def check_compatible(grid_channels, decoder):
    if decoder.channels != grid_channels:
        raise ConfigurationError(
            f"triplane has {grid_channels} channels but decoder was built for {decoder.channels}")


def inside_cube(x, bound=1.0):
    return (x.abs() <= bound).all(dim=-1)


def query_field(grid, decoder, x):
    """Color and density of the triplane scene at points ``x``.

    ``x`` is ``[B, M, 3]`` (or ``[M, 3]`` for a single-scene grid).  Density
    is forced to zero outside the unit cube.
    """
    _check_finite(x, "x")
    check_compatible(grid.channels, decoder)
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    feats = aggregate(triplane_features(grid, x), decoder.aggregation)
    rgb, sigma = decoder(feats)
    sigma = sigma * inside_cube(x).to(sigma.dtype)
    if squeeze:
        return FieldSample(rgb[0], sigma[0])
    return FieldSample(rgb, sigma)


class TriplaneField:
    """Callable field ``x -> FieldSample`` bound to a grid and decoder."""

    def __init__(self, grid, decoder):
        check_compatible(grid.channels, decoder)
        self.grid = grid
        self.decoder = decoder

    def __call__(self, x):
        return query_field(self.grid, self.decoder, x)


def occupancy_at(field, x, probe_step=DEFAULT_PROBE_STEP):
    """Opacity ``1 - exp(-sigma(x) * probe_step)`` of a short probe at ``x``."""
    if not probe_step > 0:
        raise InvalidInputError("probe_step must be positive")
    sigma = field(x).sigma
    return -torch.expm1(-sigma * probe_step)
