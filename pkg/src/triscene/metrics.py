"""Kernel Inception Distance over image embeddings and fixed-camera diversity.

The embedders here are self-contained stand-ins for the Inception network;
any callable ``images -> [n, d]`` can be wrapped with
:class:`CallableEmbedder` to plug in pretrained features.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import InsufficientSamplesError, InvalidInputError


@dataclass
class EmbeddingSet:
    values: np.ndarray  # [n, d]
    embedder_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInputError("embeddings must be a 2-D array")
        if not np.isfinite(self.values).all():
            raise InvalidInputError("embeddings contain non-finite values")

    def __len__(self):
        return self.values.shape[0]


def _as_bchw(images):
    images = torch.as_tensor(np.asarray(images) if not torch.is_tensor(images) else images)
    if images.dim() == 3:
        images = images.unsqueeze(0)
    if images.shape[-1] != 3:
        raise InvalidInputError("images must be channels-last RGB")
    return images.double().permute(0, 3, 1, 2)


class DownsampleEmbedder:
    """Area-downsample to ``size x size`` and flatten (768-d at the default 16)."""

    def __init__(self, size=16):
        self.size = size
        self.id = f"downsample{size}"

    def __call__(self, images):
        x = F.adaptive_avg_pool2d(_as_bchw(images), self.size)
        return EmbeddingSet(x.flatten(1).numpy(), self.id)


class RandomProjectionEmbedder:
    """Fixed Gaussian projection of multi-scale pixel statistics."""

    def __init__(self, dim=256, seed=0, size=32):
        self.dim, self.seed, self.size = dim, seed, size
        self.id = f"randproj{dim}-s{seed}"
        in_dim = 3 * size * size + 2 * 3 * 3
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, dim))

    def __call__(self, images):
        x = _as_bchw(images)
        stats = []
        for s in (1, 2, 4):
            pooled = F.adaptive_avg_pool2d(x, max(1, x.shape[-1] // (4 * s)))
            stats += [pooled.mean(dim=(2, 3)), pooled.std(dim=(2, 3), unbiased=False)]
        small = F.adaptive_avg_pool2d(x, self.size).flatten(1)
        feats = torch.cat([small] + stats, dim=1).numpy()
        return EmbeddingSet(feats @ self.projection, self.id)


class CallableEmbedder:
    """Adapter for external feature extractors (e.g. a pretrained network)."""

    def __init__(self, fn, embedder_id):
        self.fn = fn
        self.id = embedder_id

    def __call__(self, images):
        return EmbeddingSet(np.asarray(self.fn(images)), self.id)


def polynomial_kernel(x, y):
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(real, fake):
    """Unbiased squared MMD with the cubic polynomial kernel.

    Within-set sums skip the diagonal.  For equal set sizes the cross term
    also skips index-paired terms ``k(x_i, y_i)`` (the U-statistic form), so
    a set compared with itself scores exactly zero; for unequal sizes every
    cross pair is used.
    """
    if isinstance(real, EmbeddingSet) and isinstance(fake, EmbeddingSet):
        if real.embedder_id != fake.embedder_id:
            raise InvalidInputError("real and fake embeddings come from different embedders")
    x = real.values if isinstance(real, EmbeddingSet) else np.asarray(real, dtype=np.float64)
    y = fake.values if isinstance(fake, EmbeddingSet) else np.asarray(fake, dtype=np.float64)
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise InsufficientSamplesError("KID needs at least two embeddings per set")
    if x.shape[1] != y.shape[1]:
        raise InvalidInputError("embedding dimensions differ")
    xx = _mean(polynomial_kernel(x, x), skip_diagonal=True)
    yy = _mean(polynomial_kernel(y, y), skip_diagonal=True)
    xy = _mean(polynomial_kernel(x, y), skip_diagonal=n == m)
    return float(xx + yy - 2.0 * xy)


def _mean(K, skip_diagonal):
    # averaging offsets from one entry keeps a constant kernel matrix exact
    values = K[~np.eye(*K.shape, dtype=bool)] if skip_diagonal else K.ravel()
    ref = values[0]
    return ref + (values - ref).mean()


def gradient_magnitude(img):
    gx = img[..., :, 1:, :] - img[..., :, :-1, :]
    gy = img[..., 1:, :, :] - img[..., :-1, :, :]
    return torch.sqrt(gx[..., :-1, :, :] ** 2 + gy[..., :, :-1, :] ** 2 + 1e-12)


def pixel_gradient_distance(a, b):
    """Mean absolute pixel difference plus mean gradient-magnitude difference.

    A cheap stand-in for a learned perceptual distance; zero iff ``a == b``
    in the pixel term.
    """
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    pix = (a - b).abs().mean()
    if bool(pix == 0):
        return 0.0
    grad = (gradient_magnitude(a) - gradient_magnitude(b)).abs().mean()
    return float(pix + grad)


def pairwise_diversity(images, distance=pixel_gradient_distance):
    """Mean distance over all unordered pairs of ``images``."""
    n = len(images)
    if n < 2:
        raise InsufficientSamplesError("diversity needs at least two images")
    dists = [distance(images[i], images[j]) for i, j in itertools.combinations(range(n), 2)]
    return float(np.mean(dists))


@torch.no_grad()
def diversity(generator, pose, fov_deg, resolution, n_latents=8, distance=pixel_gradient_distance,
              seed=0, n_samples=96):
    """Render ``n_latents`` scenes from one fixed pose and average pairwise distances."""
    from .rendering import render_view

    if n_latents < 2:
        raise InsufficientSamplesError("diversity needs at least two latents")
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n_latents, generator.z_dim, generator=gen)
    images = []
    for i in range(n_latents):
        grid = generator.sample_scene(z[i:i + 1])
        images.append(render_view(generator.field(grid), pose.to(torch.float32), fov_deg,
                                  resolution, n_samples=n_samples).colors[0])
    return pairwise_diversity(images, distance)
