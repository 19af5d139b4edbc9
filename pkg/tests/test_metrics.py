import itertools

import numpy as np
import pytest
import torch

from triscene.cameras import yaw_facing
from triscene.exceptions import InsufficientSamplesError, InvalidInputError
from triscene.generator import TriplaneGenerator
from triscene.metrics import (CallableEmbedder, DownsampleEmbedder, EmbeddingSet, RandomProjectionEmbedder,
                              polynomial_kernel,
                              diversity, kid, pairwise_diversity, pixel_gradient_distance)


def k(a, b):
    return (float(np.dot(a, b)) / len(a) + 1.0) ** 3


def kid_loops(x, y):
    """Double-loop reference for the estimator used by :func:`kid`."""
    n, m = len(x), len(y)
    xx = sum(k(x[i], x[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    yy = sum(k(y[i], y[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    if n == m:
        xy = sum(k(x[i], y[j]) for i in range(n) for j in range(m) if i != j) / (n * (n - 1))
    else:
        xy = sum(k(x[i], y[j]) for i in range(n) for j in range(m)) / (n * m)
    return xx + yy - 2 * xy


def test_identical_sets_score_zero(rng):
    a = rng.normal(size=(50, 16))
    assert abs(kid(a, a.copy())) <= 1e-6


def test_constant_embeddings_exact():
    a, b = np.full(8, 0.3), np.full(8, -1.2)
    x, y = np.tile(a, (5, 1)), np.tile(b, (5, 1))

    def kern(u, v):
        return polynomial_kernel(u[None], v[None])[0, 0]

    assert kid(x, y) == kern(a, a) + kern(b, b) - 2 * kern(a, b)
    assert kid(x, y) == pytest.approx(k(a, a) + k(b, b) - 2 * k(a, b), rel=1e-14)


@pytest.mark.parametrize("m", [50, 37])
def test_matches_double_loop(rng, m):
    x, y = rng.normal(size=(50, 6)), rng.normal(0.3, 1.2, size=(m, 6))
    assert abs(kid(x, y) - kid_loops(x, y)) <= 1e-12


def test_permutation_invariance(rng):
    x, y = rng.normal(size=(20, 5)), rng.normal(size=(20, 5))
    perm = rng.permutation(20)
    # a joint relabelling of both sets leaves the equal-size estimator unchanged
    assert kid(x[perm], y[perm]) == pytest.approx(kid(x, y), abs=1e-12)
    # with unequal sizes every cross pair counts, so either set may be permuted alone
    y2 = rng.normal(size=(13, 5))
    assert kid(x[perm], y2) == pytest.approx(kid(x, y2), abs=1e-12)
    assert kid(x, y2[rng.permutation(13)]) == pytest.approx(kid(x, y2), abs=1e-12)


def test_kid_errors(rng):
    with pytest.raises(InsufficientSamplesError):
        kid(rng.normal(size=(1, 4)), rng.normal(size=(5, 4)))
    with pytest.raises(InvalidInputError):
        kid(rng.normal(size=(3, 4)), rng.normal(size=(3, 5)))
    with pytest.raises(InvalidInputError):
        kid(EmbeddingSet(np.zeros((3, 2)), "a"), EmbeddingSet(np.zeros((3, 2)), "b"))


def test_embedders_shapes_and_ids(rng):
    imgs = torch.rand(4, 32, 32, 3)
    assert DownsampleEmbedder(16)(imgs).values.shape == (4, 768)
    e = RandomProjectionEmbedder(dim=20, seed=1)
    assert e(imgs).values.shape == (4, 20) and e.id == RandomProjectionEmbedder(dim=20, seed=1).id
    c = CallableEmbedder(lambda x: np.ones((len(x), 3)), "ones")
    assert c(imgs).embedder_id == "ones"


def test_kid_separates_distributions(rng):
    emb = DownsampleEmbedder(8)
    a = emb(torch.rand(40, 16, 16, 3, generator=torch.Generator().manual_seed(0)))
    b = emb(torch.rand(40, 16, 16, 3, generator=torch.Generator().manual_seed(1)))
    c = emb(0.3 * torch.rand(40, 16, 16, 3, generator=torch.Generator().manual_seed(2)))
    assert kid(a, c) > 10 * abs(kid(a, b))


def test_collapsed_images_have_zero_diversity():
    img = torch.rand(8, 8, 3)
    assert pairwise_diversity([img] * 5) == 0.0


def test_two_images_equal_single_distance():
    a, b = torch.rand(8, 8, 3), torch.rand(8, 8, 3)
    assert pairwise_diversity([a, b]) == pixel_gradient_distance(a, b)


def test_diversity_order_independent():
    imgs = [torch.rand(6, 6, 3, generator=torch.Generator().manual_seed(i)) for i in range(5)]
    ref = pairwise_diversity(imgs)
    for perm in itertools.islice(itertools.permutations(range(5)), 10):
        assert pairwise_diversity([imgs[i] for i in perm]) == pytest.approx(ref, abs=1e-12)


def test_diversity_needs_two():
    with pytest.raises(InsufficientSamplesError):
        pairwise_diversity([torch.zeros(2, 2, 3)])


def test_diversity_of_generator():
    torch.manual_seed(0)
    gen = TriplaneGenerator(resolution=8, channels=2, channel_base=64, channel_max=16)
    pose = yaw_facing(0.0).to(torch.float32)
    d = diversity(gen, pose, 65.0, 8, n_latents=3, n_samples=8)
    assert d > 0
    assert d == diversity(gen, pose, 65.0, 8, n_latents=3, n_samples=8)
    with torch.no_grad():
        for p in gen.synthesis.parameters():
            p.zero_()
    assert diversity(gen, pose, 65.0, 8, n_latents=3, n_samples=8) == 0.0
