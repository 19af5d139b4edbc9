import pytest
import torch

from triscene.exceptions import InvalidInputError
from triscene.field import query_field
from triscene.generator import TriplaneGenerator


@pytest.fixture(scope="module")
def small_gen():
    torch.manual_seed(0)
    return TriplaneGenerator(resolution=16, channels=4, channel_base=512, channel_max=64).eval()


def test_mapping_is_deterministic_and_128_wide(small_gen):
    z = torch.randn(3, 128)
    w1, w2 = small_gen.map_latent(z), small_gen.map_latent(z)
    assert torch.equal(w1, w2)
    assert w1.shape == (3, 128)


def test_mapping_finite_over_many_draws(small_gen):
    with torch.no_grad():
        w = small_gen.map_latent(torch.randn(10_000, 128, generator=torch.Generator().manual_seed(1)))
    assert torch.isfinite(w).all()


@pytest.mark.parametrize("bad", [torch.zeros(3, 64), torch.zeros(2, 2, 128),
                                 torch.full((1, 128), float("nan"))])
def test_mapping_rejects_bad_latents(small_gen, bad):
    with pytest.raises(InvalidInputError):
        small_gen.map_latent(bad)


def test_default_triplane_shape():
    torch.manual_seed(0)
    gen = TriplaneGenerator()
    with torch.no_grad():
        grid = gen.sample_scene(torch.randn(1, 128))
    assert grid.planes.shape == (1, 3, 32, 256, 256)
    assert grid.xy.shape == grid.xz.shape == grid.yz.shape == (1, 32, 256, 256)


def test_plane_split_is_a_partition(small_gen):
    with torch.no_grad():
        w = small_gen.map_latent(torch.randn(2, 128))
        raw = small_gen.synthesize(w)
        grid = small_gen.synthesize_triplanes(w)
    assert torch.equal(torch.cat([grid.xy, grid.xz, grid.yz], dim=1), raw)


def test_distinct_latents_give_distinct_triplanes(small_gen):
    g = torch.Generator().manual_seed(2)
    with torch.no_grad():
        a = small_gen.sample_scene(torch.randn(100, 128, generator=g)).planes
        b = small_gen.sample_scene(torch.randn(100, 128, generator=g)).planes
    assert ((a - b).flatten(1).abs().amax(1) > 0).all()


def test_same_latent_same_grid_and_field_query(small_gen):
    z = torch.randn(2, 128)
    with torch.no_grad():
        g1, g2 = small_gen.sample_scene(z), small_gen.sample_scene(z)
        out = query_field(g1, small_gen.decoder, torch.rand(2, 10, 3) * 2 - 1)
    assert torch.equal(g1.planes, g2.planes)
    assert out.rgb.shape == (2, 10, 3) and out.sigma.shape == (2, 10)


def test_interpolation_path_moves_away_monotonically(small_gen):
    g = torch.Generator().manual_seed(3)
    with torch.no_grad():
        w0, w1 = small_gen.map_latent(torch.randn(2, 128, generator=g))
        start = small_gen.synthesize_triplanes(w0[None]).planes
        dists = []
        for t in torch.linspace(0, 1, 11):
            grid = small_gen.synthesize_triplanes(((1 - t) * w0 + t * w1)[None])
            dists.append((grid.planes - start).norm().item())
    assert dists[0] == 0
    assert all(b > a for a, b in zip(dists, dists[1:]))


def test_gradients_reach_every_generator_parameter(small_gen):
    gen = TriplaneGenerator(resolution=8, channels=2, channel_base=64, channel_max=16)
    grid = gen.sample_scene(torch.randn(2, 128))
    out = query_field(grid, gen.decoder, torch.rand(2, 16, 3) * 2 - 1)
    (out.rgb.sum() + out.sigma.sum()).backward()
    missing = [n for n, p in gen.named_parameters() if p.grad is None]
    assert not missing
