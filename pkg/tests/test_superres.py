import pytest
import torch

from longvideo.superres import (SRConfig, SRDiscriminator, SRGenerator, build_stacks, condition_dropout,
                                desk_sr_config, sr_discriminate, sr_generate, sr_video)


@pytest.fixture(scope="module")
def sr_models():
    torch.manual_seed(0)
    c = desk_sr_config(low=8)
    return SRGenerator(c).eval(), SRDiscriminator(c).eval()


def test_level_sizes_start_below_native():
    c = SRConfig(low_size=(36, 64))
    assert c.level_sizes() == [(18, 32), (36, 64), (72, 128), (144, 256)]
    assert c.high_size == (144, 256)


def test_config_validation():
    with pytest.raises(ValueError):
        SRConfig(dropout_p=1.5)
    with pytest.raises(ValueError):
        SRConfig(scale=3)
    with pytest.raises(ValueError):
        SRConfig(channels=[8, 8])


def test_build_stacks_replicates_edges():
    v = torch.arange(6, dtype=torch.float32).view(6, 1, 1, 1).expand(6, 3, 2, 2)
    s = build_stacks(v, [0, 3, 5])
    assert s.shape == (3, 9, 3, 2, 2)
    assert s[0, :, 0, 0, 0].tolist() == [0, 0, 0, 0, 0, 1, 2, 3, 4]
    assert s[1, :, 0, 0, 0].tolist() == [0, 0, 1, 2, 3, 4, 5, 5, 5]
    assert s[2, :, 0, 0, 0].tolist() == [1, 2, 3, 4, 5, 5, 5, 5, 5]


def test_output_is_exactly_4x(sr_models):
    G, _ = sr_models
    out = G(build_stacks(torch.randn(5, 3, 8, 8)), torch.randn(5, G.config.z_dim))
    assert out.shape == (5, 3, 32, 32)


def test_non_square_4x():
    torch.manual_seed(0)
    c = SRConfig(low_size=(6, 10), z_dim=8, w_dim=8, channels=[8, 8, 8, 8], const_channels=8,
                 disc_channels=[8, 8, 8], disc_hidden=8)
    G, D = SRGenerator(c), SRDiscriminator(c)
    out = G(build_stacks(torch.randn(3, 3, 6, 10)), torch.randn(3, 8))
    assert out.shape == (3, 3, 24, 40)
    assert D(torch.randn(2, 4, 3, 6, 10), torch.randn(2, 4, 3, 24, 40)).shape == (2,)


def test_rejects_wrong_stack(sr_models):
    G, _ = sr_models
    with pytest.raises(ValueError):
        G(torch.randn(2, 7, 3, 8, 8), torch.randn(2, G.config.z_dim))
    with pytest.raises(ValueError):
        G(torch.randn(2, 9, 3, 16, 16), torch.randn(2, G.config.z_dim))


def test_sliding_window_matches_single_frame(sr_models):
    G, _ = sr_models
    v = torch.randn(12, 3, 8, 8)
    z = torch.randn(G.config.z_dim)
    full = sr_video(G, v, z, chunk=5)
    assert full.shape == (12, 3, 32, 32)
    for t in (0, 6, 11):
        single = sr_generate(G, build_stacks(v, [t])[0], z)
        torch.testing.assert_close(full[t], single, rtol=1e-5, atol=1e-5)


def test_residual_path_passes_centre_frame():
    torch.manual_seed(0)
    c = desk_sr_config(low=8)
    G = SRGenerator(c).eval()
    with torch.no_grad():
        G.to_rgb.weight.zero_()
        G.to_rgb.bias.zero_()
    v = torch.randn(9, 3, 8, 8)
    out = sr_generate(G, v, torch.randn(c.z_dim))
    ref = torch.nn.functional.interpolate(v[4:5], size=(32, 32), mode="bilinear", align_corners=False)[0]
    torch.testing.assert_close(out, ref)


def test_conditioning_reaches_output(sr_models):
    G, _ = sr_models
    v = torch.randn(9, 3, 8, 8)
    z = torch.randn(G.config.z_dim)
    v2 = v.clone()
    v2[0] += 1.0  # an outer frame of the stack, not the residual centre
    assert (sr_generate(G, v, z) - sr_generate(G, v2, z)).abs().max() > 1e-4


def test_discriminator_shapes(sr_models):
    _, D = sr_models
    assert D(torch.randn(3, 4, 3, 8, 8), torch.randn(3, 4, 3, 32, 32)).shape == (3,)
    assert sr_discriminate(D, torch.randn(4, 3, 8, 8), torch.randn(4, 3, 32, 32)).shape == ()
    with pytest.raises(ValueError):
        D(torch.randn(3, 3, 3, 8, 8), torch.randn(3, 3, 3, 32, 32))


def test_condition_dropout_zeroes_whole_samples():
    gen = torch.Generator().manual_seed(0)
    x = torch.randn(50, 4, 3, 2, 2) + 5
    out, mask = condition_dropout(x, 0.5, gen)
    assert torch.all(out[mask] == 0)
    torch.testing.assert_close(out[~mask], x[~mask])
    assert condition_dropout(x, 0.0, gen)[1].sum() == 0
    assert condition_dropout(x, 1.0, gen)[1].all()
    with pytest.raises(ValueError):
        condition_dropout(x, -0.1)
