import pytest
import torch

from longvideo.discriminator import DiscriminatorConfig, VideoDiscriminator, desk_discriminator_config


def test_full_scale_traces():
    c = DiscriminatorConfig()
    assert c.channel_trace() == [128, 256, 512, 512]
    assert c.time_trace() == [128, 128, 64, 32, 16]


def test_feature_shapes_follow_traces():
    c = desk_discriminator_config(frames=32, resolution=32)
    D = VideoDiscriminator(c)
    acts = D.features(torch.randn(1, 32, 3, 32, 32))
    assert [a.shape[1] for a in acts[:-1]] == c.channel_trace()
    assert [a.shape[2] for a in acts] == c.time_trace()
    assert [a.shape[-1] for a in acts] == [32, 16, 8, 4, 2]


def test_one_logit_per_clip():
    D = VideoDiscriminator(desk_discriminator_config(frames=32, resolution=32))
    assert D(torch.randn(3, 32, 3, 32, 32)).shape == (3,)


@pytest.mark.parametrize("shape", [(2, 16, 3, 32, 32), (2, 32, 3, 16, 16), (2, 32, 4, 32, 32), (32, 3, 32, 32)])
def test_rejects_wrong_shape(shape):
    D = VideoDiscriminator(desk_discriminator_config(frames=32, resolution=32))
    with pytest.raises(ValueError):
        D(torch.randn(*shape))


def test_non_square_input():
    c = DiscriminatorConfig(frames=32, resolution=(36, 64), base_channels=8, max_channels=16, hidden=16)
    D = VideoDiscriminator(c)
    assert D(torch.randn(2, 32, 3, 36, 64)).shape == (2,)


def test_sees_temporal_order():
    # a shuffled clip gives a different logit: the head is not permutation invariant in time
    torch.manual_seed(0)
    D = VideoDiscriminator(desk_discriminator_config(frames=32, resolution=32)).eval()
    x = torch.randn(1, 32, 3, 32, 32)
    perm = torch.randperm(32)
    assert (D(x) - D(x[:, perm])).abs().item() > 1e-6
