"""Spatiotemporal discriminator for low-resolution clips.

1x1x1 conv to the base width, one spatial-only residual block, three
spatiotemporal (5x3x3) residual blocks that halve time and space, four 1-D
temporal convs (kernel 5) over spatially pooled features, then two linear
layers to a single logit per clip.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .layers import EqualConv, EqualLinear, lrelu


@dataclass
class DiscriminatorConfig:
    frames: int = 128
    resolution: tuple[int, int] = (64, 64)  # (H, W)
    base_channels: int = 128
    max_channels: int = 512
    n_blocks: int = 4
    temporal_kernel: int = 5
    n_temporal_convs: int = 4
    hidden: int = 512
    img_channels: int = 3

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)

    def channel_trace(self) -> list[int]:
        """Channels entering each block."""
        out, c = [], self.base_channels
        for _ in range(self.n_blocks):
            out.append(c)
            c = min(c * 2, self.max_channels)
        return out

    def block_out_channels(self) -> list[int]:
        return [min(c * 2, self.max_channels) for c in self.channel_trace()]

    def time_trace(self) -> list[int]:
        """Temporal length at the input and after every block."""
        t = self.frames
        out = [t]
        for b in range(self.n_blocks):
            if b > 0:
                t = math.ceil(t / 2)
            out.append(t)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d


def desk_discriminator_config(frames: int = 32, resolution: int = 32, channel_divisor: int = 8) -> DiscriminatorConfig:
    return DiscriminatorConfig(frames=frames, resolution=(resolution, resolution),
                               base_channels=128 // channel_divisor, max_channels=512 // channel_divisor,
                               hidden=512 // channel_divisor)


class DiscBlock(nn.Module):
    """Residual block; the second conv downsamples by striding."""

    def __init__(self, in_channels, out_channels, temporal: bool):
        super().__init__()
        kt = 5 if temporal else 1
        st = 2 if temporal else 1
        pad = (kt // 2, 1, 1)
        self.conv0 = EqualConv(in_channels, in_channels, (kt, 3, 3), padding=pad, activate=True)
        self.conv1 = EqualConv(in_channels, out_channels, (kt, 3, 3), stride=(st, 2, 2), padding=pad, activate=True)
        self.skip = EqualConv(in_channels, out_channels, (1, 1, 1), stride=(st, 2, 2), bias=False)

    def forward(self, x):
        return (self.conv1(self.conv0(x)) + self.skip(x)) * (1 / math.sqrt(2))


class VideoDiscriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = c = config
        self.from_rgb = EqualConv(c.img_channels, c.base_channels, (1, 1, 1), activate=True)
        self.blocks = nn.ModuleList(
            DiscBlock(i, o, temporal=b > 0)
            for b, (i, o) in enumerate(zip(c.channel_trace(), c.block_out_channels())))
        ch = c.block_out_channels()[-1]
        k = c.temporal_kernel
        self.temporal = nn.ModuleList(
            EqualConv(ch, ch, (k,), padding=k // 2, activate=True) for _ in range(c.n_temporal_convs))
        t_final = c.time_trace()[-1]
        self.fc = EqualLinear(ch * t_final, c.hidden, activate=True)
        self.out = EqualLinear(c.hidden, 1)

    def features(self, video: torch.Tensor) -> list[torch.Tensor]:
        """Activations after the stem and every block, ``[B, C, T, H, W]``."""
        x = self.from_rgb(video.permute(0, 2, 1, 3, 4))
        acts = [x]
        for block in self.blocks:
            x = block(x)
            acts.append(x)
        return acts

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        """``video[B, T, 3, H, W]`` -> logits ``[B]``."""
        c = self.config
        if video.ndim != 5 or video.shape[1] != c.frames or tuple(video.shape[-2:]) != c.resolution \
                or video.shape[2] != c.img_channels:
            raise ValueError(
                f"expected [B, {c.frames}, {c.img_channels}, {c.resolution[0]}, {c.resolution[1]}], "
                f"got {tuple(video.shape)}")
        x = self.features(video)[-1]
        x = x.mean(dim=(3, 4))  # [B, C, T]
        for conv in self.temporal:
            x = conv(x)
        return self.out(self.fc(x.flatten(1))).squeeze(1)
