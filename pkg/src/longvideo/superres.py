"""Conditional per-frame super-resolution.

The generator turns a stack of 9 low-res frames (target frame in the middle,
4 neighbours each side) plus a per-video latent into one frame at 4x the
resolution.  The 27-channel stack is resized to every layer's resolution and
concatenated to the features there; resizing goes through Kaiser lowpass
filters except at the stack's native resolution, where it is passed through
untouched.

The discriminator sees 4 consecutive high-res frames concatenated with the
matching low-res frames (bilinearly upsampled), 24 channels in total, and has
no minibatch-stddev layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .layers import EqualConv, EqualLinear, ModulatedConv2d, bilinear_resize, lrelu, resize

STACK_FRAMES = 9
STACK_RADIUS = STACK_FRAMES // 2
SEGMENT_FRAMES = 4


@dataclass
class SRConfig:
    low_size: tuple[int, int] = (64, 64)  # (h, w)
    scale: int = 4
    z_dim: int = 512
    w_dim: int = 512
    mapping_layers: int = 2
    # one entry per level, starting one octave below the native resolution
    channels: list[int] = field(default_factory=lambda: [512, 512, 256, 128])
    const_channels: int = 512
    dropout_p: float = 0.9
    prefilter: bool = True
    residual: bool = True
    disc_channels: list[int] = field(default_factory=lambda: [128, 256, 512, 512, 512, 512])
    disc_hidden: int = 512
    img_channels: int = 3

    def __post_init__(self):
        self.low_size = tuple(int(v) for v in self.low_size)
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1], got {self.dropout_p}")
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ValueError("scale must be a power of two")
        if len(self.channels) != self.n_levels:
            raise ValueError(f"need {self.n_levels} channel entries, got {len(self.channels)}")
        h, w = self.low_size
        if h % 2 or w % 2:
            raise ValueError("low-res size must be even")

    @property
    def n_levels(self) -> int:
        return int(math.log2(self.scale)) + 2

    @property
    def high_size(self) -> tuple[int, int]:
        return (self.low_size[0] * self.scale, self.low_size[1] * self.scale)

    def level_sizes(self) -> list[tuple[int, int]]:
        h, w = self.low_size
        return [(h // 2, w // 2)] + [(h * 2 ** i, w * 2 ** i) for i in range(self.n_levels - 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["low_size"] = list(self.low_size)
        return d


def desk_sr_config(low: int = 8, channel_divisor: int = 8, **kw) -> SRConfig:
    d = channel_divisor
    return SRConfig(low_size=(low, low), z_dim=512 // d, w_dim=512 // d,
                    channels=[512 // d, 512 // d, 256 // d, 128 // d], const_channels=512 // d,
                    disc_channels=[128 // d, 256 // d, 512 // d, 512 // d], disc_hidden=512 // d, **kw)


def build_stacks(video: torch.Tensor, centers=None) -> torch.Tensor:
    """9-frame conditioning stacks ``[N, 9, C, h, w]`` around each centre frame
    of ``video[T, C, h, w]``, replicating the first / last frame at the edges."""
    T = video.shape[0]
    if centers is None:
        centers = range(T)
    centers = torch.as_tensor(list(centers))
    offsets = torch.arange(-STACK_RADIUS, STACK_RADIUS + 1)
    idx = (centers[:, None] + offsets[None]).clamp(0, T - 1)
    return video[idx]


class SRGenerator(nn.Module):
    def __init__(self, config: SRConfig):
        super().__init__()
        self.config = c = config
        cond_ch = STACK_FRAMES * c.img_channels
        dims = [c.z_dim] + [c.w_dim] * c.mapping_layers
        self.mapping = nn.ModuleList(
            EqualLinear(a, b, lr_mul=0.01, activate=True) for a, b in zip(dims[:-1], dims[1:]))
        h0, w0 = c.level_sizes()[0]
        self.const = nn.Parameter(torch.randn(c.const_channels, h0, w0))
        convs = []
        in_ch = c.const_channels
        for ch in c.channels:
            convs.append(ModulatedConv2d(in_ch + cond_ch, ch, 3, c.w_dim))
            convs.append(ModulatedConv2d(ch + cond_ch, ch, 3, c.w_dim))
            in_ch = ch
        self.convs = nn.ModuleList(convs)
        self.to_rgb = ModulatedConv2d(in_ch, c.img_channels, 1, c.w_dim, demodulate=False)

    def map(self, z: torch.Tensor) -> torch.Tensor:
        x = z * torch.rsqrt(z.square().mean(dim=-1, keepdim=True) + 1e-8)
        for layer in self.mapping:
            x = layer(x)
        return x

    def condition(self, stack: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        """Resize ``stack[N, 9, 3, h, w]`` to ``size`` as ``[N, 27, H, W]``."""
        x = stack.flatten(1, 2)
        return resize(x, size, prefilter=self.config.prefilter)

    def forward(self, stack: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """``stack[N, 9, 3, h, w]`` and per-video latent ``z[N, z_dim]`` -> ``[N, 3, 4h, 4w]``."""
        c = self.config
        if stack.ndim != 5 or stack.shape[1] != STACK_FRAMES or tuple(stack.shape[-2:]) != c.low_size:
            raise ValueError(f"expected stack [N, {STACK_FRAMES}, 3, {c.low_size[0]}, {c.low_size[1]}], "
                             f"got {tuple(stack.shape)}")
        w = self.map(z)
        N = stack.shape[0]
        x = self.const[None].expand(N, -1, -1, -1)
        for level, size in enumerate(c.level_sizes()):
            if level > 0:
                x = bilinear_resize(x, size)
            cond = self.condition(stack, size)
            for conv in self.convs[2 * level:2 * level + 2]:
                x = lrelu(conv(torch.cat([x, cond], dim=1), w))
        y = self.to_rgb(x, w)
        if c.residual:
            y = y + bilinear_resize(stack[:, STACK_RADIUS], y.shape[-2:])
        return y


def sr_generate(model: SRGenerator, stack: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """One high-res frame ``[3, H, W]`` from a single ``[9, 3, h, w]`` stack."""
    with torch.no_grad():
        return model(stack[None], z.reshape(1, -1))[0]


def sr_video(model: SRGenerator, video: torch.Tensor, z: torch.Tensor, chunk: int = 32) -> torch.Tensor:
    """Super-resolve every frame of ``video[T, 3, h, w]`` with a sliding window
    and one latent for the whole video."""
    if video.ndim != 4 or video.shape[0] < 1:
        raise ValueError(f"expected [T, 3, h, w] with T >= 1, got {tuple(video.shape)}")
    z = z.reshape(1, -1)
    out = []
    with torch.no_grad():
        for start in range(0, video.shape[0], chunk):
            centers = range(start, min(video.shape[0], start + chunk))
            stacks = build_stacks(video, centers)
            out.append(model(stacks, z.expand(stacks.shape[0], -1)))
    return torch.cat(out)


def condition_dropout(low4: torch.Tensor, p: float, generator: torch.Generator | None = None):
    """Zero the whole low-res segment of each sample with probability ``p``.

    ``low4[B, 4, 3, h, w]``; returns ``(dropped, mask)`` where ``mask[b]`` is
    True for zeroed samples.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    squeeze = low4.ndim == 4
    if squeeze:
        low4 = low4[None]
    mask = torch.rand(low4.shape[0], generator=generator) < p
    keep = (~mask).to(low4.dtype).view(-1, *([1] * (low4.ndim - 1)))
    out = low4 * keep
    return (out[0] if squeeze else out), mask


class DiscResBlock(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv0 = EqualConv(in_channels, in_channels, (3, 3), padding=1, activate=True)
        self.conv1 = EqualConv(in_channels, out_channels, (3, 3), stride=2, padding=1, activate=True)
        self.skip = EqualConv(in_channels, out_channels, (1, 1), stride=2, bias=False)

    def forward(self, x):
        return (self.conv1(self.conv0(x)) + self.skip(x)) * (1 / math.sqrt(2))


class SRDiscriminator(nn.Module):
    """Scores 4-frame low/high pairs; one logit per sample."""

    def __init__(self, config: SRConfig):
        super().__init__()
        self.config = c = config
        in_ch = 2 * SEGMENT_FRAMES * c.img_channels
        chans = list(c.disc_channels)
        H, W = c.high_size
        n_blocks = 0
        while min(H, W) > 4 and n_blocks < len(chans) - 1:
            H, W = math.ceil(H / 2), math.ceil(W / 2)
            n_blocks += 1
        self.from_rgb = EqualConv(in_ch, chans[0], (1, 1), activate=True)
        self.blocks = nn.ModuleList(DiscResBlock(chans[i], chans[i + 1]) for i in range(n_blocks))
        top = chans[n_blocks]
        self.conv = EqualConv(top, top, (3, 3), padding=1, activate=True)
        self.fc = EqualLinear(top * H * W, c.disc_hidden, activate=True)
        self.out = EqualLinear(c.disc_hidden, 1)

    def forward(self, low4: torch.Tensor, high4: torch.Tensor) -> torch.Tensor:
        """``low4[B, 4, 3, h, w]``, ``high4[B, 4, 3, H, W]`` -> ``[B]``."""
        c = self.config
        if low4.shape[1] != SEGMENT_FRAMES or high4.shape[1] != SEGMENT_FRAMES:
            raise ValueError("both segments must hold 4 frames")
        if tuple(high4.shape[-2:]) != c.high_size or tuple(low4.shape[-2:]) != c.low_size:
            raise ValueError(f"expected low {c.low_size} and high {c.high_size}, got "
                             f"{tuple(low4.shape[-2:])} and {tuple(high4.shape[-2:])}")
        up = bilinear_resize(low4, c.high_size)
        x = torch.cat([up.flatten(1, 2), high4.flatten(1, 2)], dim=1)
        x = self.from_rgb(x)
        for block in self.blocks:
            x = block(x)
        x = self.conv(x)
        return self.out(self.fc(x.flatten(1))).squeeze(1)


def sr_discriminate(model: SRDiscriminator, low4: torch.Tensor, high4: torch.Tensor) -> torch.Tensor:
    squeeze = low4.ndim == 4
    if squeeze:
        low4, high4 = low4[None], high4[None]
    logits = model(low4, high4)
    return logits[0] if squeeze else logits
