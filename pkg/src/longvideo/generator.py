"""Fully-convolutional-in-time low-resolution video generator.

Pipeline: temporal noise -> lowpass enrichment -> per-frame mapping network
-> latents ``w_t`` -> synthesis.  Synthesis starts from a learned constant at
``T / 32`` time steps concatenated with a 32x average-pooled copy of the
latents, then runs ST blocks (temporal + spatial upsampling, 3x3x3 convs) and
S blocks (spatial only).  Every block is modulated per frame by the latents
pooled to its own temporal resolution.

Temporal boundaries are handled by computing a margin of extra frames on each
side and cropping them away block by block, so output frames never see a
padded value and the whole generator commutes with shifts of the noise that
are multiples of the temporal divisor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .filterbank import NOISE_CHANNELS, FilterBank, NoiseStream, context_padding, enrich
from .layers import LRELU_SLOPE, EqualConv, EqualLinear, ModulatedConv3d

DEFAULT_CHANNELS = [512, 512, 512, 512, 256, 256, 128, 128, 64, 64]
DEFAULT_SCALES = [(2, 1), (2, 1), (2, 1), (2, 2), (2, 2), (1, 2), (1, 2), (1, 1), (1, 1), (1, 1)]


@dataclass
class SynthesisConfig:
    channels: list[int] = field(default_factory=lambda: list(DEFAULT_CHANNELS))
    scales: list[tuple[int, int]] = field(default_factory=lambda: list(DEFAULT_SCALES))
    base_resolution: int = 4
    temporal_divisor: int = 32
    output_size: tuple[int, int] = (64, 64)  # (H, W)
    w_dim: int = 512
    const_channels: int = 512
    mapping_layers: int = 2
    mapping_lr_mul: float = 0.01
    st_kernel: int = 3
    img_channels: int = 3

    def __post_init__(self):
        self.scales = [tuple(int(v) for v in s) for s in self.scales]
        self.output_size = tuple(int(v) for v in self.output_size)
        self.channels = [int(c) for c in self.channels]
        if len(self.channels) != len(self.scales):
            raise ValueError("channels and scales must have one entry per block")
        if math.prod(t for t, _ in self.scales) != self.temporal_divisor:
            raise ValueError(f"temporal scales must multiply to {self.temporal_divisor}")
        if max(self.output_size) != self.render_resolution:
            raise ValueError(
                f"output size {self.output_size} does not match the rendered resolution {self.render_resolution}")
        if self.st_kernel < 1 or self.st_kernel % 2 == 0:
            raise ValueError("st_kernel must be a positive odd integer")

    @property
    def render_resolution(self) -> int:
        return self.base_resolution * math.prod(s for _, s in self.scales)

    def temporal_kernel(self, block: int) -> int:
        return self.st_kernel if self.scales[block][0] > 1 else 1

    def strides(self) -> list[int]:
        """Temporal stride (in output frames) of each block's output."""
        out, f = [], self.temporal_divisor
        for t, _ in self.scales:
            f //= t
            out.append(f)
        return out

    def margins(self) -> tuple[int, list[int]]:
        """Extra time steps kept on each side of every stage.

        Returns ``(input_margin, block_margins)``; the input margin is in
        coarse steps.  A block contaminates ``ceil((t-1)/2)`` frames per side
        by upsampling and ``k // 2`` per temporal conv, and the margin entering
        it must cover that plus the margin it hands on.
        """
        m = 0
        block_margins = [0] * len(self.scales)
        for b in reversed(range(len(self.scales))):
            block_margins[b] = m
            t, _ = self.scales[b]
            dirty = math.ceil((t - 1) / 2) + 2 * (self.temporal_kernel(b) // 2)
            m = math.ceil((m + dirty) / t)
        return m, block_margins

    @property
    def latent_context(self) -> int:
        """Frames of latent context required on each side of the output window."""
        return self.margins()[0] * self.temporal_divisor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = [list(s) for s in self.scales]
        d["output_size"] = list(self.output_size)
        return d


def desk_synthesis_config(resolution: int = 32, channel_divisor: int = 8, w_dim: int = 64, **kw) -> SynthesisConfig:
    """Scaled-down schedule: the same ST-then-S layout with fewer channels and
    only as many S blocks as the resolution needs."""
    n_spatial = int(math.log2(resolution // 4))
    scales = [(2, 1), (2, 1), (2, 1)] + [(2, 2), (2, 2)] + [(1, 2)] * max(0, n_spatial - 2)
    channels = [max(8, c // channel_divisor) for c in DEFAULT_CHANNELS[:len(scales)]]
    kw.setdefault("output_size", (resolution, resolution))
    return SynthesisConfig(channels=channels, scales=scales, w_dim=w_dim,
                           const_channels=max(8, 512 // channel_divisor), **kw)


@dataclass
class LatentSequence:
    """Per-frame latents ``w[B, T, D]`` plus copies average-pooled to every
    synthesis stage.  ``per_block[-1]`` is the coarsest (constant stage) copy."""

    w: torch.Tensor
    per_block: dict[int, torch.Tensor]


class MappingNetwork(nn.Module):
    """Frame-wise MLP from the enriched noise vector to ``w_t``."""

    def __init__(self, bank: FilterBank, w_dim: int, layers: int = 2, lr_mul: float = 0.01,
                 noise_channels: int = NOISE_CHANNELS):
        super().__init__()
        # scale each filter output to unit variance for white-noise input
        gains = [1.0 / float(np.sqrt(np.sum(f ** 2))) for f in bank.filters]
        self.register_buffer("filter_gain", torch.tensor(gains, dtype=torch.float32)[:, None])
        in_dim = bank.count * noise_channels
        dims = [in_dim] + [w_dim] * (layers + 1)
        self.net = nn.ModuleList(
            EqualLinear(a, b, lr_mul=lr_mul, activate=True) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, z_enriched: torch.Tensor) -> torch.Tensor:
        # z_enriched: [..., N_f, C_z]
        x = (z_enriched * self.filter_gain).flatten(-2)
        x = x * torch.rsqrt(x.square().mean(dim=-1, keepdim=True) + 1e-8)
        for layer in self.net:
            x = layer(x)
        return x


def upsample_time2(x: torch.Tensor) -> torch.Tensor:
    """Linear 2x upsampling along dim 2 with edge clamping (half-pixel centres)."""
    prev = torch.cat([x[:, :, :1], x[:, :, :-1]], dim=2)
    nxt = torch.cat([x[:, :, 1:], x[:, :, -1:]], dim=2)
    even = torch.lerp(x, prev, 0.25)
    odd = torch.lerp(x, nxt, 0.25)
    return torch.stack([even, odd], dim=3).flatten(2, 3)


class SynthesisBlock(nn.Module):
    """Upsample, then two modulated convs on per-frame normalized input, plus a
    residual path.  Temporal convs are valid, so ``2 * (kt - 1)`` frames are
    consumed; the residual is centre-cropped to match."""

    def __init__(self, in_channels, out_channels, t_scale, s_scale, kt, w_dim):
        super().__init__()
        self.t_scale, self.s_scale, self.kt = t_scale, s_scale, kt
        self.conv0 = ModulatedConv3d(in_channels, out_channels, (kt, 3, 3), w_dim)
        self.conv1 = ModulatedConv3d(out_channels, out_channels, (kt, 3, 3), w_dim)
        self.skip = EqualConv(in_channels, out_channels, (1, 1, 1), bias=False) if in_channels != out_channels else None
        if self.skip is not None:
            self.skip.scale /= math.sqrt(2)

    def upsample(self, x):
        t, s = self.t_scale, self.s_scale
        if t == 2:
            x = upsample_time2(x)
        elif t != 1:
            x = F.interpolate(x, scale_factor=(t, 1, 1), mode="trilinear", align_corners=False)
        if s != 1:
            B, C, T, H, W = x.shape
            x = F.interpolate(x.transpose(1, 2).reshape(B * T, C, H, W), scale_factor=s,
                              mode="bilinear", align_corners=False)
            x = x.reshape(B, T, C, H * s, W * s).transpose(1, 2)
        return x

    def forward(self, x, w):
        x = self.upsample(x)
        r = self.kt // 2
        # lrelu gains are dropped: conv1 renormalizes its input, and the
        # output gain cancels against the 1/sqrt(2) residual scaling
        y = F.leaky_relu(self.conv0(x, w, normalize=True), LRELU_SLOPE)
        y = F.leaky_relu(self.conv1(y, w[:, r:w.shape[1] - r], normalize=True), LRELU_SLOPE)
        if r:
            x = x[:, :, 2 * r:x.shape[2] - 2 * r]
        if self.skip is not None:
            return y + self.skip(x)
        return torch.add(y, x, alpha=1 / math.sqrt(2))


class SynthesisNetwork(nn.Module):
    def __init__(self, config: SynthesisConfig):
        super().__init__()
        self.config = config
        c = config
        r = c.base_resolution
        self.const = nn.Parameter(torch.randn(c.const_channels, r, r))
        self.stem = EqualConv(c.const_channels + c.w_dim, c.channels[0], (1, 3, 3), padding=(0, 1, 1), activate=True)
        blocks = []
        in_ch = c.channels[0]
        for b, ((t, s), out_ch) in enumerate(zip(c.scales, c.channels)):
            blocks.append(SynthesisBlock(in_ch, out_ch, t, s, c.temporal_kernel(b), c.w_dim))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = ModulatedConv3d(in_ch, c.img_channels, (1, 1, 1), c.w_dim, demodulate=False)

    def forward(self, latents: LatentSequence, output_size: tuple[int, int] | None = None) -> torch.Tensor:
        """``latents`` must carry ``latent_context`` frames on each side of the
        output window.  Returns ``[B, T, C, H, W]``."""
        c = self.config
        m_in, block_margins = c.margins()
        coarse = latents.per_block[-1]  # [B, T_c, D]
        B, Tc, _ = coarse.shape
        r = c.base_resolution
        const = self.const[None, :, None].expand(B, -1, Tc, -1, -1)
        lat = coarse.permute(0, 2, 1)[..., None, None].expand(-1, -1, -1, r, r)
        x = self.stem(torch.cat([const, lat], dim=1))
        margin = m_in
        context = c.latent_context
        for b, block in enumerate(self.blocks):
            t, _ = c.scales[b]
            stride = c.strides()[b]
            w_b = latents.per_block[b]
            start = context // stride - t * margin
            length = x.shape[2] * t
            x = block(x, w_b[:, start:start + length])
            crop = t * margin - block_margins[b] - 2 * (c.temporal_kernel(b) // 2)
            if crop:
                x = x[:, :, crop:x.shape[2] - crop]
            margin = block_margins[b]
        start = context // c.strides()[-1]
        x = self.to_rgb(x, latents.per_block[len(self.blocks) - 1][:, start:start + x.shape[2]])
        H, W = output_size or c.output_size
        R = x.shape[-1]
        top, left = (R - H) // 2, (R - W) // 2
        x = x[..., top:top + H, left:left + W]
        return x.permute(0, 2, 1, 3, 4)


def pool_latents(w: torch.Tensor, config: SynthesisConfig) -> LatentSequence:
    """Average-pool ``w[B, T, D]`` to the coarse stage and every block."""
    per_block = {-1: F.avg_pool1d(w.transpose(1, 2), config.temporal_divisor).transpose(1, 2)}
    for b, stride in enumerate(config.strides()):
        per_block[b] = w if stride == 1 else F.avg_pool1d(w.transpose(1, 2), stride).transpose(1, 2)
    return LatentSequence(w, per_block)


class LowResGenerator(nn.Module):
    """Noise stream in, ``[B, T, 3, H, W]`` video out."""

    def __init__(self, bank: FilterBank, config: SynthesisConfig):
        super().__init__()
        self.bank = bank
        self.config = config
        self.mapping = MappingNetwork(bank, config.w_dim, config.mapping_layers, config.mapping_lr_mul)
        self.synthesis = SynthesisNetwork(config)

    @property
    def noise_padding(self) -> int:
        """Noise frames needed on each side of the output window."""
        return context_padding(self.bank) + self.config.latent_context

    def map_latents(self, z_enriched: torch.Tensor) -> LatentSequence:
        """Enriched noise ``[B, T, N_f, C_z]`` to pooled latents; T must be a
        multiple of the temporal divisor."""
        if z_enriched.ndim == 3:
            z_enriched = z_enriched[None]
        T = z_enriched.shape[1]
        if T % self.config.temporal_divisor:
            raise ValueError(f"latent length {T} is not divisible by {self.config.temporal_divisor}")
        return pool_latents(self.mapping(z_enriched), self.config)

    def synthesize(self, latents: LatentSequence, context: int = 0,
                   output_size: tuple[int, int] | None = None) -> torch.Tensor:
        """Render ``T - 2 * context`` frames from latents of length T.

        Missing context (``context < latent_context``) is made up by
        replicating the edge latents.
        """
        c = self.config
        T = latents.w.shape[1]
        if T % c.temporal_divisor:
            raise ValueError(f"latent length {T} is not divisible by {c.temporal_divisor}")
        need = c.latent_context
        w = latents.w
        if context > need:
            w = w[:, context - need:T - (context - need)]
        elif context < need:
            extra = need - context
            w = F.pad(w.transpose(1, 2), (extra, extra), mode="replicate").transpose(1, 2)
        return self.synthesis(pool_latents(w, c), output_size)

    def forward(self, z: torch.Tensor, output_size: tuple[int, int] | None = None) -> torch.Tensor:
        """``z[B, T + 2 * noise_padding, C_z]`` -> video ``[B, T, 3, H, W]``."""
        if z.ndim == 2:
            z = z[None]
        P = context_padding(self.bank)
        L = self.config.latent_context
        T = z.shape[1] - 2 * (P + L)
        if T <= 0 or T % self.config.temporal_divisor:
            raise ValueError(
                f"noise of length {z.shape[1]} gives an output length {T} that is not a positive multiple of "
                f"{self.config.temporal_divisor} (padding {P + L} per side)")
        e = enrich(z, self.bank).values[:, P:z.shape[1] - P]
        latents = pool_latents(self.mapping(e), self.config)
        return self.synthesis(latents, output_size)

    def sample_noise(self, batch: int, frames: int, generator: torch.Generator | None = None) -> torch.Tensor:
        n = frames + 2 * self.noise_padding
        return torch.randn(batch, n, NOISE_CHANNELS, generator=generator)


def generate(z: NoiseStream | torch.Tensor, model: LowResGenerator,
             output_size: tuple[int, int] | None = None) -> torch.Tensor:
    """Run the full low-res path; ``z`` carries ``model.noise_padding`` extra
    frames on each side of the target window."""
    values = z.values if isinstance(z, NoiseStream) else z
    with torch.no_grad():
        out = model(values.to(next(model.parameters()).dtype), output_size)
    return out[0] if values.ndim == 2 else out


def generate_window(model: LowResGenerator, seed: int, offset: int, frames: int,
                    output_size: tuple[int, int] | None = None) -> torch.Tensor:
    """Frames ``[offset, offset + frames)`` of the infinite video for ``seed``."""
    P = model.noise_padding
    z = NoiseStream.sample(seed, offset - P, frames + 2 * P)
    return generate(z, model, output_size)


# --- receptive field --------------------------------------------------------


def effective_taps(bank: FilterBank, rel_tol: float = 1e-9) -> int:
    """Widest kernel support after dropping edge taps below ``rel_tol`` of the peak.

    Footprints that are exact even integers put the sinc's first zero on the
    outermost taps, so they contribute nothing.
    """
    best = 1
    for f in bank.filters:
        c = f.shape[0] // 2
        big = np.nonzero(np.abs(f) > rel_tol * np.abs(f).max())[0]
        best = max(best, 2 * int(np.max(np.abs(big - c))) + 1)
    return best


def synthesis_span(config: SynthesisConfig) -> list[tuple[int, int]]:
    """For each output frame phase ``0 <= p < temporal_divisor``, the range of
    latent frames (relative to the output frame) that can influence it.

    Derived from the layer structure alone: pooling buckets, linear
    interpolation stencils, temporal conv widths and per-frame modulation.
    """
    c = config
    strides = c.strides()

    def pool(f, j):
        return (j * f, j * f + f - 1)

    def union(a, b):
        return (min(a[0], b[0]), max(a[1], b[1]))

    @lru_cache(maxsize=None)
    def stage(b, j):
        # dependency interval of frame j at the output of stage b (-1 = stem)
        if b == -1:
            return pool(c.temporal_divisor, j)
        t, _ = c.scales[b]
        f = strides[b]
        r = c.temporal_kernel(b) // 2

        def up(i):
            if t == 1:
                return stage(b - 1, i)
            p = (i + 0.5) / t - 0.5
            lo = math.floor(p)
            iv = stage(b - 1, lo)
            if p != lo:
                iv = union(iv, stage(b - 1, lo + 1))
            return iv

        def conv(prev, i):
            iv = pool(f, i)  # demodulation uses the style at the output frame
            for d in range(-r, r + 1):
                iv = union(iv, union(prev(i + d), pool(f, i + d)))
            return iv

        def conv0(i):
            return conv(up, i)

        return union(conv(conv0, j), up(j))

    last = len(c.scales) - 1
    spans = []
    for p in range(c.temporal_divisor):
        lo, hi = union(stage(last, p), pool(strides[last], p))
        spans.append((lo - p, hi - p))
    return spans


def analytic_receptive_field(config: SynthesisConfig, bank: FilterBank) -> int:
    """Widest set of noise frames that can affect a single output frame."""
    width = max(hi - lo + 1 for lo, hi in synthesis_span(config))
    return width + effective_taps(bank) - 1


def measure_receptive_field(model: LowResGenerator, frames: int | None = None, seed: int = 0,
                            threshold: float = 1e-11, batch: int = 16) -> dict:
    """Perturbation sweep: bump each noise frame in turn and record which
    output frames move.  Runs in float64 on a copy of ``model``.

    Returns ``{"field": int, "spans": list of (lo, hi) noise offsets per
    output frame}``.
    """
    import copy

    m = copy.deepcopy(model).double().eval()
    td = m.config.temporal_divisor
    frames = frames or td
    P = m.noise_padding
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(1, frames + 2 * P, NOISE_CHANNELS, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        base = m(z)[0]
        scale = base.abs().max().item()
        lo = [None] * frames
        hi = [None] * frames
        N = z.shape[1]
        for first in range(0, N, batch):
            idx = list(range(first, min(N, first + batch)))
            zp = z.repeat(len(idx), 1, 1)
            zp[torch.arange(len(idx)), idx] += 1.0
            diff = (m(zp) - base).abs().flatten(2).max(dim=2).values  # [n, T]
            for k, n in enumerate(idx):
                for t in torch.nonzero(diff[k] > threshold * scale).flatten().tolist():
                    d = n - P - t
                    lo[t] = d if lo[t] is None else min(lo[t], d)
                    hi[t] = d if hi[t] is None else max(hi[t], d)
    spans = list(zip(lo, hi))
    field = max(h - l + 1 for l, h in spans if l is not None)
    return {"field": field, "spans": spans}
