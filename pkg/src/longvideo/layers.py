"""Building blocks shared by the generators and discriminators."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from scipy.signal import firwin

LRELU_SLOPE = 0.2
LRELU_GAIN = math.sqrt(2.0)


def lrelu(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, LRELU_SLOPE) * LRELU_GAIN


class EqualLinear(nn.Module):
    """Linear layer with equalized learning rate (weights ~ N(0, 1/lr_mul^2),
    scaled at runtime)."""

    def __init__(self, in_features, out_features, bias=True, bias_init=0.0, lr_mul=1.0, activate=False):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features) / lr_mul)
        self.bias = nn.Parameter(torch.full((out_features,), float(bias_init))) if bias else None
        self.scale = lr_mul / math.sqrt(in_features)
        self.lr_mul = lr_mul
        self.activate = activate

    def forward(self, x):
        b = self.bias * self.lr_mul if self.bias is not None else None
        y = F.linear(x, self.weight * self.scale, b)
        return lrelu(y) if self.activate else y


class EqualConv(nn.Module):
    """2-D or 3-D convolution with equalized learning rate."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True, activate=False):
        super().__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size,)
        self.dims = len(kernel_size)
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, *kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        self.scale = 1.0 / math.sqrt(in_channels * math.prod(kernel_size))
        self.stride = stride
        self.padding = padding
        self.activate = activate

    def forward(self, x):
        conv = {1: F.conv1d, 2: F.conv2d, 3: F.conv3d}[self.dims]
        y = conv(x, self.weight * self.scale, self.bias, stride=self.stride, padding=self.padding)
        return lrelu(y) if self.activate else y


def frame_rms_normalize(x: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Normalize ``[B, C, T, H, W]`` features to unit RMS separately per frame."""
    return x * torch.rsqrt(x.square().mean(dim=(1, 3, 4), keepdim=True) + eps)


class ModulatedConv3d(nn.Module):
    """Convolution modulated by a per-frame style.

    The style of input frame ``t`` scales its input channels; output frame ``t``
    is then demodulated with the expected output std computed from the style
    at frame ``t``.  The conv is valid in time, so ``kt - 1`` frames are lost,
    and everything stays local in time: the layer commutes with temporal shifts.
    """

    def __init__(self, in_channels, out_channels, kernel_size, w_dim, demodulate=True):
        super().__init__()
        kt, kh, kw = kernel_size
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kt, kh, kw))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.affine = EqualLinear(w_dim, in_channels, bias_init=1.0)
        self.scale = 1.0 / math.sqrt(in_channels * kt * kh * kw)
        self.kernel_size = kernel_size
        self.demodulate = demodulate

    def forward(self, x: torch.Tensor, w: torch.Tensor, normalize: bool = False) -> torch.Tensor:
        """``x[B, Cin, T, H, W]``, ``w[B, T, w_dim]`` -> ``[B, Cout, T - kt + 1, H, W]``.

        ``normalize`` folds a per-frame RMS normalization of ``x`` into the
        style multiplication.
        """
        s = self.affine(w)  # [B, T, Cin]
        f = s.permute(0, 2, 1)[..., None, None]
        if normalize:
            ms = x.square().mean(dim=(1, 3, 4), keepdim=True)
            f = f * torch.rsqrt(ms + 1e-8)
        kt, kh, kw = self.kernel_size
        weight = self.weight * self.scale
        y = F.conv3d(x * f, weight, padding=(0, kh // 2, kw // 2))
        b = self.bias[None, :, None, None, None]
        if not self.demodulate:
            return y + b
        r = kt // 2
        s_out = s[:, r:s.shape[1] - r]
        wsq = weight.square().sum(dim=(2, 3, 4))  # [Cout, Cin]
        d = torch.rsqrt(s_out.square() @ wsq.t() + 1e-8)  # [B, T', Cout]
        return torch.addcmul(b, y, d.permute(0, 2, 1)[..., None, None])


class ModulatedConv2d(nn.Module):
    """StyleGAN2 modulated convolution with one style per sample."""

    def __init__(self, in_channels, out_channels, kernel_size, w_dim, demodulate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.affine = EqualLinear(w_dim, in_channels, bias_init=1.0)
        self.scale = 1.0 / math.sqrt(in_channels * kernel_size * kernel_size)
        self.kernel_size = kernel_size
        self.demodulate = demodulate

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        B, C, H, W = x.shape
        s = self.affine(w)  # [B, Cin]
        weight = self.weight[None] * self.scale * s[:, None, :, None, None]
        if self.demodulate:
            weight = weight * torch.rsqrt(weight.square().sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        O = weight.shape[1]
        y = F.conv2d(x.reshape(1, B * C, H, W), weight.reshape(B * O, C, *weight.shape[3:]),
                     padding=self.kernel_size // 2, groups=B)
        return y.reshape(B, O, H, W) + self.bias[None, :, None, None]


# --- resizing -------------------------------------------------------------


@lru_cache(maxsize=32)
def resample_taps(factor: int, taps_per_factor: int = 6, beta: float = 8.0) -> np.ndarray:
    """Kaiser-sinc lowpass at ``0.5 / factor`` cycles/pixel, unit DC gain.

    Length is ``taps_per_factor * factor`` (even for even factors) so the
    kernel centre lands on the half-pixel grid of a factor-``factor`` resample.
    """
    numtaps = taps_per_factor * factor + (factor % 2 == 1 and taps_per_factor % 2 == 0)
    return firwin(numtaps, 0.5 / factor, window=("kaiser", beta), fs=1.0)


def _as_nchw(x):
    return x.reshape(-1, *x.shape[-3:]), x.shape[:-3]


def prefiltered_downsample(x: torch.Tensor, factor: int, taps_per_factor: int = 6, beta: float = 8.0) -> torch.Tensor:
    """Lowpass at the new Nyquist, then keep one sample per ``factor`` x ``factor``
    cell (sampled at the cell centre).  Input ``[..., C, H, W]``."""
    if factor == 1:
        return x
    x4, lead = _as_nchw(x)
    C = x4.shape[1]
    k = torch.as_tensor(resample_taps(factor, taps_per_factor, beta), dtype=x.dtype, device=x.device)
    p = (k.numel() - factor) // 2
    y = F.pad(x4, (p, p, p, p), mode="replicate")
    y = F.conv2d(y, k.view(1, 1, 1, -1).expand(C, 1, 1, -1), stride=(1, factor), groups=C)
    y = F.conv2d(y, k.view(1, 1, -1, 1).expand(C, 1, -1, 1), stride=(factor, 1), groups=C)
    return y.reshape(*lead, *y.shape[-3:])


def filtered_upsample(x: torch.Tensor, factor: int, taps_per_factor: int = 6, beta: float = 8.0) -> torch.Tensor:
    """Zero-insertion upsampling by ``factor`` followed by the matching
    Kaiser-sinc interpolation filter.  Input ``[..., C, H, W]``."""
    if factor == 1:
        return x
    x4, lead = _as_nchw(x)
    C = x4.shape[1]
    k = resample_taps(factor, taps_per_factor, beta).copy()
    for p in range(factor):
        # unit gain per polyphase branch, so flat input stays exactly flat
        k[p::factor] /= k[p::factor].sum()
    k = torch.as_tensor(k, dtype=x.dtype, device=x.device)
    L = k.numel()
    margin = L // (2 * factor) + 1
    y = F.pad(x4, (margin, margin, margin, margin), mode="replicate")
    pad = (L - factor) // 2
    y = F.conv_transpose2d(y, k.view(1, 1, 1, -1).expand(C, 1, 1, -1), stride=(1, factor), padding=(0, pad), groups=C)
    y = F.conv_transpose2d(y, k.view(1, 1, -1, 1).expand(C, 1, -1, 1), stride=(factor, 1), padding=(pad, 0), groups=C)
    c = margin * factor
    y = y[..., c:y.shape[-2] - c, c:y.shape[-1] - c]
    return y.reshape(*lead, *y.shape[-3:])


def resize(x: torch.Tensor, size: tuple[int, int], prefilter: bool = True) -> torch.Tensor:
    """Resize ``[..., C, H, W]`` to ``size`` by an integer factor.

    Same-size input is returned untouched.  ``prefilter=False`` decimates
    without lowpass filtering when shrinking and uses bilinear interpolation
    when enlarging.
    """
    H, W = x.shape[-2:]
    h, w = size
    if (h, w) == (H, W):
        return x
    if h < H:
        if H % h or W % w or H // h != W // w:
            raise ValueError(f"cannot downsample {H}x{W} to {h}x{w} by an integer factor")
        f = H // h
        if not prefilter:
            return x[..., f // 2::f, f // 2::f]
        return prefiltered_downsample(x, f)
    if h % H or w % W or h // H != w // W:
        raise ValueError(f"cannot upsample {H}x{W} to {h}x{w} by an integer factor")
    if not prefilter:
        x4, lead = _as_nchw(x)
        y = F.interpolate(x4, size=size, mode="bilinear", align_corners=False)
        return y.reshape(*lead, *y.shape[-3:])
    return filtered_upsample(x, h // H)


def bilinear_resize(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    x4, lead = _as_nchw(x)
    y = F.interpolate(x4, size=size, mode="bilinear", align_corners=False)
    return y.reshape(*lead, *y.shape[-3:])
