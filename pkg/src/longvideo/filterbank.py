"""Temporal lowpass filter bank and noise enrichment.

Each frame of the generator input is a vector of ``C_z = 8`` i.i.d. Gaussian
scalars.  Before the mapping network sees it, every channel is convolved over
time with a bank of Kaiser-windowed sinc lowpass filters whose footprints are
spaced exponentially between ``k_min`` and ``k_max`` frames, giving each frame
context over many time scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.signal import firwin

NOISE_CHANNELS = 8
DEFAULT_N_FILTERS = 128
DEFAULT_K_MIN = 500
DEFAULT_K_MAX = 10000
DEFAULT_BETA = 8.0

# Above this kernel length enrich() switches from direct to FFT convolution.
_FFT_THRESHOLD = 512


def round_to_odd(x: float) -> int:
    """Nearest odd integer to ``x``; exact ties between two odd numbers round up."""
    n = math.floor((x - 1.0) / 2.0 + 0.5)
    return max(1, 2 * n + 1)


def footprint_schedule(n_filters: int, k_min: float, k_max: float) -> np.ndarray:
    """Unrounded footprints ``k_min * (k_max / k_min) ** (i / (n_filters - 1))``."""
    i = np.arange(n_filters, dtype=np.float64)
    return k_min * (k_max / k_min) ** (i / (n_filters - 1))


def kaiser_lowpass(numtaps: int, cutoff: float, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Kaiser-windowed sinc lowpass with unit DC gain.

    ``cutoff`` is in cycles per sample (Nyquist = 0.5).  Shared by the temporal
    filter bank and the spatial prefilters used when resizing images.
    """
    if numtaps < 1 or numtaps % 2 == 0:
        raise ValueError(f"numtaps must be a positive odd integer, got {numtaps}")
    if numtaps == 1:
        return np.ones(1)
    cutoff = min(cutoff, 0.5 - 1e-9)
    return firwin(numtaps, cutoff, window=("kaiser", beta), fs=1.0)


@dataclass(frozen=True)
class FilterBank:
    """A set of zero-phase temporal lowpass filters.

    ``footprints`` holds the odd tap counts actually used; ``nominal`` the
    unrounded schedule values they were derived from.
    """

    filters: list[np.ndarray]
    footprints: list[int]
    k_min: int
    k_max: int
    beta: float = DEFAULT_BETA
    nominal: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.filters) != len(self.footprints):
            raise ValueError("filters and footprints must have equal length")
        if len(self.filters) == 0:
            raise ValueError("a filter bank needs at least one filter")
        for f, k in zip(self.filters, self.footprints):
            if f.ndim != 1 or f.shape[0] != k:
                raise ValueError("each kernel length must equal its footprint")

    @property
    def count(self) -> int:
        return len(self.filters)

    @property
    def max_taps(self) -> int:
        return max(self.footprints)

    def kernel_matrix(self) -> np.ndarray:
        """All kernels centered in a ``[count, max_taps]`` zero-padded array."""
        K = self.max_taps
        out = np.zeros((self.count, K))
        for i, f in enumerate(self.filters):
            start = (K - f.shape[0]) // 2
            out[i, start:start + f.shape[0]] = f
        return out

    def spec(self) -> dict:
        """The serializable parameters; kernels are re-derived from these."""
        return {"n_filters": self.count, "k_min": self.k_min, "k_max": self.k_max, "beta": self.beta}

    @classmethod
    def from_spec(cls, spec: dict) -> "FilterBank":
        return design_bank(spec["n_filters"], spec["k_min"], spec["k_max"], beta=spec.get("beta", DEFAULT_BETA))


def design_bank(
    n_filters: int = DEFAULT_N_FILTERS,
    k_min: int = DEFAULT_K_MIN,
    k_max: int = DEFAULT_K_MAX,
    beta: float = DEFAULT_BETA,
) -> FilterBank:
    """Design ``n_filters`` Kaiser-sinc lowpass filters with footprints spaced
    exponentially from ``k_min`` to ``k_max`` frames.

    Filter ``i`` has ``round_to_odd(k_i)`` taps and cutoff ``1 / k_i`` cycles
    per frame.
    """
    if n_filters < 2:
        raise ValueError(f"n_filters must be >= 2, got {n_filters}")
    if k_min < 2:
        raise ValueError(f"k_min must be >= 2, got {k_min}")
    if k_min > k_max:
        raise ValueError(f"k_min ({k_min}) must not exceed k_max ({k_max})")
    nominal = footprint_schedule(n_filters, k_min, k_max)
    taps = [round_to_odd(k) for k in nominal]
    filters = [kaiser_lowpass(n, 1.0 / k, beta) for n, k in zip(taps, nominal)]
    return FilterBank(filters, taps, int(k_min), int(k_max), float(beta), [float(k) for k in nominal])


def context_padding(bank: FilterBank) -> int:
    """Extra noise frames needed on each side of a window for exact enrichment."""
    return math.ceil(bank.max_taps / 2)


@dataclass
class NoiseStream:
    """Per-frame temporal noise ``values[T, C_z]``; row 0 sits at global frame
    ``frame_offset``."""

    values: torch.Tensor
    frame_offset: int = 0

    @property
    def length(self) -> int:
        return self.values.shape[-2]

    @classmethod
    def sample(cls, seed: int, start: int, length: int, channels: int = NOISE_CHANNELS,
               chunk: int = 32) -> "NoiseStream":
        """Noise for global frames ``[start, start + length)``.

        Frames are drawn in fixed chunks keyed by ``(seed, chunk index)`` so
        any window of the same seed sees the same values at the same global
        frame, which is what makes time offsets work.
        """
        first = start // chunk
        last = (start + length - 1) // chunk
        rows = []
        for c in range(first, last + 1):
            ss = np.random.SeedSequence(entropy=seed, spawn_key=(c + (1 << 40),))
            rows.append(np.random.default_rng(ss).standard_normal((chunk, channels)))
        block = np.concatenate(rows, axis=0)
        lo = start - first * chunk
        values = torch.from_numpy(block[lo:lo + length]).float()
        return cls(values, start)


@dataclass
class EnrichedNoise:
    """``values[..., T, N_f, C_z]``: channel ``(i, j)`` is filter ``i`` applied to
    noise channel ``j``.  ``exact[t]`` is False where the kernel ran off the
    supplied noise and zero padding was used."""

    values: torch.Tensor
    exact: torch.Tensor
    frame_offset: int = 0


def _direct_filter(x: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
    # x: [M, T], kernels: [N_f, K] (symmetric, so correlation == convolution)
    K = kernels.shape[-1]
    y = F.conv1d(x[:, None, :], kernels[:, None, :], padding=K // 2)
    return y  # [M, N_f, T]


def _fft_filter(x: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
    M, T = x.shape
    K = kernels.shape[-1]
    n = T + K - 1
    nfft = 1 << (n - 1).bit_length()
    X = torch.fft.rfft(x, nfft)
    H = torch.fft.rfft(kernels, nfft)
    y = torch.fft.irfft(X[:, None, :] * H[None, :, :], nfft)
    h = K // 2
    return y[..., h:h + T]


def enrich(z: NoiseStream | torch.Tensor, bank: FilterBank, method: str = "auto") -> EnrichedNoise:
    """Convolve every noise channel with every filter of ``bank`` over time.

    ``z`` is ``[T, C]`` or batched ``[B, T, C]``.  Output frame ``t`` is aligned
    with input frame ``t``; frames within half a kernel of either end are
    zero-padded and flagged as inexact.
    """
    offset = 0
    if isinstance(z, NoiseStream):
        offset = z.frame_offset
        z = z.values
    if z.ndim not in (2, 3):
        raise ValueError(f"noise must be [T, C] or [B, T, C], got shape {tuple(z.shape)}")
    batched = z.ndim == 3
    if not batched:
        z = z[None]
    B, T, C = z.shape
    kernels = torch.as_tensor(bank.kernel_matrix(), dtype=z.dtype, device=z.device)
    x = z.permute(0, 2, 1).reshape(B * C, T)
    if method == "auto":
        method = "fft" if bank.max_taps > _FFT_THRESHOLD else "direct"
    if method == "direct":
        y = _direct_filter(x, kernels)
    elif method == "fft":
        y = _fft_filter(x, kernels)
    else:
        raise ValueError(f"unknown method {method!r}")
    y = y.reshape(B, C, bank.count, T).permute(0, 3, 2, 1)  # [B, T, N_f, C]
    h = bank.max_taps // 2
    t = torch.arange(T, device=z.device)
    exact = (t >= h) & (t < T - h)
    if not batched:
        y = y[0]
    return EnrichedNoise(y, exact, offset)
