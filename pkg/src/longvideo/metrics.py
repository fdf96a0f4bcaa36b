"""Evaluation: colour similarity over time, Fréchet distances and feature
distance curves.

Videos are ``[T, 3, H, W]`` tensors in [-1, 1].  Every random choice takes an
explicit seed, so a metric with a fixed seed is reproducible bit for bit on
the same platform.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

HIST_BINS = 20
FEATURE_DIM = 128
EIG_TOL = 1e-6

# --- colour similarity ------------------------------------------------------


def _as_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def bin_indices(frame, n_bins: int = HIST_BINS) -> np.ndarray:
    """Flat 3-D bin index of every pixel of ``frame[3, H, W]`` in [-1, 1].

    Channel value v lands in bin ``floor((v + 1) / 2 * N)`` clamped to N-1.
    """
    x = _as_numpy(frame)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a [3, H, W] frame, got {x.shape}")
    b = np.clip(np.floor((x + 1.0) / 2.0 * n_bins), 0, n_bins - 1).astype(np.int64)
    return (b[0] * n_bins + b[1]) * n_bins + b[2]


def color_histogram(frame, n_bins: int = HIST_BINS) -> np.ndarray:
    """Normalized 3-D colour histogram, flattened to ``[N**3]``."""
    idx = bin_indices(frame, n_bins).ravel()
    h = np.bincount(idx, minlength=n_bins ** 3).astype(np.float64)
    return h / idx.size


def histogram_intersection(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.minimum(a, b).sum())


def color_similarity(clip, t: int, n_bins: int = HIST_BINS) -> float:
    """Histogram intersection between frame 0 and frame ``t`` of ``clip``."""
    T = clip.shape[0]
    if not 0 <= t < T:
        raise IndexError(f"t={t} outside a clip of {T} frames")
    if t == 0:
        return 1.0
    return histogram_intersection(color_histogram(clip[0], n_bins), color_histogram(clip[t], n_bins))


def similarity_matrix(clip, n_bins: int = HIST_BINS) -> np.ndarray:
    """``S(clip, t)`` for every t, as ``[T]``."""
    h0 = color_histogram(clip[0], n_bins)
    out = np.empty(clip.shape[0])
    out[0] = 1.0
    for t in range(1, clip.shape[0]):
        out[t] = histogram_intersection(h0, color_histogram(clip[t], n_bins))
    return out


def similarity_curve(clips: Iterable, n_bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation of ``S(., t)`` over clips of equal length."""
    rows = np.stack([similarity_matrix(c, n_bins) for c in clips])
    return rows.mean(axis=0), rows.std(axis=0)


def write_curve_csv(path, mean: np.ndarray, std: np.ndarray):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "mean", "std"])
        for t, (m, s) in enumerate(zip(mean, std)):
            w.writerow([t, repr(float(m)), repr(float(s))])


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return np.array([float(r["mean"]) for r in rows]), np.array([float(r["std"]) for r in rows])


def plot_curve(path, mean: np.ndarray, std: np.ndarray, ylabel: str = "color similarity"):
    """Save a mean +- std plot (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.arange(len(mean))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t, mean)
    ax.fill_between(t, mean - std, mean + std, alpha=0.3)
    ax.set_xlabel("frame offset t")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# --- Fréchet statistics -----------------------------------------------------


@dataclass
class FrechetStats:
    """Gaussian fit of a feature set: mean, covariance and total weight.

    The covariance is normalized by the total weight (no Bessel correction)
    in both the weighted and the unweighted case, so uniform weights give
    exactly the unweighted statistics.
    """

    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(self.mean.size, self.mean.size)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def fit(cls, X, sample_weight=None) -> "FrechetStats":
        X = _as_numpy(X)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] == 0:
            raise ValueError("cannot fit statistics to an empty feature set")
        w = np.ones(X.shape[0]) if sample_weight is None else _as_numpy(sample_weight).reshape(-1)
        if w.shape[0] != X.shape[0] or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("sample_weight must be non-negative, non-zero, one entry per row")
        W = w.sum()
        mu = w @ X / W
        D = X - mu
        cov = (D * w[:, None]).T @ D / W
        return cls(mu, (cov + cov.T) / 2, float(W))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(), "weight": self.weight}

    @classmethod
    def from_dict(cls, d: dict) -> "FrechetStats":
        return cls(np.array(d["mean"]), np.array(d["cov"]), d["weight"])


def _psd_eigen(M: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    top = max(float(vals.max(initial=0.0)), 0.0)
    if vals.size and vals.min() < -EIG_TOL * max(top, 1e-300) and vals.min() < -1e-12:
        raise ValueError(f"{what} is not positive semidefinite (eigenvalue {vals.min():.3g})")
    # round-off on null directions would otherwise survive the square root
    # as ~sqrt(eps * top); treat them as exact zeros like a rank computation
    rank_tol = top * vals.size * np.finfo(vals.dtype).eps
    return np.where(vals > rank_tol, vals, 0.0), vecs


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace of the square root is taken through the symmetric matrix
    ``S_a^(1/2) S_b S_a^(1/2)``, which has the same eigenvalues as the product.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    for s in (a, b):
        if not (np.all(np.isfinite(s.mean)) and np.all(np.isfinite(s.cov))):
            raise ValueError("statistics contain non-finite values")
    va, ua = _psd_eigen(a.cov, "covariance")
    root_a = (ua * np.sqrt(va)) @ ua.T
    vm, _ = _psd_eigen(root_a @ b.cov @ root_a, "covariance product")
    diff = a.mean - b.mean
    d = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sqrt(vm).sum())
    return max(d, 0.0)


# --- feature extractors -----------------------------------------------------


class FeatureExtractor(Protocol):
    name: str
    dim: int
    min_frames: int

    def __call__(self, x: torch.Tensor) -> torch.Tensor: ...


def _seeded_conv(in_ch, out_ch, k, gen, dims):
    shape = (out_ch, in_ch) + (k,) * dims if isinstance(k, int) else (out_ch, in_ch) + tuple(k)
    fan_in = in_ch * math.prod(shape[2:])
    return torch.randn(shape, generator=gen) * math.sqrt(2.0 / fan_in)


class RandomVideoExtractor(nn.Module):
    """Seeded random-weight 3-D conv network for video segments.

    ``[N, L, 3, H, W]`` in [-1, 1] -> ``[N, dim]``: four strided 3x3x3 convs
    with leaky ReLU, then mean and standard deviation pooled over space-time.
    Inputs are optionally resized per frame to ``input_size`` with
    antialiased bilinear filtering first.
    """

    def __init__(self, seed: int = 0, dim: int = FEATURE_DIM, min_frames: int = 16,
                 input_size: tuple[int, int] | None = None, width: int = 32):
        super().__init__()
        if dim % 2:
            raise ValueError("dim must be even (mean and std halves)")
        gen = torch.Generator().manual_seed(seed)
        chans = [3, width, width * 2, width * 2, dim // 2]
        strides = [(1, 2, 2), (2, 2, 2), (2, 2, 2), (2, 1, 1)]
        self.weights = nn.ParameterList(
            nn.Parameter(_seeded_conv(a, b, 3, gen, 3), requires_grad=False) for a, b in zip(chans[:-1], chans[1:]))
        self.strides = strides
        self.name = f"random3d-d{dim}-w{width}-seed{seed}" + (f"-{input_size[0]}x{input_size[1]}" if input_size else "")
        self.dim = dim
        self.min_frames = min_frames
        self.input_size = tuple(input_size) if input_size else None

    @torch.no_grad()
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] < self.min_frames:
            raise ValueError(f"expected [N, L>={self.min_frames}, 3, H, W], got {tuple(x.shape)}")
        x = x.float()
        if self.input_size and tuple(x.shape[-2:]) != self.input_size:
            N, L = x.shape[:2]
            x = F.interpolate(x.flatten(0, 1), size=self.input_size, mode="bilinear",
                              align_corners=False, antialias=True).unflatten(0, (N, L))
        h = x.permute(0, 2, 1, 3, 4)
        for wt, st in zip(self.weights, self.strides):
            h = F.leaky_relu(F.conv3d(h, wt, stride=st, padding=1), 0.2)
        h = h.flatten(2)
        return torch.cat([h.mean(dim=2), h.std(dim=2)], dim=1)


class RandomFrameExtractor(nn.Module):
    """Seeded random-weight 2-D conv network: ``[N, 3, H, W]`` -> ``[N, dim]``."""

    def __init__(self, seed: int = 0, dim: int = FEATURE_DIM, input_size: tuple[int, int] | None = None,
                 width: int = 32):
        super().__init__()
        if dim % 2:
            raise ValueError("dim must be even (mean and std halves)")
        gen = torch.Generator().manual_seed(seed)
        chans = [3, width, width * 2, width * 2, dim // 2]
        self.weights = nn.ParameterList(
            nn.Parameter(_seeded_conv(a, b, 3, gen, 2), requires_grad=False) for a, b in zip(chans[:-1], chans[1:]))
        self.name = f"random2d-d{dim}-w{width}-seed{seed}" + (f"-{input_size[0]}x{input_size[1]}" if input_size else "")
        self.dim = dim
        self.min_frames = 1
        self.input_size = tuple(input_size) if input_size else None

    @torch.no_grad()
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ValueError(f"expected [N, 3, H, W], got {tuple(x.shape)}")
        x = x.float()
        if self.input_size and tuple(x.shape[-2:]) != self.input_size:
            x = F.interpolate(x, size=self.input_size, mode="bilinear", align_corners=False, antialias=True)
        h = x
        for i, wt in enumerate(self.weights):
            h = F.leaky_relu(F.conv2d(h, wt, stride=1 if i == 0 else 2, padding=1), 0.2)
        h = h.flatten(2)
        return torch.cat([h.mean(dim=2), h.std(dim=2)], dim=1)


def extract(extractor, items: Iterable[torch.Tensor], batch: int = 64) -> np.ndarray:
    """Run ``extractor`` over an iterable of inputs in fixed-size batches."""
    feats, buf = [], []
    for x in items:
        buf.append(x)
        if len(buf) == batch:
            feats.append(extractor(torch.stack(buf)).double().numpy())
            buf = []
    if buf:
        feats.append(extractor(torch.stack(buf)).double().numpy())
    if not feats:
        raise ValueError("no inputs to extract features from")
    return np.concatenate(feats)


# --- segment sources --------------------------------------------------------


class SegmentSource(Protocol):
    def segments(self, n: int, length: int, seed: int) -> Iterator[torch.Tensor]:
        """Yield ``n`` segments ``[length, 3, H, W]``."""
        ...


class StoreSegments:
    """Random segments of clips from a :class:`~longvideo.data.ClipStore`."""

    def __init__(self, store, level: str = "low"):
        self.store, self.level = store, level

    def segments(self, n, length, seed):
        from .data import sample_clip

        if not any(c.frames >= length for c in self.store.clips):
            raise ValueError(f"no clip has {length} frames; cannot draw segments")
        rng = np.random.default_rng(seed)
        for _ in range(n):
            yield sample_clip(self.store, length, rng, self.level)


class GeneratorSegments:
    """Segments of videos from a low-res generator.  Each video is
    ``frames`` long and contributes ``per_video`` segments at random offsets."""

    def __init__(self, model, frames: int | None = None, per_video: int = 1, batch: int = 8,
                 output_size: tuple[int, int] | None = None):
        self.model, self.frames, self.per_video, self.batch = model, frames, per_video, batch
        self.output_size = output_size

    def segments(self, n, length, seed):
        td = self.model.config.temporal_divisor
        frames = self.frames or td * math.ceil(length / td)
        if frames < length:
            raise ValueError(f"videos of {frames} frames are shorter than segments of {length}")
        gen = torch.Generator().manual_seed(seed)
        produced = 0
        was_training = self.model.training
        self.model.eval()
        try:
            while produced < n:
                b = min(self.batch, math.ceil((n - produced) / self.per_video))
                z = self.model.sample_noise(b, frames, gen)
                with torch.no_grad():
                    videos = self.model(z, self.output_size)
                for v in videos:
                    for _ in range(self.per_video):
                        if produced == n:
                            return
                        start = int(torch.randint(0, frames - length + 1, (1,), generator=gen))
                        yield v[start:start + length]
                        produced += 1
        finally:
            self.model.train(was_training)


class ConditionedSegments:
    """Segments made by mapping real low-res segments through ``fn``.

    ``fn(low[L, 3, h, w], generator) -> [L, 3, H, W]``; used for super-res
    with real conditioning and for the bilinear baseline.
    """

    def __init__(self, store, fn: Callable, level: str = "low"):
        self.source = StoreSegments(store, level)
        self.fn = fn

    def segments(self, n, length, seed):
        gen = torch.Generator().manual_seed(seed + 1)
        for low in self.source.segments(n, length, seed):
            yield self.fn(low, gen)


class TensorSegments:
    """Random segments of an in-memory list of videos."""

    def __init__(self, videos):
        self.videos = list(videos)

    def segments(self, n, length, seed):
        rng = np.random.default_rng(seed)
        eligible = [v for v in self.videos if v.shape[0] >= length]
        if not eligible:
            raise ValueError(f"no video has {length} frames")
        for _ in range(n):
            v = eligible[int(rng.integers(len(eligible)))]
            s = int(rng.integers(v.shape[0] - length + 1))
            yield v[s:s + length]


def segment_stats(source: SegmentSource, n: int, length: int, extractor, seed: int = 0,
                  batch: int = 64) -> FrechetStats:
    return FrechetStats.fit(extract(extractor, source.segments(n, length, seed), batch))


def fvd(real: SegmentSource, gen: SegmentSource, segment_len: int = 16, n: int = 2048, extractor=None,
        seed: int = 0, batch: int = 64) -> float:
    """Fréchet distance between features of ``n`` random real and generated
    segments of ``segment_len`` frames."""
    extractor = extractor or RandomVideoExtractor(min_frames=min(16, segment_len))
    if segment_len < extractor.min_frames:
        raise ValueError(f"segments of {segment_len} frames are shorter than the extractor minimum")
    a = segment_stats(real, n, segment_len, extractor, seed, batch)
    b = segment_stats(gen, n, segment_len, extractor, seed + 1, batch)
    return frechet_distance(a, b)


def weighted_frame_stats(clip_features: list[np.ndarray]) -> FrechetStats:
    """Stats of per-frame features where each frame of clip c weighs 1/len(c)."""
    X = np.concatenate(clip_features)
    w = np.concatenate([np.full(len(f), 1.0 / len(f)) for f in clip_features])
    return FrechetStats.fit(X, w)


def fid_v(store, gen_frames, extractor=None, level: str = "low", batch: int = 64) -> float:
    """Per-frame FID with every real clip contributing total weight 1.

    ``gen_frames`` is an iterable of ``[3, H, W]`` frames (or a ``[N, 3, H, W]``
    tensor).
    """
    from .data import to_unit

    if not store.clips:
        raise ValueError("empty clip store")
    extractor = extractor or RandomFrameExtractor()
    real = [extract(extractor, to_unit(store.read(c.id, level)), batch) for c in store.clips]
    gen = extract(extractor, gen_frames, batch)
    return frechet_distance(weighted_frame_stats(real), FrechetStats.fit(gen))


def feature_distance_curve(clips: Iterable, extractor=None, t_range: Iterable[int] | None = None,
                           batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std over clips of ``|f(x_0) - f(x_t)|_2`` per t."""
    extractor = extractor or RandomFrameExtractor()
    rows = []
    for clip in clips:
        ts = list(t_range) if t_range is not None else list(range(clip.shape[0]))
        f = extract(extractor, clip[[0] + ts], batch)
        d = np.linalg.norm(f[1:] - f[0], axis=1)
        d[np.array(ts) == 0] = 0.0
        rows.append(d)
    rows = np.stack(rows)
    return rows.mean(axis=0), rows.std(axis=0)


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


# --- reports ----------------------------------------------------------------


def write_report(path, metric: str, value, seed: int, extractor: str | None = None, **extra) -> dict:
    report = {"metric": metric, "value": value, "seed": seed, "extractor": extractor, **extra}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report
