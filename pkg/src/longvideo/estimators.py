"""scikit-learn style wrappers for the stateless parts of the pipeline.

These cover the pieces that map cleanly onto ``fit`` / ``transform``:
temporal-noise enrichment, colour histograms and Gaussian feature fits.
Adversarial training does not (two coupled networks, checkpoints, resumable
RNG state) and is exposed through the trainer classes instead.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .filterbank import NOISE_CHANNELS, design_bank, enrich
from .metrics import HIST_BINS, FrechetStats, color_histogram, frechet_distance


def check_noise(z) -> np.ndarray:
    """Noise as float64 ``[B, T, C]``; a 2-D ``[T, C]`` input gains a batch axis."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        z = z[None]
    if z.ndim != 3 or z.shape[-1] != NOISE_CHANNELS:
        raise ValueError(f"expected noise [T, {NOISE_CHANNELS}] or [B, T, {NOISE_CHANNELS}], got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("noise contains non-finite values")
    return z


def check_frames(x) -> np.ndarray:
    """Frames as float64 ``[N, 3, H, W]`` with values in [-1, 1]."""
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected frames [N, 3, H, W], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("frames contain non-finite values")
    return x


class NoiseEnricher(TransformerMixin, BaseEstimator):
    """Filter temporal noise with a lowpass bank.

    ``transform`` maps ``[B, T, 8]`` to ``[B, T, N_f * 8]``; with
    ``valid_only`` it drops the frames whose filters reach past the input.
    """

    def __init__(self, n_filters=128, k_min=500, k_max=10000, beta=8.0, method="auto", valid_only=False):
        self.n_filters = n_filters
        self.k_min = k_min
        self.k_max = k_max
        self.beta = beta
        self.method = method
        self.valid_only = valid_only

    def fit(self, X=None, y=None):
        self.bank_ = design_bank(self.n_filters, self.k_min, self.k_max, self.beta)
        self.n_features_out_ = self.n_filters * NOISE_CHANNELS
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        z = torch.from_numpy(check_noise(X))
        e = enrich(z, self.bank_, self.method)
        values = e.values
        if self.valid_only:
            values = values[:, e.exact]
        return values.flatten(-2).numpy()


class ColorHistogramTransformer(TransformerMixin, BaseEstimator):
    """Frames ``[N, 3, H, W]`` in [-1, 1] to normalized ``[N, n_bins**3]`` histograms."""

    def __init__(self, n_bins=HIST_BINS):
        self.n_bins = n_bins

    def fit(self, X=None, y=None):
        if self.n_bins < 1:
            raise ValueError("n_bins must be positive")
        self.n_features_out_ = self.n_bins ** 3
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        return np.stack([color_histogram(f, self.n_bins) for f in check_frames(X)])


class GaussianFeatureFit(BaseEstimator):
    """Weighted Gaussian fit of a feature matrix; ``distance`` is the Fréchet
    distance to another fitted instance (or to statistics)."""

    def fit(self, X, y=None, sample_weight=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        self.stats_ = FrechetStats.fit(X, sample_weight)
        self.mean_, self.covariance_ = self.stats_.mean, self.stats_.cov
        self.n_features_in_ = X.shape[1]
        return self

    def distance(self, other) -> float:
        check_is_fitted(self, "stats_")
        if isinstance(other, GaussianFeatureFit):
            check_is_fitted(other, "stats_")
            other = other.stats_
        return frechet_distance(self.stats_, other)

    def score(self, X, y=None, sample_weight=None) -> float:
        """Negative Fréchet distance to a Gaussian fitted on ``X``."""
        return -self.distance(GaussianFeatureFit().fit(X, sample_weight=sample_weight))
