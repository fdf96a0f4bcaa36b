import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from longvideo.estimators import ColorHistogramTransformer, GaussianFeatureFit, NoiseEnricher, check_frames
from longvideo.filterbank import design_bank, enrich
from longvideo.metrics import FrechetStats, color_histogram, frechet_distance


def test_noise_enricher_matches_function():
    z = np.random.default_rng(0).normal(size=(2, 40, 8))
    est = NoiseEnricher(n_filters=4, k_min=3, k_max=9).fit()
    out = est.transform(z)
    ref = enrich(torch.from_numpy(z), design_bank(4, 3, 9)).values.flatten(-2).numpy()
    assert out.shape == (2, 40, 32) and np.allclose(out, ref)
    valid = NoiseEnricher(n_filters=4, k_min=3, k_max=9, valid_only=True).fit().transform(z[0])
    assert valid.shape == (1, 40 - 8, 32)
    assert clone(est).get_params() == est.get_params()


def test_noise_enricher_errors():
    with pytest.raises(NotFittedError):
        NoiseEnricher().transform(np.zeros((4, 8)))
    est = NoiseEnricher(n_filters=2, k_min=3, k_max=5).fit()
    with pytest.raises(ValueError):
        est.transform(np.zeros((4, 7)))
    with pytest.raises(ValueError):
        est.transform(np.full((4, 8), np.nan))


def test_histogram_transformer():
    x = torch.rand(3, 3, 4, 4) * 2 - 1
    h = ColorHistogramTransformer().fit_transform(x)
    assert h.shape == (3, 8000)
    assert np.array_equal(h[1], color_histogram(x[1]))
    assert ColorHistogramTransformer(n_bins=4).fit_transform(x[0]).shape == (1, 64)
    with pytest.raises(ValueError):
        check_frames(np.zeros((2, 4, 4, 4)))
    with pytest.raises(ValueError):
        ColorHistogramTransformer(n_bins=0).fit()


def test_gaussian_feature_fit():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(300, 4)), rng.normal(size=(300, 4)) + 1
    a, b = GaussianFeatureFit().fit(X), GaussianFeatureFit().fit(Y)
    assert a.distance(b) == pytest.approx(frechet_distance(FrechetStats.fit(X), FrechetStats.fit(Y)))
    assert a.distance(a.stats_) == pytest.approx(0, abs=1e-8)
    assert a.score(X) == pytest.approx(0, abs=1e-8) and a.score(Y) < -3
    w = rng.uniform(0.1, 1, size=300)
    np.testing.assert_allclose(GaussianFeatureFit().fit(X, sample_weight=w).mean_, w @ X / w.sum())
    with pytest.raises(NotFittedError):
        GaussianFeatureFit().distance(a)


def test_pipeline_composition():
    x = torch.rand(20, 3, 4, 4) * 2 - 1
    pipe = make_pipeline(ColorHistogramTransformer(n_bins=2), GaussianFeatureFit())
    pipe.fit(x)
    assert pipe[-1].n_features_in_ == 8
