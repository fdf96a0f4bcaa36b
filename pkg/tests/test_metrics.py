import numpy as np
import pytest
import torch

from longvideo.data import SyntheticSceneSpec, derive_low, render_clip, to_unit
from longvideo.metrics import (FrechetStats, RandomFrameExtractor, RandomVideoExtractor, StoreSegments,
                               GeneratorSegments, TensorSegments, color_histogram, color_similarity, extract,
                               feature_distance_curve, fid_v, frechet_distance, fvd, plot_curve, read_curve_csv,
                               segment_stats, similarity_curve, spearman, weighted_frame_stats, write_curve_csv,
                               write_report)


def _solid(rgb, T=1, size=4):
    return torch.tensor(rgb, dtype=torch.float32).view(1, 3, 1, 1).expand(T, 3, size, size).clone()


def test_histogram_normalized():
    h = color_histogram(torch.rand(3, 7, 5) * 2 - 1)
    assert h.shape == (8000,) and h.min() >= 0 and abs(h.sum() - 1) < 1e-9


def test_bin_edges():
    # +1 lands in the last bin, -1 in the first
    h = color_histogram(_solid([1.0, -1.0, 0.0])[0])
    assert h[(19 * 20 + 0) * 20 + 10] == 1.0


def test_disjoint_colors():
    clip = torch.cat([_solid([1, -1, -1]), _solid([-1, -1, 1])])
    assert color_similarity(clip, 1) == 0.0
    assert color_similarity(clip, 0) == 1.0
    with pytest.raises(IndexError):
        color_similarity(clip, 2)


def test_similarity_symmetric_and_permutation_invariant():
    g = torch.Generator().manual_seed(0)
    a, b = torch.rand(2, 3, 6, 6, generator=g) * 2 - 1
    s_ab = color_similarity(torch.stack([a, b]), 1)
    assert s_ab == pytest.approx(color_similarity(torch.stack([b, a]), 1), abs=1e-12)
    perm = torch.randperm(36, generator=g)
    b_perm = b.flatten(1)[:, perm].view_as(b)
    assert s_ab == pytest.approx(color_similarity(torch.stack([a, b_perm]), 1), abs=1e-12)


def test_static_and_repeated_curves(tmp_path):
    static = _solid([0.2, 0.1, -0.3], T=10)
    mean, std = similarity_curve([static] * 3)
    assert np.all(mean == 1) and np.all(std == 0)
    g = torch.Generator().manual_seed(0)
    clip = torch.rand(10, 3, 4, 4, generator=g) * 2 - 1
    mean, std = similarity_curve([clip] * 5)
    assert np.all(std == 0)
    write_curve_csv(tmp_path / "c.csv", mean, std)
    m2, s2 = read_curve_csv(tmp_path / "c.csv")
    assert np.array_equal(m2, mean) and np.array_equal(s2, std)


def test_plot_curve(tmp_path):
    pytest.importorskip("matplotlib")
    plot_curve(tmp_path / "c.png", np.linspace(1, 0, 8), np.zeros(8))
    assert (tmp_path / "c.png").stat().st_size > 0


def test_frechet_point_masses_and_symmetry():
    a = FrechetStats(np.zeros(1), np.zeros((1, 1)))
    b = FrechetStats(np.ones(1), np.zeros((1, 1)))
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(0)
    x, y = FrechetStats.fit(rng.normal(size=(200, 5))), FrechetStats.fit(rng.normal(size=(200, 5)) * 2 + 1)
    assert frechet_distance(x, y) == pytest.approx(frechet_distance(y, x), rel=1e-10)
    assert frechet_distance(x, y) > 0
    assert frechet_distance(x, x) == pytest.approx(0, abs=1e-8)


def test_frechet_against_scipy_sqrtm():
    from scipy.linalg import sqrtm

    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    a = FrechetStats(rng.normal(size=6), A @ A.T)
    b = FrechetStats(rng.normal(size=6), B @ B.T)
    ref = (np.sum((a.mean - b.mean) ** 2) + np.trace(a.cov) + np.trace(b.cov)
           - 2 * np.trace(sqrtm(a.cov @ b.cov).real))
    assert frechet_distance(a, b) == pytest.approx(ref, rel=1e-8)


def test_frechet_errors():
    a = FrechetStats(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        frechet_distance(a, FrechetStats(np.zeros(3), np.eye(3)))
    with pytest.raises(ValueError):
        frechet_distance(a, FrechetStats(np.array([0, np.nan]), np.eye(2)))
    with pytest.raises(ValueError):
        frechet_distance(a, FrechetStats(np.zeros(2), np.diag([1.0, -1.0])))


def test_stats_round_trip():
    s = FrechetStats.fit(np.random.default_rng(0).normal(size=(10, 3)))
    t = FrechetStats.from_dict(s.to_dict())
    assert np.array_equal(s.mean, t.mean) and np.array_equal(s.cov, t.cov)


def test_extractors_deterministic():
    x = torch.randn(2, 16, 3, 16, 16)
    a, b = RandomVideoExtractor(seed=5), RandomVideoExtractor(seed=5)
    assert torch.equal(a(x), b(x)) and a(x).shape == (2, 128)
    assert not torch.equal(a(x), RandomVideoExtractor(seed=6)(x))
    with pytest.raises(ValueError):
        a(torch.randn(2, 8, 3, 16, 16))
    f = RandomFrameExtractor(seed=0)
    assert f(torch.randn(3, 3, 16, 16)).shape == (3, 128)


def test_fvd_self_distance(tiny_store):
    ext = RandomVideoExtractor()
    src = StoreSegments(tiny_store)
    a = segment_stats(src, 32, 16, ext, seed=3)
    b = segment_stats(src, 32, 16, ext, seed=3)
    assert frechet_distance(a, b) <= 1e-6


def test_fvd_orders_real_above_untrained(tiny_store, small_generator):
    videos = [to_unit(tiny_store.read(c.id, "low")) for c in tiny_store.clips]
    half_a, half_b = TensorSegments(videos[:4]), TensorSegments(videos[4:])
    real = fvd(half_a, half_b, 16, n=64, seed=0)
    fake = fvd(half_a, GeneratorSegments(small_generator, frames=32, per_video=4), 16, n=64, seed=0)
    assert 0 < real < fake


def test_fvd_segment_lengths_share_code_path(tiny_store):
    videos = [to_unit(tiny_store.read(c.id, "low")) for c in tiny_store.clips]
    for L in (16, 32):
        assert fvd(TensorSegments(videos), TensorSegments(videos), L, n=8, seed=0) >= 0
    with pytest.raises(ValueError):
        fvd(TensorSegments(videos), TensorSegments(videos), 8, n=8, extractor=RandomVideoExtractor())


def test_weighted_stats_give_every_clip_unit_weight():
    rng = np.random.default_rng(0)
    feats = [rng.normal(size=(n, 3)) for n in (1, 4, 9)]
    s = weighted_frame_stats(feats)
    assert s.weight == pytest.approx(3.0)
    expect_mean = np.mean([f.mean(axis=0) for f in feats], axis=0)
    np.testing.assert_allclose(s.mean, expect_mean, rtol=1e-12)


def test_fid_v_convergence():
    # generated features drawn from the weighted real distribution converge to it
    rng = np.random.default_rng(0)
    d = 8
    lengths = [2, 5, 11, 40]
    feats = [rng.normal(size=(n, d)) + rng.normal(size=d) for n in lengths]
    real = weighted_frame_stats(feats)
    X = np.concatenate(feats)
    w = np.concatenate([np.full(n, 1 / n) for n in lengths])
    draws = X[rng.choice(len(X), size=100_000, p=w / w.sum())]
    assert frechet_distance(real, FrechetStats.fit(draws)) < 0.1


def test_fid_v_runs_on_store(tiny_store):
    g = torch.Generator().manual_seed(0)
    assert fid_v(tiny_store, torch.rand(32, 3, 16, 16, generator=g) * 2 - 1) > 0


def test_feature_curve_static_and_zero():
    static = _solid([0.1, 0.2, 0.3], T=8, size=16)
    mean, std = feature_distance_curve([static, static])
    assert np.allclose(mean, 0, atol=1e-6) and mean[0] == 0
    g = torch.Generator().manual_seed(0)
    mean, _ = feature_distance_curve([torch.rand(8, 3, 16, 16, generator=g)])
    assert mean[0] == 0 and np.all(mean[1:] > 0)


def test_feature_curve_increases_on_scrolling_clips():
    spec = SyntheticSceneSpec(seed=11)
    clips = [to_unit(derive_low(render_clip(spec, i, 64, (128, 128)), 4)) for i in range(6)]
    mean, _ = feature_distance_curve(clips)
    rho = spearman(np.arange(64), mean)
    assert rho > 0.9, rho


def test_write_report(tmp_path):
    r = write_report(tmp_path / "r" / "m.json", "fvd16", 1.5, seed=3, extractor="x", n=4)
    import json

    assert json.loads((tmp_path / "r" / "m.json").read_text()) == r
