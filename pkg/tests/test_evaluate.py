import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import golden_section
from slamacc.errors import ValidationError
from slamacc.evaluate import (KeyFrame, PointErrors, apply_scale, assemble_point_cloud, estimate_scale,
                              effective_region, keyframe_error_stats, median_downsample, point_depth_errors,
                              pixelwise_error_map)
from slamacc.geom import Pose
from slamacc.raycast import DepthMap, Intrinsics


def _kf(idepth, K=None):
    idepth = np.asarray(idepth, dtype=float)
    return KeyFrame(0, 0, 0, Pose.identity(), idepth, np.zeros_like(idepth), K)


# -- scale ---------------------------------------------------------------------

def test_scale_exact_ratio():
    assert estimate_scale([1, 2, 3], [2, 4, 6]).lam == 2.0


def test_scale_identity():
    s = estimate_scale([5], [5])
    assert s.lam == 1.0 and s.n_pairs == 1


def test_scale_least_squares_example():
    s = estimate_scale([1, 2], [2, 5])
    assert np.isclose(s.lam, 2.4, rtol=0, atol=1e-15)
    f = lambda lam: (2 - lam) ** 2 + (5 - 2 * lam) ** 2  # noqa: E731
    grid = np.linspace(1e-3, 10, 100_001)
    assert abs(grid[np.argmin(f(grid))] - 2.4) < 1e-3
    assert all(f(s.lam) <= f(x) for x in grid)


def test_scale_skips_invalid_pairs():
    s = estimate_scale([1, np.nan, 2, -1, 3], [2, 9, 4, 9, np.nan])
    assert s.n_pairs == 2 and s.lam == 2.0


def test_scale_errors():
    with pytest.raises(ValidationError):
        estimate_scale([np.nan], [1.0])
    with pytest.raises(ValidationError):
        estimate_scale([1.0, 2.0], [1.0])
    with pytest.raises(ValidationError):
        estimate_scale([1.0], [1.0], method="mode")
    with pytest.raises(ValidationError):
        estimate_scale([1.0], [1.0], method="weighted")


def test_scale_alternatives():
    assert estimate_scale([1, 2, 4], [2, 4, 100], method="median").lam == 2.0
    var = np.array([1.0, 4.0])
    lam = estimate_scale([1, 2], [2, 5], method="weighted", var=var).lam
    assert np.isclose(lam, (1 * 2 / 1 + 2 * 5 / 4) / (1 / 1 + 4 / 4))


def test_scale_is_global_minimiser():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = rng.integers(1, 50)
        delta = rng.uniform(0.1, 10, n)
        d = rng.uniform(0.1, 3) * delta + rng.normal(scale=0.5, size=n)
        lam = estimate_scale(delta, d).lam
        f = lambda x: float(np.sum((d - x * delta) ** 2))  # noqa: E731
        _, fmin = golden_section(f, 1e-6, 10 * lam + 10)
        assert fmin >= f(lam) - 1e-12 * max(1.0, f(lam))


# -- apply_scale / errors ---------------------------------------------------------

def test_apply_scale_examples():
    kf = _kf([[0.01, 0.0, -1.0, np.nan]])
    d = apply_scale(kf, 2.0).values
    assert d[0, 0] == 200.0
    assert np.isnan(d[0, 1:]).all()
    assert apply_scale(kf, 1.0).values[0, 0] == 100.0
    with pytest.raises(ValidationError):
        apply_scale(kf, 0.0)


def test_point_errors_examples():
    e = point_depth_errors(DepthMap([[10.0]]), DepthMap([[9.0]]))
    assert e.e.tolist() == [1.0]
    same = DepthMap(np.arange(1.0, 7.0).reshape(2, 3))
    assert np.all(point_depth_errors(same, same).e == 0)
    gt = DepthMap([[np.nan, 5.0, 7.0]])
    sl = DepthMap([[4.0, 5.0, np.nan]])
    pe = point_depth_errors(gt, sl)
    assert len(pe) == 1 and pe.slam_only == 1 and pe.gt_only == 1
    with pytest.raises(ValidationError):
        point_depth_errors(DepthMap(np.ones((2, 2))), DepthMap(np.ones((2, 3))))


# -- per-keyframe stats -----------------------------------------------------------

def test_stats_examples():
    s = keyframe_error_stats([1, 2, 3])
    assert (s.mean, s.variance, s.count) == (2.0, 1.0, 3)
    s = keyframe_error_stats([-1, 1])
    assert (s.mean, s.variance) == (0.0, 2.0)
    s = keyframe_error_stats([5])
    assert (s.mean, s.variance, s.degenerate) == (5.0, 0.0, True)
    with pytest.raises(ValidationError):
        keyframe_error_stats([])


def test_stats_linearity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.normal(size=rng.integers(1, 30))
        b = rng.normal(size=rng.integers(1, 30))
        whole = keyframe_error_stats(np.concatenate([a, b])).mean
        parts = (len(a) * keyframe_error_stats(a).mean + len(b) * keyframe_error_stats(b).mean) / (len(a) + len(b))
        assert abs(whole - parts) < 1e-12


# -- pixel map ---------------------------------------------------------------------

def test_pixel_map_examples():
    recs = [PointErrors(np.array([0]), np.array([0]), np.array([1.0])),
            PointErrors(np.array([0, 1]), np.array([0, 1]), np.array([-1.0, 3.0]))]
    mean, count = pixelwise_error_map(recs, 2, 2)
    assert mean[0, 0] == 1.0 and count[0, 0] == 2
    assert mean[1, 1] == 3.0 and count[1, 1] == 1
    assert np.isnan(mean[0, 1]) and count[0, 1] == 0
    assert count.sum() == 3


def test_pixel_map_rejects_out_of_raster():
    with pytest.raises(ValidationError):
        pixelwise_error_map([(np.array([2]), np.array([0]), np.array([1.0]))], 2, 2)


def test_pixel_map_nonnegative_and_counts():
    rng = np.random.default_rng(2)
    recs = [(rng.integers(0, 8, 50), rng.integers(0, 10, 50), rng.normal(size=50)) for _ in range(5)]
    mean, count = pixelwise_error_map(recs, 10, 8)
    assert np.all(mean[np.isfinite(mean)] >= 0)
    assert count.sum() == 250


# -- median downsample / effective region ---------------------------------------------

def test_median_examples():
    m = np.full((7, 9), 4.2)
    out = median_downsample(m, 3)
    assert out.shape == (3, 3) and np.all(out == 4.2)
    x = np.random.default_rng(3).normal(size=(5, 6))
    assert np.array_equal(median_downsample(x, 1), x)
    block = np.array([[1, 1, 1], [1, 1, 1], [1, 1, 100.0]])
    assert median_downsample(block, 3)[0, 0] == sorted(block.ravel())[4] == 1.0
    with pytest.raises(ValidationError):
        median_downsample(block, 2)


def test_median_handles_nan_and_ragged_edges():
    x = np.full((4, 5), np.nan)
    x[0, 0] = 2.0
    x[3, 4] = 7.0
    out = median_downsample(x, 3)
    assert out.shape == (2, 2)
    assert out[0, 0] == 2.0 and out[1, 1] == 7.0
    assert np.isnan(out[0, 1]) and np.isnan(out[1, 0])


def test_median_within_block_bounds():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(20, 23))
    x[rng.random(x.shape) < 0.3] = np.nan
    k = 5
    out = median_downsample(x, k)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            blk = x[i * k:(i + 1) * k, j * k:(j + 1) * k]
            vals = blk[np.isfinite(blk)]
            if vals.size:
                assert vals.min() <= out[i, j] <= vals.max()
                assert out[i, j] == np.median(vals)
            else:
                assert np.isnan(out[i, j])


def test_effective_region_examples():
    mask, frac = effective_region(np.array([[1.0, 5.0], [2.0, 9.0]]), 3.0)
    assert mask.tolist() == [[True, False], [True, False]] and frac == 0.5
    mask, frac = effective_region(np.full((2, 2), 0.5), 1.0)
    assert mask.all() and frac == 1.0
    mask, frac = effective_region(np.full((2, 2), np.nan), 1.0)
    assert not mask.any() and frac == 0.0
    with pytest.raises(ValidationError):
        effective_region(np.zeros((1, 1)), 0.0)


# -- point cloud -------------------------------------------------------------------

def test_cloud_principal_pixel():
    K = Intrinsics(100, 100, 2, 1, 5, 3)
    idepth = np.zeros(K.shape)
    idepth[1, 2] = 1 / 250.0
    pts, tag = assemble_point_cloud(_kf(idepth, K), Pose.identity(), 2.0)
    assert pts.shape == (1, 3) and np.allclose(pts[0], [0, 0, 500])
    assert np.isnan(tag[0])


def test_cloud_empty():
    K = Intrinsics(100, 100, 2, 1, 5, 3)
    pts, tag = assemble_point_cloud(_kf(np.zeros(K.shape), K), Pose.identity(), 1.0)
    assert pts.shape == (0, 3) and tag.shape == (0,)
    with pytest.raises(ValidationError):
        assemble_point_cloud(_kf(np.zeros(K.shape), K), Pose.identity(), -1.0)


# -- reparameterisation invariance -----------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.05, 50.0), min_size=1, max_size=40),
       st.floats(0.01, 100.0), st.sampled_from([0.1, 10.0, 3.7]))
def test_prop_scale_invariance(delta, true_scale, c):
    delta = np.array(delta)
    d_gt = true_scale * delta * (1 + 0.05 * np.sin(np.arange(len(delta))))
    idepth = (1 / delta)[None, :]
    kf_a, kf_b = _kf(idepth), _kf(idepth / c)
    la = estimate_scale(kf_a.depths(), d_gt[None, :]).lam
    lb = estimate_scale(kf_b.depths(), d_gt[None, :]).lam
    ea = point_depth_errors(DepthMap(d_gt[None, :]), apply_scale(kf_a, la)).e
    eb = point_depth_errors(DepthMap(d_gt[None, :]), apply_scale(kf_b, lb)).e
    assert np.isclose(la / lb, c, rtol=1e-12)
    assert np.max(np.abs(ea - eb)) <= 1e-12 * max(1.0, np.abs(d_gt).max())
