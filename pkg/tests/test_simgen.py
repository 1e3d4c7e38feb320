import dataclasses

import numpy as np
import pytest

from slamacc.calib import predict_camera_pose
from slamacc.errors import ValidationError
from slamacc.evaluate import estimate_scale
from slamacc.geom import inverse
from slamacc.raycast import ground_truth_depth_map
from slamacc.simgen import (Noise, box_depth, build_preset, generate_trajectory, preset, simulate,
                            synthesize_keyframe)


@pytest.fixture(scope="module")
def cfg():
    return preset("arc")


def _two_point(cfg, seconds=1.0, joint_hz=100.0, frame_hz=25.0, same=False):
    a = cfg.waypoints[0]
    b = a if same else cfg.waypoints[-1]
    return dataclasses.replace(cfg, waypoints=np.stack([a, b]), segment_duration_s=seconds,
                               joint_rate_hz=joint_hz, frame_rate_hz=frame_hz)


def test_fence_post_counts(cfg):
    joints, frames = generate_trajectory(_two_point(cfg))
    assert len(joints) == 101 and len(frames) == 26
    assert frames.t[0] >= joints.t[0] and frames.t[-1] <= joints.t[-1]
    assert np.all(np.diff(joints.t) > 0) and np.all(np.diff(frames.t) > 0)


def test_identical_waypoints_constant_log(cfg):
    joints, _ = generate_trajectory(_two_point(cfg, same=True))
    assert np.all(joints.angles == joints.angles[0])


def test_too_few_waypoints(cfg):
    with pytest.raises(ValidationError):
        generate_trajectory(dataclasses.replace(cfg, waypoints=np.zeros((0, 7))))
    with pytest.raises(ValidationError):
        generate_trajectory(dataclasses.replace(cfg, waypoints=np.zeros((1, 7))))


def test_config_validation(cfg):
    with pytest.raises(ValidationError):
        dataclasses.replace(cfg, slam_scale=0.0)
    with pytest.raises(ValidationError):
        dataclasses.replace(cfg, noise=Noise(depth_sigma_mm=-1))
    with pytest.raises(ValidationError):
        dataclasses.replace(cfg, frame_rate_hz=0)


def test_presets_match_builder():
    for name in ("arc", "raster"):
        a, b = preset(name), build_preset(name)
        assert a.to_json() == b.to_json()


def test_cube_sits_on_pattern(cfg):
    assert cfg.mesh().vertices[:, 2].min() == 0.0


def test_zero_noise_unit_scale_is_exact(cfg):
    c = dataclasses.replace(cfg, slam_scale=1.0)
    kf, truth = synthesize_keyframe(c, c.waypoints[1], 0, rng=np.random.default_rng(0))
    m = truth.mask
    assert m.sum() > 500
    # exact up to the rounding of the double reciprocal (at most one ulp each way)
    rel = np.abs(1.0 / kf.idepth[m] - truth.depth[m]) / truth.depth[m]
    assert rel.max() <= 2 * np.finfo(float).eps
    assert np.all(kf.idepth[~m] == 0)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0, 10.0])
def test_injected_scale_recovered(cfg, s):
    c = dataclasses.replace(cfg, slam_scale=s, n_keyframes=4)
    ds = simulate(c)
    for kf, tr in zip(ds.keyframes, ds.truth):
        lam = estimate_scale(kf.depths(), tr.depth).lam
        assert abs(lam / s - 1) < 1e-9
    # SLAM depth 1/idepth is depth/s, so depth * idepth recovers s
    kf = ds.keyframes[0]
    assert np.isclose(np.nanmean(ds.truth[0].depth[kf.valid] * kf.idepth[kf.valid]), s, rtol=1e-12)


def test_pose_estimate_carries_inverse_scale(cfg):
    c = dataclasses.replace(cfg, slam_scale=2.0)
    kf, tr = synthesize_keyframe(c, c.waypoints[0], 0, rng=np.random.default_rng(0))
    assert np.isclose(kf.pose_est.s, 0.5)
    assert np.allclose(kf.pose_est.t, tr.pose.t / 2.0)
    assert (kf.pose_est.source, kf.pose_est.target) == ("camera", "slam")


def test_slab_truth_matches_mesh_raycast(cfg):
    model = cfg.model()
    mesh = cfg.mesh()
    rng = np.random.default_rng(1)
    for A in [cfg.waypoints[0], cfg.waypoints[1], cfg.waypoints[1] + rng.uniform(-0.05, 0.05, 7)]:
        P = predict_camera_pose(cfg.T1, cfg.T2, model, A)
        slab = box_depth(P, cfg.intrinsics, cfg.cube_side_mm, cfg.cube_center_xy_mm, cfg.cube_yaw_rad)
        mt = ground_truth_depth_map(P, cfg.intrinsics, mesh).values
        both = np.isfinite(slab) & np.isfinite(mt)
        assert np.max(np.abs(slab[both] - mt[both])) < 1e-9
        # hit/miss disagreement can only come from rays grazing a cube edge
        differ = np.isfinite(slab) != np.isfinite(mt)
        assert differ.sum() <= 2


def test_depth_noise_statistic(cfg):
    c = dataclasses.replace(cfg, slam_scale=1.0, noise=Noise(depth_sigma_mm=1.0), n_keyframes=10)
    ds = simulate(c)
    e = np.concatenate([tr.depth[tr.mask] - kf.depths()[tr.mask] for kf, tr in zip(ds.keyframes, ds.truth)])
    assert e.size >= 10_000
    assert abs(np.mean(np.abs(e)) / np.sqrt(2 / np.pi) - 1) < 0.1
    kf = ds.keyframes[0]
    v = kf.valid
    assert np.allclose(kf.ivar[v], kf.idepth[v] ** 4)


def test_simulation_is_deterministic(cfg):
    c = dataclasses.replace(cfg, noise=Noise(1.0, 0.5, 1e-3), n_keyframes=3)
    a, b = simulate(c), simulate(c)
    for ka, kb in zip(a.keyframes, b.keyframes):
        assert np.array_equal(ka.idepth, kb.idepth)
        assert ka.pose_est.to_json() == kb.pose_est.to_json()
    assert [s.P_calib.to_json() for s in a.calib] == [s.P_calib.to_json() for s in b.calib]


def test_revisions_share_timestamps(cfg):
    ds = simulate(dataclasses.replace(cfg, n_keyframes=2, revisions=2))
    keys = [kf.key for kf in ds.keyframes]
    assert keys == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert ds.keyframes[0].t == ds.keyframes[1].t


def test_calibration_samples_are_camera_poses(cfg):
    ds = simulate(dataclasses.replace(cfg, n_keyframes=1))
    model = cfg.model()
    assert len(ds.calib) == cfg.calib_samples
    for s in ds.calib[:5]:
        P = predict_camera_pose(cfg.T1, cfg.T2, model, s.A)
        assert np.allclose(P.t, s.P_calib.t) and np.allclose(P.q, s.P_calib.q)


def test_camera_sees_cube_at_every_keyframe(cfg):
    ds = simulate(cfg)
    assert len(ds.keyframes) == 20
    for tr in ds.truth:
        assert tr.mask.sum() > 100
        # the camera stays in front of the cube (positive depth everywhere it hits)
        assert np.all(tr.depth[np.isfinite(tr.depth)] > 0)
        assert inverse(tr.pose).s == 1.0
