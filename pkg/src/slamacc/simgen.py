"""Synthetic datasets: a virtual arm carrying a camera around a cube on the pattern.

Everything downstream (calibration, ground-truth depth, scale, error
statistics) can be checked against the truth written next to the data.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion

from .calib import CAMERA_SPACE, PATTERN_SPACE, CalibSample, predict_camera_pose
from .errors import ValidationError
from .evaluate import KeyFrame
from .geom import Pose, compose, inverse, quat_from_matrix, retract
from .kinematics import BASE_SPACE, GRIPPER_SPACE, ArmModel, default_model, forward_kinematics, load_model
from .raycast import Intrinsics, cube_mesh, pixel_directions
from .sync import FrameLog, JointLog

log = logging.getLogger(__name__)

SLAM_SPACE = "slam"
PRESETS = ("arc", "raster")


@dataclass(frozen=True)
class Noise:
    depth_sigma_mm: float = 0.0
    pose_sigma_t_mm: float = 0.0
    pose_sigma_r_rad: float = 0.0


@dataclass(frozen=True, eq=False)
class SimConfig:
    T1: Pose  # sawyer -> pattern
    T2: Pose  # camera -> gripper
    intrinsics: Intrinsics
    waypoints: np.ndarray  # (n, 7) rad
    calib_center: np.ndarray  # (7,) rad
    arm: str = "default"
    cube_side_mm: float = 80.0
    cube_center_xy_mm: tuple = (0.0, 0.0)
    cube_yaw_rad: float = 0.0
    segment_duration_s: float = 2.0
    joint_rate_hz: float = 100.0
    frame_rate_hz: float = 25.0
    n_keyframes: int = 20
    revisions: int = 1
    edge_band_px: int = 6
    noise: Noise = field(default_factory=Noise)
    slam_scale: float = 1.0
    calib_samples: int = 30
    calib_spread_rad: float = 0.3
    seed: int = 0
    base_dir: Path | None = None  # resolves a relative arm path

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or (wp.size and wp.shape[1] != 7):
            raise ValidationError("waypoints must be a list of 7-vectors")
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "calib_center", np.asarray(self.calib_center, dtype=float).reshape(7))
        if self.joint_rate_hz <= 0 or self.frame_rate_hz <= 0:
            raise ValidationError("rates must be positive")
        n = self.noise
        if min(n.depth_sigma_mm, n.pose_sigma_t_mm, n.pose_sigma_r_rad) < 0:
            raise ValidationError("noise levels must be non-negative")
        if not self.slam_scale > 0:
            raise ValidationError("injected SLAM scale must be positive")
        if self.segment_duration_s <= 0:
            raise ValidationError("segment duration must be positive")
        if self.n_keyframes < 1 or self.revisions < 1 or self.edge_band_px < 1:
            raise ValidationError("keyframe count, revisions and edge band must be >= 1")
        if (self.T1.source, self.T1.target) != (BASE_SPACE, PATTERN_SPACE):
            raise ValidationError("T1 must map sawyer->pattern")
        if (self.T2.source, self.T2.target) != (CAMERA_SPACE, GRIPPER_SPACE):
            raise ValidationError("T2 must map camera->gripper")

    def model(self) -> ArmModel:
        if self.arm == "default":
            return default_model()
        p = Path(self.arm)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return load_model(p)

    def mesh(self):
        return cube_mesh(self.cube_side_mm, self.cube_center_xy_mm, self.cube_yaw_rad)

    def to_json(self):
        return {
            "arm": self.arm,
            "T1": self.T1.to_json(),
            "T2": self.T2.to_json(),
            "cube": {"side_mm": self.cube_side_mm, "center_xy_mm": list(self.cube_center_xy_mm),
                     "yaw_rad": self.cube_yaw_rad},
            "intrinsics": self.intrinsics.to_json(),
            "waypoints_rad": self.waypoints.tolist(),
            "segment_duration_s": self.segment_duration_s,
            "joint_rate_hz": self.joint_rate_hz,
            "frame_rate_hz": self.frame_rate_hz,
            "n_keyframes": self.n_keyframes,
            "revisions": self.revisions,
            "edge_band_px": self.edge_band_px,
            "noise": {"depth_sigma_mm": self.noise.depth_sigma_mm,
                      "pose_sigma_t_mm": self.noise.pose_sigma_t_mm,
                      "pose_sigma_r_rad": self.noise.pose_sigma_r_rad},
            "slam_scale": self.slam_scale,
            "calibration": {"n_samples": self.calib_samples, "center_rad": self.calib_center.tolist(),
                            "spread_rad": self.calib_spread_rad},
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj, base_dir=None):
        keys = {"arm", "T1", "T2", "cube", "intrinsics", "waypoints_rad", "segment_duration_s",
                "joint_rate_hz", "frame_rate_hz", "n_keyframes", "revisions", "edge_band_px",
                "noise", "slam_scale", "calibration", "seed"}
        if not isinstance(obj, dict):
            raise ValidationError("simulation config must be a JSON object")
        unknown = set(obj) - keys
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        missing = keys - set(obj)
        if missing:
            raise ValidationError(f"missing config keys {sorted(missing)}")
        cube, noise, cal = obj["cube"], obj["noise"], obj["calibration"]
        _exact_keys(cube, {"side_mm", "center_xy_mm", "yaw_rad"}, "cube")
        _exact_keys(noise, {"depth_sigma_mm", "pose_sigma_t_mm", "pose_sigma_r_rad"}, "noise")
        _exact_keys(cal, {"n_samples", "center_rad", "spread_rad"}, "calibration")
        return cls(
            T1=Pose.from_json(obj["T1"]),
            T2=Pose.from_json(obj["T2"]),
            intrinsics=Intrinsics.from_json(obj["intrinsics"]),
            waypoints=np.asarray(obj["waypoints_rad"], dtype=float).reshape(-1, 7) if obj["waypoints_rad"] else np.zeros((0, 7)),
            calib_center=cal["center_rad"],
            arm=str(obj["arm"]),
            cube_side_mm=float(cube["side_mm"]),
            cube_center_xy_mm=tuple(float(v) for v in cube["center_xy_mm"]),
            cube_yaw_rad=float(cube["yaw_rad"]),
            segment_duration_s=float(obj["segment_duration_s"]),
            joint_rate_hz=float(obj["joint_rate_hz"]),
            frame_rate_hz=float(obj["frame_rate_hz"]),
            n_keyframes=int(obj["n_keyframes"]),
            revisions=int(obj["revisions"]),
            edge_band_px=int(obj["edge_band_px"]),
            noise=Noise(float(noise["depth_sigma_mm"]), float(noise["pose_sigma_t_mm"]),
                        float(noise["pose_sigma_r_rad"])),
            slam_scale=float(obj["slam_scale"]),
            calib_samples=int(cal["n_samples"]),
            calib_spread_rad=float(cal["spread_rad"]),
            seed=int(obj["seed"]),
            base_dir=Path(base_dir) if base_dir is not None else None,
        )


def _exact_keys(obj, keys, what):
    if not isinstance(obj, dict) or set(obj) != keys:
        raise ValidationError(f"{what} must have exactly the keys {sorted(keys)}")


def load_config(path):
    path = Path(path)
    with open(path) as f:
        return SimConfig.from_json(json.load(f), base_dir=path.parent)


def preset(name="arc") -> SimConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("slamacc").joinpath(f"data/sim_{name}.json").read_text()
    return SimConfig.from_json(json.loads(text))


# -- scene construction helpers ------------------------------------------------

def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera -> pattern pose of a camera at ``eye`` looking at ``target`` (x right, y down)."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    return Pose(quat_from_matrix(R), eye, 1.0, CAMERA_SPACE, PATTERN_SPACE)


def base_transform_for_view(model, A, T2, camera_pose) -> Pose:
    """The ``T1`` that puts the camera at ``camera_pose`` when the arm is at ``A``."""
    return compose(camera_pose, inverse(compose(forward_kinematics(model, A), T2)))


# -- trajectory ---------------------------------------------------------------

def _angles_at(cfg, t_s):
    """Piecewise-linear joint angles along the waypoints at time ``t_s`` (seconds)."""
    wp = cfg.waypoints
    seg = cfg.segment_duration_s
    x = t_s / seg
    i = min(int(math.floor(x)), len(wp) - 2)
    frac = x - i
    return wp[i] + frac * (wp[i + 1] - wp[i])


def _stamps(duration_s, rate_hz):
    n = int(math.floor(duration_s * rate_hz + 1e-9)) + 1
    return [round(k * 1e9 / rate_hz) for k in range(n)]


def generate_trajectory(cfg: SimConfig):
    """Joint log at the joint rate and frame log at the frame rate over the waypoint path."""
    if len(cfg.waypoints) < 2:
        raise ValidationError("trajectory needs at least two waypoints")
    duration = (len(cfg.waypoints) - 1) * cfg.segment_duration_s
    if duration * cfg.joint_rate_hz < 1 or duration * cfg.frame_rate_hz < 1:
        raise ValidationError("trajectory shorter than one sample interval")
    jt = _stamps(duration, cfg.joint_rate_hz)
    ft = _stamps(duration, cfg.frame_rate_hz)
    if ft[-1] > jt[-1]:
        raise ValidationError("frame clock runs past the joint log")
    joints = JointLog(np.array(jt), np.array([_angles_at(cfg, t / 1e9) for t in jt]), cfg.joint_rate_hz)
    frames = FrameLog(np.array(ft), np.arange(len(ft)))
    return joints, frames


def keyframe_frame_indices(cfg, n_frames):
    k = min(cfg.n_keyframes, n_frames)
    return np.unique(np.round(np.linspace(0, n_frames - 1, k)).astype(int))


# -- keyframes ------------------------------------------------------------------

def box_depth(P: Pose, K: Intrinsics, side, center_xy, yaw):
    """Z-depth raster of the cube by slab intersection (independent of the mesh path)."""
    rows, cols = np.indices(K.shape).reshape(2, -1)
    d_cam = pixel_directions(K, rows, cols)
    c, s = math.cos(yaw), math.sin(yaw)
    to_cube = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    centre = np.array([center_xy[0], center_xy[1], side / 2.0])
    o = to_cube @ (P.t - centre)
    d = d_cam @ (to_cube @ P.R).T
    h = side / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    # rays parallel to a slab: inside -> unbounded, outside -> empty
    par = d == 0
    inside = np.abs(o) <= h
    lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = lo.max(axis=1)
    t_far = hi.min(axis=1)
    hit = (t_near <= t_far) & (t_far >= 0)
    t = np.where(t_near >= 0, t_near, t_far)
    depth = np.where(hit, t * d_cam[:, 2], np.nan)
    depth = np.where(depth > 0, depth, np.nan)
    return depth.reshape(K.shape)


def edge_band(hit, width):
    """Pixels of ``hit`` within ``width`` px of its silhouette boundary."""
    interior = binary_erosion(hit, structure=np.ones((3, 3), bool), iterations=width, border_value=0)
    return hit & ~interior


@dataclass(eq=False)
class KeyframeTruth:
    kf_id: int
    revision: int
    A: np.ndarray
    pose: Pose  # true camera -> pattern
    depth: np.ndarray  # true z-depth raster, NaN off the cube
    mask: np.ndarray


def _perturb(P, rng, sigma_t, sigma_r):
    if sigma_t == 0 and sigma_r == 0:
        return P
    xi = np.concatenate([rng.normal(scale=sigma_r, size=3), rng.normal(scale=sigma_t, size=3)])
    return retract(P, xi)


def synthesize_keyframe(cfg: SimConfig, A, kf_id, revision=0, rng=None, model=None, t_ns=0):
    """One SLAM-like keyframe for joint angles ``A`` plus its hidden truth."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    model = model or cfg.model()
    K = cfg.intrinsics
    P = predict_camera_pose(cfg.T1, cfg.T2, model, A)
    depth = box_depth(P, K, cfg.cube_side_mm, cfg.cube_center_xy_mm, cfg.cube_yaw_rad)
    mask = edge_band(np.isfinite(depth), cfg.edge_band_px)
    if not mask.any():
        log.warning("keyframe %d: no pixel sees the cube", kf_id)

    s = cfg.slam_scale
    sigma = cfg.noise.depth_sigma_mm
    idepth = np.zeros(K.shape)
    noisy = depth[mask] + (rng.normal(scale=sigma, size=int(mask.sum())) if sigma > 0 else 0.0)
    with np.errstate(divide="ignore"):
        idepth[mask] = np.where(noisy > 0, s / noisy, 0.0)
    ivar = sigma * sigma * idepth ** 4

    pert = _perturb(P, rng, cfg.noise.pose_sigma_t_mm, cfg.noise.pose_sigma_r_rad)
    to_slam = Pose(np.array([1.0, 0, 0, 0]), np.zeros(3), 1.0 / s, PATTERN_SPACE, SLAM_SPACE)
    pose_est = compose(to_slam, pert)
    kf = KeyFrame(kf_id, revision, int(t_ns), pose_est, idepth, ivar, K)
    return kf, KeyframeTruth(kf_id, revision, np.asarray(A, dtype=float), P, depth, mask)


def calibration_samples(cfg: SimConfig, rng, model=None):
    model = model or cfg.model()
    out = []
    for i in range(cfg.calib_samples):
        A = cfg.calib_center + rng.uniform(-cfg.calib_spread_rad, cfg.calib_spread_rad, size=7)
        P = predict_camera_pose(cfg.T1, cfg.T2, model, A)
        P = _perturb(P, rng, cfg.noise.pose_sigma_t_mm, cfg.noise.pose_sigma_r_rad)
        out.append(CalibSample(A, P, i))
    return out


@dataclass(eq=False)
class SimDataset:
    joints: JointLog
    frames: FrameLog
    keyframes: list
    truth: list
    calib: list
    mesh: object
    model: ArmModel


def simulate(cfg: SimConfig) -> SimDataset:
    """In-memory dataset; ``generate_dataset`` writes the same thing to disk."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng_kf = np.random.default_rng(seeds[0])
    rng_cal = np.random.default_rng(seeds[1])
    model = cfg.model()
    joints, frames = generate_trajectory(cfg)
    kfs, truth = [], []
    for kf_id, fi in enumerate(keyframe_frame_indices(cfg, len(frames))):
        t = int(frames.t[fi])
        A = _angles_at(cfg, t / 1e9)
        for rev in range(cfg.revisions):
            kf, tr = synthesize_keyframe(cfg, A, kf_id, rev, rng_kf, model, t)
            kfs.append(kf)
            truth.append(tr)
    calib = calibration_samples(cfg, rng_cal, model)
    return SimDataset(joints, frames, kfs, truth, calib, cfg.mesh(), model)


def generate_dataset(cfg: SimConfig, out_dir):
    from .io import write_dataset

    return write_dataset(simulate(cfg), cfg, out_dir)


def build_preset(name="arc") -> SimConfig:
    """Construct a shipped preset from scratch (the JSON files in ``data/`` are its output).

    The true base -> pattern transform is chosen so the camera frames the
    cube from about 370 mm when the arm sits at the middle waypoint.
    """
    model = default_model()
    A_mid = np.array([0.2, 0.5, -0.1, 1.1, 0.1, 0.9, 0.3])
    T2 = Pose(np.array([0.99955, 0.025, -0.015, 0.01]), [10.0, 30.0, 80.0], 1.0, CAMERA_SPACE, GRIPPER_SPACE)
    T1 = base_transform_for_view(model, A_mid, T2, look_at([-180.0, -140.0, 300.0], [0.0, 0.0, 40.0]))
    K = Intrinsics(150.0, 150.0, 79.5, 59.5, 160, 120)
    d = np.array([-0.06, 0.04, 0.05, -0.05, 0.06, 0.08, 0.15])
    if name == "arc":
        waypoints = [A_mid - d, A_mid, A_mid + d * np.array([1, -1, 1, 1, -1, 1, -1])]
    elif name == "raster":
        sweep = np.array([0.0, 0.0, 0.0, 0.0, 0.08, 0.0, 0.0])
        step = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.04, 0.0])
        waypoints = [A_mid - sweep - step, A_mid + sweep - step, A_mid + sweep,
                     A_mid - sweep, A_mid - sweep + step, A_mid + sweep + step]
    else:
        raise ValidationError(f"unknown preset {name!r}; choose from {PRESETS}")
    return SimConfig(T1=T1, T2=T2, intrinsics=K, waypoints=np.round(waypoints, 6), calib_center=A_mid,
                     cube_side_mm=80.0, cube_yaw_rad=0.3, slam_scale=2.0, seed=7)
