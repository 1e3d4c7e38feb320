"""Joint robot-world / hand-eye calibration.

Solves for the two fixed transforms of the sandwich model

    P_calib_i  ~  T1 o G_i o T2

where ``G_i`` is the forward-kinematics gripper pose (gripper -> sawyer),
``T1`` maps the robot base space into the calibration-pattern space and
``T2`` maps the camera space into the gripper space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMotionError, InsufficientDataError, ValidationError
from .geom import (DEFAULT_RHO, DEFAULT_RHO_SCALE, Pose, compose, inverse, quat_conj, quat_log,
                   quat_mul, retract)
from .kinematics import BASE_SPACE, GRIPPER_SPACE, ArmModel, as_joint_angles, forward_kinematics

PATTERN_SPACE = "pattern"
CAMERA_SPACE = "camera"

JACOBIAN_STEP = 1e-6
MIN_SAMPLES = 3
COAXIAL_TOL = 1e-3  # rad


@dataclass(frozen=True, eq=False)
class CalibSample:
    A: np.ndarray
    P_calib: Pose  # camera -> pattern
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "A", as_joint_angles(self.A))
        if abs(self.P_calib.s - 1.0) > 1e-9:
            raise ValidationError(f"calibration pose must be rigid, got scale {self.P_calib.s}")
        if (self.P_calib.source, self.P_calib.target) != (CAMERA_SPACE, PATTERN_SPACE):
            raise ValidationError(
                f"calibration pose must map {CAMERA_SPACE}->{PATTERN_SPACE}, "
                f"got {self.P_calib.source}->{self.P_calib.target}")


@dataclass(frozen=True)
class SolveOptions:
    rho: float = DEFAULT_RHO
    scale_free: bool = False
    max_iter: int = 100
    restarts: int = 8
    seed: int = 0
    rho_scale: float = DEFAULT_RHO_SCALE


@dataclass(eq=False)
class ExtrinsicsPair:
    T1: Pose  # sawyer -> pattern
    T2: Pose  # camera -> gripper
    final_rms: float  # RMS of translation residual components, mm
    iterations: int
    converged: bool
    restart_index: int = 0
    objective: float = 0.0
    rot_rms_rad: float = 0.0
    history: list = field(default_factory=list)

    def to_json(self):
        return {
            "T1": self.T1.to_json(),
            "T2": self.T2.to_json(),
            "rms_mm": float(self.final_rms),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "restart_index": int(self.restart_index),
        }

    @classmethod
    def from_json(cls, obj):
        keys = {"T1", "T2", "rms_mm", "iterations", "converged", "restart_index"}
        if not isinstance(obj, dict) or set(obj) != keys:
            raise ValidationError(f"solver report must have exactly the keys {sorted(keys)}")
        return cls(Pose.from_json(obj["T1"]), Pose.from_json(obj["T2"]), float(obj["rms_mm"]),
                   int(obj["iterations"]), bool(obj["converged"]), int(obj["restart_index"]))


def _check_roles(T1, T2):
    if (T1.source, T1.target) != (BASE_SPACE, PATTERN_SPACE):
        raise ValidationError(f"T1 must map {BASE_SPACE}->{PATTERN_SPACE}, got {T1.source}->{T1.target}")
    if (T2.source, T2.target) != (CAMERA_SPACE, GRIPPER_SPACE):
        raise ValidationError(f"T2 must map {CAMERA_SPACE}->{GRIPPER_SPACE}, got {T2.source}->{T2.target}")


def predict_camera_pose(T1: Pose, T2: Pose, model: ArmModel, A) -> Pose:
    """Camera pose ``T1 o f_FK(A) o T2``; with identity ``T1`` this is the pose in base space."""
    return compose(compose(T1, forward_kinematics(model, A)), T2)


# -- vectorised residual -----------------------------------------------------

def _qmul_batch(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def _qlog_batch(q):
    q = np.where(q[:, :1] < 0, -q, q)
    v = q[:, 1:]
    n = np.linalg.norm(v, axis=1)
    small = n < 1e-12
    safe_n = np.where(small, 1.0, n)
    factor = np.where(small, 2.0 / q[:, 0], 2.0 * np.arctan2(n, q[:, 0]) / safe_n)
    return factor[:, None] * v


class _Problem:
    """Sample data in array form so one residual evaluation is a few numpy calls."""

    def __init__(self, samples, model, rho, scale_free, rho_scale):
        G = [forward_kinematics(model, s.A) for s in samples]
        self.qG = np.array([g.q for g in G])
        self.RG = np.array([g.R for g in G])
        self.tG = np.array([g.t for g in G])
        self.G = G
        self.qM_conj = np.array([quat_conj(s.P_calib.q) for s in samples])
        self.tM = np.array([s.P_calib.t for s in samples])
        self.sM = np.array([s.P_calib.s for s in samples])
        self.rho = float(rho)
        self.rho_scale = float(rho_scale)
        self.scale_free = scale_free
        self.n = len(samples)

    def components(self, T1, T2):
        R1 = T1.R
        t_pred = T1.s * ((self.RG @ T2.t + self.tG) @ R1.T) + T1.t
        q_pred = _qmul_batch(_qmul_batch(T1.q[None, :], self.qG), T2.q[None, :])
        rot = _qlog_batch(_qmul_batch(self.qM_conj, q_pred))
        parts = [t_pred - self.tM, self.rho * rot]
        if self.scale_free:
            parts.append(self.rho_scale * np.log(T1.s * T2.s / self.sM)[:, None])
        return np.concatenate(parts, axis=1)

    def residual(self, T1, T2):
        return self.components(T1, T2).reshape(-1)


def residual_vector(T1, T2, samples, model, rho=DEFAULT_RHO, scale_free=False,
                    rho_scale=DEFAULT_RHO_SCALE):
    """Stacked per-sample pose residuals (6 per sample, 7 when ``scale_free``)."""
    if len(samples) < 1:
        raise InsufficientDataError("need at least one calibration sample")
    _check_roles(T1, T2)
    return _Problem(samples, model, rho, scale_free, rho_scale).residual(T1, T2)


def objective(T1, T2, samples, model, rho=DEFAULT_RHO, scale_free=False):
    r = residual_vector(T1, T2, samples, model, rho, scale_free)
    return 0.5 * float(r @ r)


# -- solver ------------------------------------------------------------------

def check_rotation_diversity(gripper_poses, tol=COAXIAL_TOL):
    """Raise unless the relative gripper rotations involve two non-parallel axes."""
    ref = gripper_poses[0].q
    axes = []
    for g in gripper_poses[1:]:
        w = quat_log(quat_mul(quat_conj(ref), g.q))
        ang = np.linalg.norm(w)
        if ang > tol:
            axes.append(w / ang)
    if not axes:
        raise DegenerateMotionError("gripper never rotates relative to the first sample")
    a0 = axes[0]
    for a in axes[1:]:
        c = min(1.0, abs(float(a0 @ a)))
        if np.arccos(c) > tol:
            return
    raise DegenerateMotionError("all relative gripper rotations share one axis")


def _split(delta, dim):
    return delta[:dim], delta[dim:]


def _lm(problem, T1, T2, opts):
    dim = 7 if opts.scale_free else 6
    npar = 2 * dim

    def at(delta):
        d1, d2 = _split(delta, dim)
        return retract(T1c, d1), retract(T2c, d2)

    T1c, T2c = T1, T2
    r = problem.residual(T1c, T2c)
    f = 0.5 * float(r @ r)
    history = [f]
    mu = 1e-3
    converged = f == 0.0
    it = 0
    while not converged and it < opts.max_iter:
        it += 1
        J = np.empty((r.size, npar))
        for k in range(npar):
            e = np.zeros(npar)
            e[k] = JACOBIAN_STEP
            rp = problem.residual(*at(e))
            rm = problem.residual(*at(-e))
            J[:, k] = (rp - rm) / (2.0 * JACOBIAN_STEP)
        g = J.T @ r
        H = J.T @ J
        accepted = False
        while mu < 1e16:
            delta = np.linalg.solve(H + mu * np.eye(npar), -g)
            T1n, T2n = at(delta)
            rn = problem.residual(T1n, T2n)
            fn = 0.5 * float(rn @ rn)
            step = float(np.linalg.norm(delta))
            if fn < f:
                accepted = True
                decrease = (f - fn) / f
                T1c, T2c, r, f = T1n, T2n, rn, fn
                history.append(f)
                mu = max(mu / 10.0, 1e-15)
                if step < 1e-10 or decrease < 1e-12 or f == 0.0:
                    converged = True
                break
            if step < 1e-10:
                # no descent left at this resolution: we are at the minimum
                converged = True
                break
            mu *= 10.0
        if not accepted and not converged:
            break
    return T1c, T2c, f, it, converged, history


def initial_guess(samples, gripper_poses, T2_rot=None):
    """``T2 = identity`` (optionally rotated), ``T1 = P_calib_0 o (G_0 o T2)^-1``."""
    q2 = np.array([1.0, 0, 0, 0]) if T2_rot is None else T2_rot
    T2 = Pose(q2, np.zeros(3), 1.0, CAMERA_SPACE, GRIPPER_SPACE)
    T1 = compose(samples[0].P_calib, inverse(compose(gripper_poses[0], T2)))
    return T1, T2


def solve_extrinsics(samples, model, options: SolveOptions | None = None) -> ExtrinsicsPair:
    opts = options or SolveOptions()
    if len(samples) < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} calibration samples, got {len(samples)}")
    problem = _Problem(samples, model, opts.rho, opts.scale_free, opts.rho_scale)
    check_rotation_diversity(problem.G)

    rng = np.random.default_rng(opts.seed)
    best = None
    for k in range(opts.restarts + 1):
        rot = None
        if k > 0:
            q = rng.normal(size=4)
            rot = q / np.linalg.norm(q)
        T1, T2 = initial_guess(samples, problem.G, rot)
        T1, T2, f, it, conv, hist = _lm(problem, T1, T2, opts)
        if best is None or f < best[2]:
            best = (T1, T2, f, it, conv, hist, k)

    T1, T2, f, it, conv, hist, k = best
    comps = problem.components(T1, T2)
    trans_rms = float(np.sqrt(np.mean(comps[:, :3] ** 2)))
    rot_rms = float(np.sqrt(np.mean(comps[:, 3:6] ** 2))) / opts.rho
    return ExtrinsicsPair(T1, T2, trans_rms, it, conv, k, f, rot_rms, hist)


def samples_from_truth(T1, T2, model, joint_sets, t0=0, dt=1):
    """Noise-free samples generated from known extrinsics (test and simulation helper)."""
    out = []
    for i, A in enumerate(joint_sets):
        P = predict_camera_pose(T1, T2, model, A)
        out.append(CalibSample(A, P, t0 + i * dt))
    return out

