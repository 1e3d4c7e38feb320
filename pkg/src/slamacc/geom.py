"""Similarity transforms (Sim(3)) with explicit source/target space labels.

A ``Pose`` maps points from ``source`` space into ``target`` space by
``x -> s * R(q) @ x + t``.  Translations are in millimetres.  Quaternions are
stored as ``(w, x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import LabelMismatchError, ValidationError

DEFAULT_RHO = 100.0  # mm per rad
DEFAULT_RHO_SCALE = 1000.0  # mm per unit log-scale


# -- quaternion helpers ------------------------------------------------------

def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R):
    """Shepperd's method; returns the quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        r = np.sqrt(1.0 + tr)
        q = np.array([0.5 * r, (R[2, 1] - R[1, 2]) / (2 * r),
                      (R[0, 2] - R[2, 0]) / (2 * r), (R[1, 0] - R[0, 1]) / (2 * r)])
    else:
        i = k - 1
        j, m = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + R[i, i] - R[j, j] - R[m, m])
        q = np.empty(4)
        q[0] = (R[m, j] - R[j, m]) / (2 * r)
        q[1 + i] = 0.5 * r
        q[1 + j] = (R[j, i] + R[i, j]) / (2 * r)
        q[1 + m] = (R[m, i] + R[i, m]) / (2 * r)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_from_axis_angle(omega):
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    if theta < 1e-12:
        # second-order series keeps tiny steps exact to machine precision
        return _normalize(np.array([1.0 - theta * theta / 8.0, *(0.5 * omega)]))
    half = 0.5 * theta
    return np.array([np.cos(half), *(np.sin(half) / theta * omega)])


def quat_log(q):
    """Axis-angle vector of ``q`` using the sign that gives the smaller angle."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return 2.0 * v / q[0]
    return 2.0 * np.arctan2(n, q[0]) / n * v


def _normalize(q):
    return q / np.linalg.norm(q)


def hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


# -- Pose --------------------------------------------------------------------

def _frozen(a, n):
    arr = np.array(a, dtype=float).reshape(n)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    q: np.ndarray
    t: np.ndarray
    s: float = 1.0
    source: str = ""
    target: str = ""

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(4)
        t = np.array(self.t, dtype=float).reshape(3)
        s = float(self.s)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t)) and np.isfinite(s)):
            raise ValidationError("pose components must be finite")
        nq = np.linalg.norm(q)
        if nq < 1e-12:
            raise ValidationError("quaternion must be non-zero")
        if s <= 0:
            raise ValidationError(f"pose scale must be positive, got {s}")
        if abs(nq - 1.0) > 4 * np.finfo(float).eps:  # keeps already-unit input bit-exact
            q = q / nq
        object.__setattr__(self, "q", _frozen(q, 4))
        object.__setattr__(self, "t", _frozen(t, 3))
        object.__setattr__(self, "s", s)

    @classmethod
    def identity(cls, space=""):
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3), 1.0, space, space)

    @classmethod
    def from_matrix(cls, M, source="", target=""):
        """Build from a 4x4 homogeneous matrix whose upper block is s*R."""
        M = np.asarray(M, dtype=float)
        A = M[:3, :3]
        s = float(np.cbrt(np.linalg.det(A)))
        return cls(quat_from_matrix(A / s), M[:3, 3], s, source, target)

    @property
    def R(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.s * self.R
        M[:3, 3] = self.t
        return M

    def relabel(self, source, target):
        return Pose(self.q, self.t, self.s, source, target)

    def __matmul__(self, other):
        return compose(self, other)

    def __repr__(self):
        q = np.array2string(self.q, precision=6)
        t = np.array2string(self.t, precision=4)
        return f"Pose({self.source}->{self.target}, q={q}, t={t}, s={self.s:.9g})"

    def to_json(self):
        return {
            "q_wxyz": [float(v) for v in self.q],
            "t_mm": [float(v) for v in self.t],
            "s": float(self.s),
            "source": self.source,
            "target": self.target,
        }

    @classmethod
    def from_json(cls, obj):
        keys = {"q_wxyz", "t_mm", "s", "source", "target"}
        if not isinstance(obj, dict) or set(obj) != keys:
            raise ValidationError(f"pose object must have exactly the keys {sorted(keys)}")
        if len(obj["q_wxyz"]) != 4 or len(obj["t_mm"]) != 3:
            raise ValidationError("pose needs 4 quaternion and 3 translation components")
        return cls(obj["q_wxyz"], obj["t_mm"], obj["s"], str(obj["source"]), str(obj["target"]))


def rotation_pose(omega, source="", target=""):
    return Pose(quat_from_axis_angle(omega), np.zeros(3), 1.0, source, target)


def translation_pose(t, source="", target=""):
    return Pose(np.array([1.0, 0, 0, 0]), t, 1.0, source, target)


# -- operations --------------------------------------------------------------

def compose(a: Pose, b: Pose) -> Pose:
    """``a o b``: apply ``b`` first, then ``a``."""
    if a.source != b.target:
        raise LabelMismatchError(
            f"cannot chain {a.source}->{a.target} after {b.source}->{b.target}")
    q = quat_mul(a.q, b.q)
    t = a.s * (quat_to_matrix(a.q) @ b.t) + a.t
    return Pose(q, t, a.s * b.s, b.source, a.target)


def inverse(p: Pose) -> Pose:
    qi = quat_conj(p.q)
    t = -(1.0 / p.s) * (quat_to_matrix(qi) @ p.t)
    return Pose(qi, t, 1.0 / p.s, p.target, p.source)


def transform_point(p: Pose, x):
    """Apply ``p`` to a point ``(3,)`` or a batch of points ``(N, 3)``."""
    x = np.asarray(x, dtype=float)
    return p.s * (x @ p.R.T) + p.t


def sim3_exp(xi):
    """Group exponential of a 7-vector ``(omega, v, sigma)`` (6-vector: sigma = 0).

    Returns ``(q, t, s)`` such that ``[[s*R, t], [0, 1]]`` equals the matrix
    exponential of ``[[sigma*I + hat(omega), v], [0, 0]]``.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape not in ((6,), (7,)):
        raise ValidationError(f"twist must have 6 or 7 components, got {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise ValidationError("twist must be finite")
    omega, v = xi[:3], xi[3:6]
    sigma = float(xi[6]) if xi.size == 7 else 0.0
    q = quat_from_axis_angle(omega)
    if sigma != 0.0:
        G = np.zeros((4, 4))
        G[:3, :3] = sigma * np.eye(3) + hat(omega)
        G[:3, 3] = v
        return q, expm(G)[:3, 3], float(np.exp(sigma))

    theta = float(np.linalg.norm(omega))
    th2 = theta * theta
    if theta < 1e-4:
        A = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
        B = 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0
    else:
        A = (1.0 - np.cos(theta)) / th2
        B = (theta - np.sin(theta)) / (th2 * theta)
    W = hat(omega)
    V = np.eye(3) + A * W + B * (W @ W)
    return q, V @ v, 1.0


def retract(p: Pose, xi) -> Pose:
    """Left-multiplicative update ``exp(xi) o p``."""
    q, t, s = sim3_exp(xi)
    step = Pose(q, t, s, p.target, p.target)
    return compose(step, p)


def pose_residual(pred: Pose, meas: Pose, rho=DEFAULT_RHO, scale_free=False,
                  rho_scale=DEFAULT_RHO_SCALE):
    """Weighted difference of two poses, in mm.

    ``[t_pred - t_meas, rho * log(R_meas^T R_pred)]`` plus, when
    ``scale_free``, ``rho_scale * ln(s_pred / s_meas)``.
    """
    if (pred.source, pred.target) != (meas.source, meas.target):
        raise LabelMismatchError(
            f"residual between {pred.source}->{pred.target} and {meas.source}->{meas.target}")
    if not np.isfinite(rho) or not np.isfinite(rho_scale):
        raise ValidationError("residual weights must be finite")
    if np.array_equal(pred.q, meas.q) or np.array_equal(pred.q, -meas.q):
        rot = np.zeros(3)
    else:
        rot = quat_log(quat_mul(quat_conj(meas.q), pred.q))
    parts = [pred.t - meas.t, rho * rot]
    if scale_free:
        parts.append([rho_scale * np.log(pred.s / meas.s)])
    return np.concatenate(parts)


def rotation_angle(a: Pose, b: Pose) -> float:
    """Geodesic angle between the rotations of two poses (rad)."""
    return float(np.linalg.norm(quat_log(quat_mul(quat_conj(b.q), a.q))))


def random_pose(rng, trans_scale=100.0, source="", target="", scale_range=None):
    """Uniformly random rotation, Gaussian translation; optional log-uniform scale."""
    q = rng.normal(size=4)
    t = rng.normal(scale=trans_scale, size=3)
    s = 1.0
    if scale_range is not None:
        lo, hi = scale_range
        s = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return Pose(q, t, s, source, target)
