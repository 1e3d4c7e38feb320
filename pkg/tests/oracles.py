"""Reference implementations used only by the tests.

They deliberately avoid the package's own code paths: plain 4x4 matrices,
scipy rotations and textbook geometry.
"""

import numpy as np
from scipy.spatial.transform import Rotation


def rotz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def homogeneous(R, t, s=1.0):
    M = np.eye(4)
    M[:3, :3] = s * np.asarray(R)
    M[:3, 3] = t
    return M


def pose_matrix(p):
    """4x4 matrix of a Pose built from its quaternion via scipy (x, y, z, w order)."""
    w, x, y, z = p.q
    R = Rotation.from_quat([x, y, z, w]).as_matrix()
    return homogeneous(R, p.t, p.s)


def apply(M, pts):
    pts = np.atleast_2d(pts)
    return pts @ M[:3, :3].T + M[:3, 3]


def dh_matrix(a, alpha, d, theta):
    Rz = homogeneous(rotz(theta), np.zeros(3))
    Tz = homogeneous(np.eye(3), [0.0, 0.0, d])
    Tx = homogeneous(np.eye(3), [a, 0.0, 0.0])
    Rx = homogeneous(rotx(alpha), np.zeros(3))
    return Rz @ Tz @ Tx @ Rx


def fk_matrix(model, A):
    M = pose_matrix(model.base_offset)
    for link, ang in zip(model.links, A):
        M = M @ dh_matrix(link.a, link.alpha, link.d, link.theta0 + ang)
    return M @ pose_matrix(model.tool_offset)


def matrix_quat(M):
    """Unit quaternion (w, x, y, z) with w >= 0 from the rotation block of M."""
    x, y, z, w = Rotation.from_matrix(M[:3, :3] / np.cbrt(np.linalg.det(M[:3, :3]))).as_quat()
    q = np.array([w, x, y, z])
    return q if q[0] >= 0 else -q


def quat_distance(a, b):
    """Distance between quaternions modulo sign."""
    return min(np.linalg.norm(a - b), np.linalg.norm(a + b))


def plane_ray_triangle(o, d, a, b, c, eps=1e-9):
    """Intersect the supporting plane, then test barycentric coordinates.

    Returns t or None.  Near-parallel rays (relative to the triangle's size)
    are treated as misses, mirroring a determinant threshold.
    """
    e1, e2 = b - a, c - a
    n = np.cross(e1, e2)
    denom = n @ d
    # same quantity the determinant test thresholds: det = e1 . (d x e2) = -(n . d)
    if abs(denom) < eps:
        return None
    t = n @ (a - o) / denom
    if t < 0:
        return None
    x = o + t * d
    # barycentrics by solving the 2x2 Gram system
    w = x - a
    g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    u, v = np.linalg.solve(g, [w @ e1, w @ e2])
    if u < 0 or v < 0 or u + v > 1:
        return None
    return t


def golden_section(f, lo, hi, tol=1e-12, max_iter=500):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol * (1 + abs(a)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


def plane_ray_triangle_batch(o, d, a, b, c, eps=1e-9):
    """Row-wise version of ``plane_ray_triangle``; returns ``(hit, t)``."""
    e1, e2 = b - a, c - a
    n = np.cross(e1, e2)
    denom = np.einsum("ij,ij->i", n, d)
    ok = np.abs(denom) >= eps
    safe = np.where(ok, denom, 1.0)
    t = np.einsum("ij,ij->i", n, a - o) / safe
    x = o + t[:, None] * d
    w = x - a
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    r1 = np.einsum("ij,ij->i", w, e1)
    r2 = np.einsum("ij,ij->i", w, e2)
    det = g11 * g22 - g12 * g12
    u = (g22 * r1 - g12 * r2) / det
    v = (g11 * r2 - g12 * r1) / det
    hit = ok & (t >= 0) & (u >= 0) & (v >= 0) & (u + v <= 1)
    return hit, np.where(hit, t, np.nan)
