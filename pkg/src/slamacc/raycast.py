"""Camera model, Möller–Trumbore ray casting and ground-truth depth maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRangeError, ValidationError
from .geom import Pose

MT_EPS = 1e-9
MIN_TRIANGLE_AREA = 1e-12  # mm^2


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    model: str = "pinhole"
    w: float = 0.0  # ATAN distortion parameter, fov model only

    def __post_init__(self):
        if self.model not in ("pinhole", "fov"):
            raise ValidationError(f"unknown camera model {self.model!r}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")
        if self.model == "fov" and not (0 < self.w < math.pi):
            raise ValidationError("fov parameter w must be in (0, pi)")

    @property
    def shape(self):
        return (self.height, self.width)

    def to_json(self):
        return {"model": self.model, "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "w": self.w, "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, obj):
        keys = {"model", "fx", "fy", "cx", "cy", "w", "width", "height"}
        if not isinstance(obj, dict) or not set(obj) <= keys or not set(obj) >= keys - {"w"}:
            raise ValidationError(f"intrinsics must have the keys {sorted(keys)}")
        return cls(float(obj["fx"]), float(obj["fy"]), float(obj["cx"]), float(obj["cy"]),
                   int(obj["width"]), int(obj["height"]), str(obj["model"]), float(obj.get("w", 0.0)))


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (V, 3) mm
    triangles: np.ndarray  # (F, 3) vertex indices

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        F = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValidationError("triangle index out of range")
        if F.size:
            a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
            area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            bad = np.flatnonzero(area <= MIN_TRIANGLE_AREA)
            if bad.size:
                raise ValidationError(f"degenerate triangle(s) at index {bad.tolist()}")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)

    def corners(self):
        """Per-triangle vertex arrays ``(v0, v1, v2)``, each ``(F, 3)``."""
        F = self.triangles
        return self.vertices[F[:, 0]], self.vertices[F[:, 1]], self.vertices[F[:, 2]]

    def __len__(self):
        return len(self.triangles)


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    dir: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dir, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if not np.isfinite(n) or n == 0:
            raise ValidationError("ray direction must be finite and non-zero")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "dir", d / n)


@dataclass(eq=False)
class DepthMap:
    values: np.ndarray  # (height, width) mm, NaN = invalid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValidationError("depth map must be two-dimensional")

    @classmethod
    def empty(cls, width, height):
        return cls(np.full((height, width), np.nan))

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def valid(self):
        return np.isfinite(self.values)


def cube_mesh(side, center_xy=(0.0, 0.0), yaw=0.0):
    """Closed cube resting on the z = 0 plane; 12 outward-facing triangles."""
    h = side / 2.0
    corners = np.array([[x, y, z] for z in (0.0, side) for y in (-h, h) for x in (-h, h)])
    c, s = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    V = corners @ Rz.T + np.array([center_xy[0], center_xy[1], 0.0])
    # vertex k = x_bit + 2*y_bit + 4*z_bit
    faces = [
        (0, 2, 1), (1, 2, 3),  # bottom, -z
        (4, 5, 6), (5, 7, 6),  # top, +z
        (0, 1, 4), (1, 5, 4),  # -y
        (2, 6, 3), (3, 6, 7),  # +y
        (0, 4, 2), (2, 4, 6),  # -x
        (1, 3, 5), (3, 7, 5),  # +x
    ]
    return TriMesh(V, np.array(faces))


# -- camera rays -------------------------------------------------------------

def _undistort_factor(K, r):
    """Ratio r_u / r_d of the ATAN model, elementwise."""
    r = np.asarray(r, dtype=float)
    denom = 2.0 * math.tan(K.w / 2.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.tan(r * K.w) / (r * denom)
    f = np.where(r > 0, f, K.w / denom)
    return np.where(r * K.w < math.pi / 2, f, np.nan)


def pixel_directions(K: Intrinsics, rows, cols):
    """Unit camera-space ray directions for pixel centres ``(row, col)``; shape ``(N, 3)``."""
    rows = np.asarray(rows, dtype=float).reshape(-1)
    cols = np.asarray(cols, dtype=float).reshape(-1)
    x = (cols - K.cx) / K.fx
    y = (rows - K.cy) / K.fy
    if K.model == "fov":
        f = _undistort_factor(K, np.hypot(x, y))
        x, y = x * f, y * f
    d = np.stack([x, y, np.ones_like(x)], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def pixel_ray(K: Intrinsics, p, q) -> Ray:
    """Camera-space ray through the centre of pixel (row ``p``, column ``q``)."""
    if not (0 <= p < K.height and 0 <= q < K.width):
        raise OutOfRangeError(f"pixel ({p}, {q}) outside {K.height}x{K.width} raster")
    d = pixel_directions(K, [p], [q])[0]
    if not np.all(np.isfinite(d)):
        raise ValidationError(f"pixel ({p}, {q}) lies beyond the fov model's valid radius")
    return Ray(np.zeros(3), d)


# -- Möller–Trumbore -----------------------------------------------------------

def ray_triangle_intersect(ray: Ray, tri, eps=MT_EPS):
    """Nearest non-negative hit of ``ray`` with triangle ``tri`` as ``(t, u, v)``, or None.

    No backface culling; ``|det| < eps`` counts as parallel.
    """
    ox, oy, oz = (float(c) for c in ray.origin)
    dx, dy, dz = (float(c) for c in ray.dir)
    (ax, ay, az), (bx, by, bz), (cx, cy, cz) = ((float(c) for c in v) for v in tri)
    e1x, e1y, e1z = bx - ax, by - ay, bz - az
    e2x, e2y, e2z = cx - ax, cy - ay, cz - az
    px, py, pz = dy * e2z - dz * e2y, dz * e2x - dx * e2z, dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < eps:
        return None
    inv = 1.0 / det
    sx, sy, sz = ox - ax, oy - ay, oz - az
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return None
    qx, qy, qz = sy * e1z - sz * e1y, sz * e1x - sx * e1z, sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return None
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < 0.0:
        return None
    return t, u, v


def intersect_pairs(origins, dirs, v0, v1, v2, eps=MT_EPS):
    """Elementwise Möller–Trumbore over matching rows; returns ``(hit, t, u, v)``."""
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(dirs, e2)
    det = np.einsum("...k,...k->...", e1, p)
    ok = np.abs(det) >= eps
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = origins - v0
        u = np.einsum("...k,...k->...", s, p) * inv
        qv = np.cross(s, e1)
        v = np.einsum("...k,...k->...", dirs, qv) * inv
        t = np.einsum("...k,...k->...", e2, qv) * inv
    hit = ok & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= 0.0)
    return hit, t, u, v


def cast_rays(origins, dirs, mesh: TriMesh, eps=MT_EPS):
    """Nearest hit distance of each ray over all mesh triangles (``inf`` on a miss).

    Returns ``(t, triangle_index)``; index is -1 for misses.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(dirs)
    if origins.shape[0] == 1 and n > 1:
        origins = np.broadcast_to(origins, dirs.shape)
    best = np.full(n, np.inf)
    idx = np.full(n, -1, dtype=np.int64)
    v0, v1, v2 = mesh.corners()
    # triangles in a fixed order so ties resolve deterministically to the lowest index
    for k in range(len(mesh)):
        hit, t, _, _ = intersect_pairs(origins, dirs, v0[k], v1[k], v2[k], eps)
        better = hit & (t < best)
        best[better] = t[better]
        idx[better] = k
    return best, idx


def ground_truth_depth_map(P: Pose, K: Intrinsics, mesh: TriMesh, mask=None, along_ray=False) -> DepthMap:
    """Depth of the mesh as seen by a camera at ``P`` (camera -> mesh space).

    Depth is the camera-frame z of the nearest hit unless ``along_ray``.  Only
    pixels in ``mask`` (boolean raster) are computed when one is given.
    """
    if abs(P.s - 1.0) > 1e-12:
        raise ValidationError(f"ground-truth camera pose must be rigid, got scale {P.s}")
    if mask is None:
        rows, cols = np.indices(K.shape).reshape(2, -1)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != K.shape:
            raise ValidationError(f"mask shape {mask.shape} does not match raster {K.shape}")
        rows, cols = np.nonzero(mask)
    d_cam = pixel_directions(K, rows, cols)
    d_world = d_cam @ P.R.T
    t, _ = cast_rays(P.t[None, :], d_world, mesh)
    depth = t if along_ray else t * d_cam[:, 2]
    depth = np.where(np.isfinite(depth) & (depth > 0), depth, np.nan)
    out = DepthMap.empty(K.width, K.height)
    out.values[rows, cols] = depth
    return out
