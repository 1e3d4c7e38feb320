"""Scale estimation and depth-error statistics for SLAM keyframes.

Errors are ``D_GT - D_SLAM`` in mm: signed per point and per keyframe,
absolute in the pixel-wise map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geom import Pose, transform_point
from .raycast import DepthMap, Intrinsics, TriMesh, ground_truth_depth_map, pixel_directions

SCALE_METHODS = ("lsq", "median", "weighted")


@dataclass(eq=False)
class KeyFrame:
    kf_id: int
    revision: int
    t: int  # ns
    pose_est: Pose  # camera -> SLAM space, arbitrary scale
    idepth: np.ndarray  # (H, W), 1 / SLAM depth units; <= 0 or NaN = no estimate
    ivar: np.ndarray  # (H, W) inverse-depth variance
    K: Intrinsics | None = None

    def __post_init__(self):
        self.idepth = np.asarray(self.idepth, dtype=float)
        self.ivar = np.asarray(self.ivar, dtype=float)
        if self.idepth.shape != self.ivar.shape:
            raise ValidationError("idepth and ivar rasters differ in shape")
        if self.K is not None and self.idepth.shape != self.K.shape:
            raise ValidationError(f"keyframe raster {self.idepth.shape} does not match intrinsics {self.K.shape}")

    @property
    def valid(self):
        with np.errstate(invalid="ignore"):
            return np.isfinite(self.idepth) & (self.idepth > 0)

    def depths(self):
        """Unscaled SLAM depths ``1 / idepth``; NaN where there is no estimate."""
        out = np.full(self.idepth.shape, np.nan)
        v = self.valid
        out[v] = 1.0 / self.idepth[v]
        return out

    @property
    def key(self):
        return (self.kf_id, self.revision)


@dataclass(frozen=True)
class ScaleEstimate:
    kf_id: int
    revision: int
    lam: float
    n_pairs: int


@dataclass(eq=False)
class PointErrors:
    p: np.ndarray  # row
    q: np.ndarray  # column
    e: np.ndarray  # D_GT - D_SLAM, mm
    gt_only: int = 0  # valid in D_GT only
    slam_only: int = 0  # valid in D_SLAM only (e.g. the ray missed the mesh)

    def __len__(self):
        return len(self.e)


@dataclass(frozen=True)
class KeyframeStats:
    mean: float
    variance: float
    count: int
    min: float
    max: float
    mean_abs: float
    degenerate: bool = False


@dataclass(eq=False)
class KeyframeResult:
    kf: KeyFrame
    scale: ScaleEstimate
    d_gt: DepthMap
    d_slam: DepthMap
    errors: PointErrors
    stats: KeyframeStats


@dataclass(eq=False)
class ErrorReport:
    results: list = field(default_factory=list)
    pixel_mean: np.ndarray | None = None
    pixel_count: np.ndarray | None = None


# -- scale estimation ------------------------------------------------------

def _pairs(delta, d_gt, var=None):
    delta = np.asarray(delta, dtype=float).reshape(-1)
    d_gt = np.asarray(d_gt, dtype=float).reshape(-1)
    if delta.shape != d_gt.shape:
        raise ValidationError("depth arrays differ in length")
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(delta) & (delta > 0) & np.isfinite(d_gt)
    if var is not None:
        var = np.asarray(var, dtype=float).reshape(-1)
        with np.errstate(invalid="ignore"):
            ok &= np.isfinite(var) & (var > 0)
        var = var[ok]
    return delta[ok], d_gt[ok], var


def estimate_scale(delta, d_gt, method="lsq", var=None, kf_id=-1, revision=0) -> ScaleEstimate:
    """Scale mapping SLAM depths onto ground truth for one keyframe.

    ``lsq`` minimises ``sum (d_gt - lam * delta)^2``; ``median`` takes the
    median ratio; ``weighted`` divides each term by its variance ``var``.
    """
    if method not in SCALE_METHODS:
        raise ValidationError(f"unknown scale method {method!r}")
    if method == "weighted" and var is None:
        raise ValidationError("weighted scale estimate needs per-point variances")
    dl, dg, w = _pairs(delta, d_gt, var if method == "weighted" else None)
    if dl.size == 0:
        raise ValidationError("no valid depth pairs for scale estimation")
    if method == "median":
        lam = float(np.median(dg / dl))
    else:
        wt = 1.0 if w is None else 1.0 / w
        den = float(np.sum(wt * dl * dl))
        if den == 0.0:
            raise ValidationError("sum of squared SLAM depths is zero")
        lam = float(np.sum(wt * dl * dg)) / den
    if not lam > 0:
        raise ValidationError(f"estimated scale {lam} is not positive")
    return ScaleEstimate(kf_id, revision, lam, int(dl.size))


def apply_scale(kf: KeyFrame, lam) -> DepthMap:
    if not lam > 0:
        raise ValidationError(f"scale must be positive, got {lam}")
    return DepthMap(kf.depths() * lam)


# -- error metrics ---------------------------------------------------------

def point_depth_errors(d_gt: DepthMap, d_slam: DepthMap) -> PointErrors:
    if d_gt.values.shape != d_slam.values.shape:
        raise ValidationError(f"depth maps differ in size: {d_gt.values.shape} vs {d_slam.values.shape}")
    g, s = d_gt.valid, d_slam.valid
    both = g & s
    p, q = np.nonzero(both)
    e = d_gt.values[p, q] - d_slam.values[p, q]
    return PointErrors(p, q, e, int(np.sum(g & ~s)), int(np.sum(s & ~g)))


def keyframe_error_stats(e) -> KeyframeStats:
    """Mean, sample variance (n - 1) and extremes of signed errors."""
    e = np.asarray(e, dtype=float).reshape(-1)
    n = e.size
    if n == 0:
        raise ValidationError("keyframe has no error records")
    mean = float(np.mean(e))
    degenerate = n == 1
    var = 0.0 if degenerate else float(np.var(e, ddof=1))
    return KeyframeStats(mean, var, n, float(e.min()), float(e.max()),
                         float(np.mean(np.abs(e))), degenerate)


def pixelwise_error_map(records, width, height):
    """Mean absolute error and observation count per pixel over many keyframes.

    ``records`` is an iterable of ``PointErrors`` (or ``(p, q, e)`` triples);
    accumulation runs in the given order so results are bitwise reproducible.
    """
    total = np.zeros((height, width))
    count = np.zeros((height, width), dtype=np.int64)
    for rec in records:
        p, q, e = (rec.p, rec.q, rec.e) if isinstance(rec, PointErrors) else rec
        p = np.asarray(p, dtype=np.int64)
        q = np.asarray(q, dtype=np.int64)
        if p.size and (p.min() < 0 or p.max() >= height or q.min() < 0 or q.max() >= width):
            raise ValidationError("error record outside the raster")
        np.add.at(total, (p, q), np.abs(np.asarray(e, dtype=float)))
        np.add.at(count, (p, q), 1)
    mean = np.full((height, width), np.nan)
    seen = count > 0
    mean[seen] = total[seen] / count[seen]
    return mean, count


def median_downsample(values, k):
    """Median of the valid cells in each ``k x k`` block (stride ``k``)."""
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ValidationError(f"window size must be a positive odd integer, got {k}")
    k = int(k)
    values = np.asarray(values, dtype=float)
    H, W = values.shape
    Ho, Wo = -(-H // k), -(-W // k)
    padded = np.full((Ho * k, Wo * k), np.nan)
    padded[:H, :W] = values
    blocks = padded.reshape(Ho, k, Wo, k).transpose(0, 2, 1, 3).reshape(Ho, Wo, k * k)
    out = np.full((Ho, Wo), np.nan)
    has = np.any(np.isfinite(blocks), axis=2)
    if np.any(has):
        out[has] = np.nanmedian(blocks[has], axis=1)
    return out


def effective_region(values, threshold):
    """Cells whose mean absolute error is at most ``threshold``; returns ``(mask, fraction)``."""
    if not threshold > 0:
        raise ValidationError("threshold must be positive")
    values = np.asarray(values, dtype=float)
    with np.errstate(invalid="ignore"):
        mask = np.isfinite(values) & (values <= threshold)
    frac = float(mask.sum()) / mask.size if mask.size else 0.0
    return mask, frac


def assemble_point_cloud(kf: KeyFrame, P_gt: Pose, lam, K: Intrinsics | None = None, errors=None):
    """Scaled SLAM points in the space ``P_gt`` maps into.

    Returns ``(points (N, 3), error (N,))`` ordered row-major over the valid
    pixels; the error tag is NaN where ``errors`` has no record for the pixel.
    """
    K = K or kf.K
    if K is None:
        raise ValidationError("intrinsics required to back-project a keyframe")
    d = apply_scale(kf, lam).values
    rows, cols = np.nonzero(np.isfinite(d))
    dirs = pixel_directions(K, rows, cols)
    z = d[rows, cols]
    cam = dirs * (z / dirs[:, 2])[:, None]
    pts = transform_point(P_gt, cam) if len(cam) else np.zeros((0, 3))
    tag = np.full(len(rows), np.nan)
    if errors is not None and len(errors):
        lookup = np.full(kf.idepth.shape, np.nan)
        lookup[errors.p, errors.q] = errors.e
        tag = lookup[rows, cols]
    return pts, tag


# -- per-keyframe pipeline -----------------------------------------------------

def evaluate_keyframe(kf: KeyFrame, P_gt: Pose, K: Intrinsics, mesh: TriMesh,
                      scale_method="lsq", along_ray=False) -> KeyframeResult:
    d_gt = ground_truth_depth_map(P_gt, K, mesh, mask=kf.valid, along_ray=along_ray)
    delta = kf.depths()
    var = kf.ivar if scale_method == "weighted" else None
    scale = estimate_scale(delta, d_gt.values, scale_method, var, kf.kf_id, kf.revision)
    d_slam = apply_scale(kf, scale.lam)
    errs = point_depth_errors(d_gt, d_slam)
    stats = keyframe_error_stats(errs.e)
    return KeyframeResult(kf, scale, d_gt, d_slam, errs, stats)


def build_report(results, width, height) -> ErrorReport:
    mean, count = pixelwise_error_map([r.errors for r in results], width, height)
    return ErrorReport(list(results), mean, count)
