"""File-to-file drivers behind the CLI subcommands."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import io
from .calib import SolveOptions, predict_camera_pose, solve_extrinsics
from .errors import ValidationError
from .evaluate import (assemble_point_cloud, build_report, effective_region, evaluate_keyframe,
                       median_downsample, pixelwise_error_map)
from .heatmap import HeatmapStyle, write_heatmap, write_mask
from .simgen import generate_dataset, load_config
from .sync import DEFAULT_MAX_GAP_NS, interpolate_joints, synchronize_streams

log = logging.getLogger(__name__)


def run_simulate(config_path, out_dir):
    cfg = load_config(config_path)
    return generate_dataset(cfg, out_dir)


def run_calibrate(samples_path, arm_path, out_path, options: SolveOptions):
    samples = io.read_calib_samples(samples_path)
    model = io.read_arm(arm_path)
    result = solve_extrinsics(samples, model, options)
    io.write_extrinsics(result, out_path)
    if not result.converged:
        log.warning("calibration did not converge within %d iterations", options.max_iter)
    return result


def run_sync(frames_path, joints_path, out_path, max_gap_ns=DEFAULT_MAX_GAP_NS, policy="linear"):
    frames = io.read_frame_log(frames_path)
    joints = io.read_joint_log(joints_path)
    packets, drops = synchronize_streams(frames, joints, max_gap_ns, policy)
    io.write_packets(packets, out_path)
    out_path = Path(out_path)
    drop_path = out_path.with_name(out_path.stem + "_drops.jsonl")
    io._write_jsonl(({"frame_id": d.frame_id, "t_ns": d.t, "reason": d.reason} for d in drops), drop_path)
    return packets, drops


def run_evaluate(manifest_path, extrinsics_path, mesh_path, out_dir, arm_path=None,
                 scale_method="lsq", along_ray=False, max_gap_ns=DEFAULT_MAX_GAP_NS):
    """Ground-truth depth, scale and error statistics for every keyframe of a dataset."""
    manifest = io.read_manifest(manifest_path)
    ext = io.read_extrinsics(extrinsics_path)
    mesh = io.read_mesh(mesh_path)
    K = io.read_intrinsics(manifest.path("intrinsics"))
    model = io.read_arm(arm_path if arm_path is not None else manifest.path("arm"))
    joints = io.read_joint_log(manifest.path("jointlog"))
    keyframes = io.read_keyframes(manifest.path("keyframes"), K)

    results, skipped, clouds = [], [], []
    for kf in keyframes:
        try:
            A = interpolate_joints(joints, kf.t, max_gap_ns)
            P = predict_camera_pose(ext.T1, ext.T2, model, A)
            res = evaluate_keyframe(kf, P, K, mesh, scale_method, along_ray)
        except ValidationError as exc:
            log.warning("keyframe (%d, %d) skipped: %s", kf.kf_id, kf.revision, exc)
            skipped.append({"kf_id": kf.kf_id, "revision": kf.revision, "reason": str(exc)})
            continue
        results.append(res)
        clouds.append(assemble_point_cloud(kf, P, res.scale.lam, K, res.errors))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(results, K.width, K.height)
    io.write_keyframe_table(results, out / "keyframes.csv")
    io.write_point_table(results, out / "points.csv")
    io.write_raster(report.pixel_mean, out / "pixel_map.f32", "float32", "mm")
    io.write_raster(report.pixel_count, out / "pixel_counts.u32", "uint32", "count")
    for r in results:
        stem = f"kf_{r.kf.kf_id:04d}_r{r.kf.revision}"
        io.write_depth_map(r.d_gt, out / "depth_gt" / f"{stem}.f32")
        io.write_depth_map(r.d_slam, out / "depth_slam" / f"{stem}.f32")
    _write_cloud(results, clouds, out / "cloud.csv")

    summary = {
        "width": K.width,
        "height": K.height,
        "scale_method": scale_method,
        "depth": "along_ray" if along_ray else "z",
        "extrinsics_rms_mm": ext.final_rms,
        "total_points": int(sum(len(r.errors) for r in results)),
        "keyframes": [
            {"kf_id": r.kf.kf_id, "revision": r.kf.revision, "lambda": r.scale.lam,
             "n_pairs": r.scale.n_pairs, "mean_err_mm": r.stats.mean,
             "mean_abs_err_mm": r.stats.mean_abs, "degenerate_variance": r.stats.degenerate,
             "gt_only": r.errors.gt_only, "slam_only": r.errors.slam_only}
            for r in results
        ],
        "skipped": skipped,
    }
    io.write_json(summary, out / "summary.json")
    return report, summary


def _write_cloud(results, clouds, path):
    with open(path, "w") as f:
        f.write("kf_id,revision,x_mm,y_mm,z_mm,e_depth_mm\n")
        for r, (pts, tag) in zip(results, clouds):
            pre = f"{r.kf.kf_id},{r.kf.revision},"
            for (x, y, z), e in zip(pts.tolist(), tag.tolist()):
                f.write(f"{pre}{x!r},{y!r},{z!r},{io._f(e)}\n")


def run_report(eval_dir, out_dir, threshold, median_k=5, vmax=None):
    """Heatmaps, per-keyframe summary and effective-region mask from an evaluation directory."""
    ev = Path(eval_dir)
    out = Path(out_dir)
    summary = io.read_json(ev / "summary.json")
    W, H = int(summary["width"]), int(summary["height"])
    kf_rows = io.read_keyframe_table(ev / "keyframes.csv")
    kf_id, rev, p, q, e = io.read_point_table(ev / "points.csv")

    abs_e = np.abs(e)
    if vmax is None:
        vmax = float(abs_e.max()) if abs_e.size and abs_e.max() > 0 else 1.0
    style = HeatmapStyle(0.0, vmax)

    pix, count = pixelwise_error_map([(p, q, e)], W, H)
    write_heatmap(pix, style, out / "pixel_error.ppm")
    small = median_downsample(pix, median_k)
    write_heatmap(small, style, out / f"pixel_error_median{median_k}.ppm")
    mask, frac = effective_region(pix, threshold)
    write_mask(mask, out / "effective_region.ppm")
    io.write_raster(mask.astype(np.uint32), out / "effective_region.u32", "uint32", "flag")

    for row in kf_rows:
        sel = (kf_id == row["kf_id"]) & (rev == row["revision"])
        img = np.full((H, W), np.nan)
        img[p[sel], q[sel]] = abs_e[sel]
        write_heatmap(img, style, out / "keyframes" / f"kf_{row['kf_id']:04d}_r{row['revision']}.ppm")

    means = np.array([r["mean_err_mm"] for r in kf_rows]) if kf_rows else np.zeros(0)
    if means.size:
        bar_style = HeatmapStyle(0.0, max(float(np.abs(means).max()), 1e-300))
        write_heatmap(np.abs(means)[None, :], bar_style, out / "keyframe_means.ppm")

    abs_by_kf = {(k["kf_id"], k["revision"]): k["mean_abs_err_mm"] for k in summary["keyframes"]}
    lines = ["kf_id,revision,lambda,n_points,mean_err_mm,mean_abs_err_mm,var_err_mm2"]
    for r in kf_rows:
        lines.append(f"{r['kf_id']},{r['revision']},{r['lambda']!r},{r['n_points']},"
                     f"{r['mean_err_mm']!r},{abs_by_kf[(r['kf_id'], r['revision'])]!r},{r['var_err_mm2']!r}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "keyframe_summary.csv").write_text("\n".join(lines) + "\n")

    info = {
        "threshold_mm": float(threshold),
        "effective_fraction": frac,
        "observed_pixels": int((count > 0).sum()),
        "median_window": int(median_k),
        "clamp_mm": [0.0, vmax],
        "mean_abs_err_mm": float(abs_e.mean()) if abs_e.size else None,
        "n_points": int(e.size),
    }
    io.write_json(info, out / "report.json")
    return info
