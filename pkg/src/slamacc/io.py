"""Readers and writers for every on-disk format.

Readers are strict: unknown keys are rejected and every error names the file
(and line, for line-oriented formats).  Writers are byte-deterministic: floats
use Python's shortest round-trip ``repr`` and JSON keys keep a fixed order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calib import CalibSample, ExtrinsicsPair
from .errors import ParseError, ValidationError
from .evaluate import KeyFrame
from .geom import Pose
from .kinematics import ArmModel, N_JOINTS
from .raycast import DepthMap, Intrinsics, TriMesh
from .sync import FrameLog, JointLog, SyncedPacket

RASTER_DTYPES = {"float32": "<f4", "float64": "<f8", "uint32": "<u4"}


# -- generic helpers ---------------------------------------------------------

def dumps(obj):
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    path = Path(path)
    with open(path) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from None


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonl_lines(path):
    path = Path(path)
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            yield lineno, obj


def _write_jsonl(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, allow_nan=False) + "\n")
    return path


def _keys(obj, keys, path, lineno, optional=()):
    got = set(obj)
    unknown = got - set(keys) - set(optional)
    missing = set(keys) - got
    if unknown:
        raise ParseError(path, lineno, f"unknown key(s) {sorted(unknown)}")
    if missing:
        raise ParseError(path, lineno, f"missing key(s) {sorted(missing)}")


def _int(v, path, lineno, what):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(path, lineno, f"{what} must be an integer")
    return v


def _angles(v, path, lineno):
    if not isinstance(v, list) or len(v) != N_JOINTS:
        n = len(v) if isinstance(v, list) else "no"
        raise ParseError(path, lineno, f"expected {N_JOINTS} joint angles, got {n}")
    if not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v):
        raise ParseError(path, lineno, "joint angles must be numbers")
    return [float(a) for a in v]


def _pose(obj, path, lineno):
    try:
        return Pose.from_json(obj)
    except (ValidationError, TypeError, KeyError) as exc:
        raise ParseError(path, lineno, f"bad pose: {exc}") from None


def _sorted_or_fail(ts, linenos, path):
    for k in range(1, len(ts)):
        if ts[k] <= ts[k - 1]:
            raise ParseError(path, linenos[k], "timestamps must be strictly increasing")


# -- joint / frame logs --------------------------------------------------------

def write_joint_log(log: JointLog, path):
    rows = ({"t_ns": int(t), "angles_rad": [float(a) for a in A]} for t, A in zip(log.t, log.angles))
    return _write_jsonl(rows, path)


def read_joint_log(path, nominal_rate_hz=100.0) -> JointLog:
    ts, As, lines = [], [], []
    for lineno, obj in _jsonl_lines(path):
        _keys(obj, ("t_ns", "angles_rad"), path, lineno)
        ts.append(_int(obj["t_ns"], path, lineno, "t_ns"))
        As.append(_angles(obj["angles_rad"], path, lineno))
        lines.append(lineno)
    _sorted_or_fail(ts, lines, path)
    return JointLog(np.array(ts, dtype=np.int64), np.array(As).reshape(-1, N_JOINTS), nominal_rate_hz)


def write_frame_log(log: FrameLog, path):
    rows = ({"t_ns": int(t), "frame_id": int(i)} for t, i in zip(log.t, log.frame_id))
    return _write_jsonl(rows, path)


def read_frame_log(path) -> FrameLog:
    ts, ids, lines = [], [], []
    for lineno, obj in _jsonl_lines(path):
        _keys(obj, ("t_ns", "frame_id"), path, lineno)
        ts.append(_int(obj["t_ns"], path, lineno, "t_ns"))
        ids.append(_int(obj["frame_id"], path, lineno, "frame_id"))
        lines.append(lineno)
    _sorted_or_fail(ts, lines, path)
    return FrameLog(np.array(ts, dtype=np.int64), np.array(ids, dtype=np.int64))


def write_packets(packets, path):
    return _write_jsonl((p.to_json() for p in packets), path)


def read_packets(path):
    out = []
    for lineno, obj in _jsonl_lines(path):
        _keys(obj, ("frame_id", "t_ns", "angles_rad", "gap_ns"), path, lineno)
        out.append(SyncedPacket(_int(obj["frame_id"], path, lineno, "frame_id"),
                                _int(obj["t_ns"], path, lineno, "t_ns"),
                                np.array(_angles(obj["angles_rad"], path, lineno)),
                                _int(obj["gap_ns"], path, lineno, "gap_ns")))
    return out


# -- calibration ---------------------------------------------------------------

def write_calib_samples(samples, path):
    rows = ({"t_ns": int(s.t), "angles_rad": [float(a) for a in s.A], "pose_calib": s.P_calib.to_json()}
            for s in samples)
    return _write_jsonl(rows, path)


def read_calib_samples(path):
    out = []
    for lineno, obj in _jsonl_lines(path):
        _keys(obj, ("t_ns", "angles_rad", "pose_calib"), path, lineno)
        t = _int(obj["t_ns"], path, lineno, "t_ns")
        A = _angles(obj["angles_rad"], path, lineno)
        P = _pose(obj["pose_calib"], path, lineno)
        try:
            out.append(CalibSample(np.array(A), P, t))
        except ValidationError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return out


def write_extrinsics(result: ExtrinsicsPair, path):
    return write_json(result.to_json(), path)


def read_extrinsics(path) -> ExtrinsicsPair:
    obj = read_json(path)
    try:
        return ExtrinsicsPair.from_json(obj)
    except (ValidationError, TypeError, KeyError) as exc:
        raise ParseError(path, None, str(exc)) from None


def write_arm(model: ArmModel, path):
    return write_json(model.to_json(), path)


def read_arm(path) -> ArmModel:
    obj = read_json(path)
    try:
        return ArmModel.from_json(obj)
    except (ValidationError, TypeError, KeyError) as exc:
        raise ParseError(path, None, str(exc)) from None


def write_intrinsics(K: Intrinsics, path):
    return write_json(K.to_json(), path)


def read_intrinsics(path) -> Intrinsics:
    obj = read_json(path)
    try:
        return Intrinsics.from_json(obj)
    except (ValidationError, TypeError, KeyError) as exc:
        raise ParseError(path, None, str(exc)) from None


# -- mesh (OBJ subset) -----------------------------------------------------------

def write_mesh(mesh: TriMesh, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.triangles.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path) -> TriMesh:
    """``v x y z`` and ``f i j k`` (1-based) lines; blank lines and ``#`` comments allowed."""
    path = Path(path)
    verts, faces = [], []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "v":
                if len(tok) != 4:
                    raise ParseError(path, lineno, "vertex needs exactly 3 coordinates")
                try:
                    verts.append([float(v) for v in tok[1:]])
                except ValueError:
                    raise ParseError(path, lineno, "non-numeric vertex coordinate") from None
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise ParseError(path, lineno, f"only triangles are supported, got {len(tok) - 1} vertices")
                try:
                    idx = [int(v) for v in tok[1:]]
                except ValueError:
                    raise ParseError(path, lineno, "face indices must be plain integers") from None
                if min(idx) < 1 or max(idx) > len(verts):
                    raise ParseError(path, lineno, "face index out of range")
                faces.append([i - 1 for i in idx])
            else:
                raise ParseError(path, lineno, f"unsupported OBJ directive {tok[0]!r}")
    try:
        return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValidationError as exc:
        raise ParseError(path, None, str(exc)) from None


# -- rasters -------------------------------------------------------------------

def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_raster(values, path, dtype="float32", units="mm"):
    """Row-major little-endian raster plus ``<name>.json`` sidecar."""
    values = np.asarray(values)
    H, W = values.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(values.astype(RASTER_DTYPES[dtype]).tobytes(order="C"))
    meta = {"width": int(W), "height": int(H), "units": units}
    if dtype != "float32":
        meta["dtype"] = dtype
    write_json(meta, sidecar_path(path))
    return path


def read_raster(path):
    path = Path(path)
    meta_path = sidecar_path(path)
    meta = read_json(meta_path)
    if not isinstance(meta, dict):
        raise ParseError(meta_path, None, "sidecar must be a JSON object")
    _keys(meta, ("width", "height", "units"), meta_path, None, optional=("dtype",))
    dtype = meta.get("dtype", "float32")
    if dtype not in RASTER_DTYPES:
        raise ParseError(meta_path, None, f"unsupported raster dtype {dtype!r}")
    W = _int(meta["width"], meta_path, None, "width")
    H = _int(meta["height"], meta_path, None, "height")
    data = path.read_bytes()
    dt = np.dtype(RASTER_DTYPES[dtype])
    if len(data) != W * H * dt.itemsize:
        raise ParseError(path, None, f"expected {W * H * dt.itemsize} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=dt).reshape(H, W)
    return arr.astype(np.float64) if dt.kind == "f" else arr.astype(np.int64), meta


def write_depth_map(dm: DepthMap, path, dtype="float32"):
    return write_raster(dm.values, path, dtype, "mm")


def read_depth_map(path) -> DepthMap:
    values, meta = read_raster(path)
    return DepthMap(values)


# -- keyframes -------------------------------------------------------------------

def _kf_stem(kf_id, revision):
    return f"kf_{kf_id:04d}_r{revision}"


def write_keyframes(keyframes, index_path):
    """JSON-Lines index plus float64 ``idepth`` / ``ivar`` rasters beside it."""
    index_path = Path(index_path)
    raster_dir = index_path.parent / "rasters"
    rows, written = [], []
    for kf in keyframes:
        stem = _kf_stem(kf.kf_id, kf.revision)
        ip = write_raster(kf.idepth, raster_dir / f"{stem}_idepth.f64", "float64", "1/slam")
        vp = write_raster(kf.ivar, raster_dir / f"{stem}_ivar.f64", "float64", "1/slam^2")
        written += [ip, sidecar_path(ip), vp, sidecar_path(vp)]
        rows.append({
            "kf_id": int(kf.kf_id), "revision": int(kf.revision), "t_ns": int(kf.t),
            "pose_est": kf.pose_est.to_json(),
            "idepth": ip.relative_to(index_path.parent).as_posix(),
            "ivar": vp.relative_to(index_path.parent).as_posix(),
        })
    _write_jsonl(rows, index_path)
    return [index_path] + written


def read_keyframes(index_path, K: Intrinsics | None = None):
    index_path = Path(index_path)
    out, seen = [], set()
    for lineno, obj in _jsonl_lines(index_path):
        _keys(obj, ("kf_id", "revision", "t_ns", "pose_est", "idepth", "ivar"), index_path, lineno)
        kf_id = _int(obj["kf_id"], index_path, lineno, "kf_id")
        rev = _int(obj["revision"], index_path, lineno, "revision")
        if (kf_id, rev) in seen:
            raise ParseError(index_path, lineno, f"duplicate keyframe ({kf_id}, {rev})")
        seen.add((kf_id, rev))
        idepth, _ = read_raster(index_path.parent / obj["idepth"])
        ivar, _ = read_raster(index_path.parent / obj["ivar"])
        try:
            kf = KeyFrame(kf_id, rev, _int(obj["t_ns"], index_path, lineno, "t_ns"),
                          _pose(obj["pose_est"], index_path, lineno), idepth, ivar, K)
        except ValidationError as exc:
            raise ParseError(index_path, lineno, str(exc)) from None
        out.append(kf)
    return out


# -- manifest --------------------------------------------------------------------

ROLES = ("jointlog", "framelog", "keyframes", "mesh", "intrinsics", "calib_samples", "arm",
         "config", "raster", "truth")


@dataclass
class Manifest:
    files: list  # [(relative path, role, sha256)]
    seed: int
    config_echo: dict
    base_dir: Path

    def paths(self, role):
        return [self.base_dir / p for p, r, _ in self.files if r == role]

    def path(self, role):
        found = self.paths(role)
        if len(found) != 1:
            raise ValidationError(f"manifest lists {len(found)} file(s) with role {role!r}, expected 1")
        return found[0]

    def to_json(self):
        return {"files": [{"path": p, "role": r, "sha256": h} for p, r, h in self.files],
                "seed": self.seed, "config_echo": self.config_echo}


def build_manifest(base_dir, entries, seed, config_echo):
    """``entries`` is a list of ``(path, role)``; hashes are computed here."""
    base_dir = Path(base_dir)
    files = []
    for p, role in entries:
        if role not in ROLES:
            raise ValidationError(f"unknown manifest role {role!r}")
        rel = Path(p).resolve().relative_to(base_dir.resolve()).as_posix()
        files.append((rel, role, sha256(base_dir / rel)))
    files.sort(key=lambda f: f[0])
    return Manifest(files, int(seed), config_echo, base_dir)


def read_manifest(path, verify=True) -> Manifest:
    path = Path(path)
    obj = read_json(path)
    if not isinstance(obj, dict):
        raise ParseError(path, None, "manifest must be a JSON object")
    _keys(obj, ("files", "seed", "config_echo"), path, None)
    files = []
    for i, f in enumerate(obj["files"]):
        if not isinstance(f, dict) or set(f) != {"path", "role", "sha256"}:
            raise ParseError(path, None, f"files[{i}] must have exactly path, role, sha256")
        if f["role"] not in ROLES:
            raise ParseError(path, None, f"files[{i}]: unknown role {f['role']!r}")
        files.append((f["path"], f["role"], f["sha256"]))
    m = Manifest(files, int(obj["seed"]), obj["config_echo"], path.parent)
    if verify:
        for rel, _, digest in files:
            target = path.parent / rel
            if not target.exists():
                raise FileNotFoundError(f"manifest {path}: listed file {target} does not exist")
            if sha256(target) != digest:
                raise ValidationError(f"manifest {path}: hash mismatch for {target}")
    return m


def write_dataset(ds, cfg, out_dir):
    """Write a simulated dataset and its manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = [
        (write_json(cfg.to_json(), out / "config.json"), "config"),
        (write_arm(ds.model, out / "arm.json"), "arm"),
        (write_intrinsics(cfg.intrinsics, out / "intrinsics.json"), "intrinsics"),
        (write_mesh(ds.mesh, out / "cube.obj"), "mesh"),
        (write_joint_log(ds.joints, out / "joints.jsonl"), "jointlog"),
        (write_frame_log(ds.frames, out / "frames.jsonl"), "framelog"),
        (write_calib_samples(ds.calib, out / "calib_samples.jsonl"), "calib_samples"),
    ]
    kf_files = write_keyframes(ds.keyframes, out / "keyframes.jsonl")
    entries.append((kf_files[0], "keyframes"))
    entries += [(p, "raster") for p in kf_files[1:]]

    truth_rows = []
    for tr in ds.truth:
        stem = _kf_stem(tr.kf_id, tr.revision)
        dp = write_raster(tr.depth, out / "truth" / f"{stem}_depth.f64", "float64", "mm")
        mp = write_raster(tr.mask.astype(np.uint32), out / "truth" / f"{stem}_mask.u32", "uint32", "flag")
        entries += [(dp, "truth"), (sidecar_path(dp), "truth"), (mp, "truth"), (sidecar_path(mp), "truth")]
        truth_rows.append({"kf_id": tr.kf_id, "revision": tr.revision,
                           "angles_rad": [float(a) for a in tr.A], "pose": tr.pose.to_json(),
                           "depth": dp.relative_to(out).as_posix(), "mask": mp.relative_to(out).as_posix()})
    entries.append((_write_jsonl(truth_rows, out / "truth" / "truth.jsonl"), "truth"))
    manifest = build_manifest(out, entries, cfg.seed, cfg.to_json())
    write_json(manifest.to_json(), out / "manifest.json")
    return manifest


def read_truth(manifest: Manifest):
    """Ground-truth sidecar rows of a simulated dataset, in keyframe order."""
    index = [p for p in manifest.paths("truth") if p.name == "truth.jsonl"]
    if len(index) != 1:
        raise ValidationError("dataset has no truth index")
    rows = []
    for lineno, obj in _jsonl_lines(index[0]):
        _keys(obj, ("kf_id", "revision", "angles_rad", "pose", "depth", "mask"), index[0], lineno)
        depth, _ = read_raster(index[0].parent.parent / obj["depth"])
        mask, _ = read_raster(index[0].parent.parent / obj["mask"])
        rows.append({"kf_id": obj["kf_id"], "revision": obj["revision"],
                     "A": np.array(obj["angles_rad"]), "pose": _pose(obj["pose"], index[0], lineno),
                     "depth": depth, "mask": mask.astype(bool)})
    return rows


# -- evaluation tables -----------------------------------------------------------

KEYFRAME_HEADER = "kf_id,revision,t_ns,lambda,n_points,mean_err_mm,var_err_mm2,min_err_mm,max_err_mm"
POINT_HEADER = "kf_id,revision,p,q,e_depth_mm"


def _f(x):
    x = float(x)
    return repr(x) if math.isfinite(x) else "nan"


def write_keyframe_table(results, path):
    lines = [KEYFRAME_HEADER]
    for r in results:
        s = r.stats
        lines.append(",".join([str(r.kf.kf_id), str(r.kf.revision), str(r.kf.t), _f(r.scale.lam),
                               str(s.count), _f(s.mean), _f(s.variance), _f(s.min), _f(s.max)]))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_point_table(results, path):
    with open(path, "w") as f:
        f.write(POINT_HEADER + "\n")
        for r in results:
            pre = f"{r.kf.kf_id},{r.kf.revision},"
            for p, q, e in zip(r.errors.p.tolist(), r.errors.q.tolist(), r.errors.e.tolist()):
                f.write(f"{pre}{p},{q},{e!r}\n")
    return Path(path)


def _read_csv(path, header):
    path = Path(path)
    with open(path) as f:
        first = f.readline().rstrip("\n")
        if first != header:
            raise ParseError(path, 1, f"expected header {header!r}")
        rows = []
        for lineno, line in enumerate(f, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != header.count(",") + 1:
                raise ParseError(path, lineno, "wrong number of columns")
            rows.append(cells)
    return rows


def read_keyframe_table(path):
    out = []
    for c in _read_csv(path, KEYFRAME_HEADER):
        out.append({"kf_id": int(c[0]), "revision": int(c[1]), "t_ns": int(c[2]), "lambda": float(c[3]),
                    "n_points": int(c[4]), "mean_err_mm": float(c[5]), "var_err_mm2": float(c[6]),
                    "min_err_mm": float(c[7]), "max_err_mm": float(c[8])})
    return out


def read_point_table(path):
    """Columns as arrays: ``kf_id, revision, p, q, e``."""
    rows = _read_csv(path, POINT_HEADER)
    if not rows:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z, np.zeros(0)
    arr = np.array(rows)
    ints = arr[:, :4].astype(np.int64)
    return ints[:, 0], ints[:, 1], ints[:, 2], ints[:, 3], arr[:, 4].astype(float)
