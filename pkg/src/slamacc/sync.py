"""Pairing camera frames with joint states sampled on an independent clock."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GapError, OutOfRangeError, ValidationError
from .kinematics import N_JOINTS

DEFAULT_MAX_GAP_NS = 50_000_000
POLICIES = ("linear", "nearest")


@dataclass(frozen=True, eq=False)
class JointLog:
    t: np.ndarray  # int64 ns, strictly increasing
    angles: np.ndarray  # (N, 7) rad
    nominal_rate_hz: float = 100.0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        angles = np.asarray(self.angles, dtype=float).reshape(-1, N_JOINTS) if len(t) else np.zeros((0, N_JOINTS))
        if angles.shape[0] != t.shape[0]:
            raise ValidationError("joint log: timestamp and angle counts differ")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("joint log timestamps must be strictly increasing")
        if not np.all(np.isfinite(angles)):
            raise ValidationError("joint log angles must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "angles", angles)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True, eq=False)
class FrameLog:
    t: np.ndarray
    frame_id: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        ids = np.asarray(self.frame_id, dtype=np.int64).reshape(-1)
        if t.shape != ids.shape:
            raise ValidationError("frame log: timestamp and id counts differ")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("frame log timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "frame_id", ids)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True, eq=False)
class SyncedPacket:
    frame_id: int
    t: int
    A: np.ndarray
    gap_ns: int

    def to_json(self):
        return {"frame_id": int(self.frame_id), "t_ns": int(self.t),
                "angles_rad": [float(a) for a in self.A], "gap_ns": int(self.gap_ns)}


@dataclass(frozen=True)
class Drop:
    frame_id: int
    t: int
    reason: str  # "out-of-span" or "gap"


def _blend(log, j, t, policy):
    """Angles at ``t`` given ``log.t[j] <= t`` and (if present) ``t < log.t[j+1]``."""
    t0 = log.t[j]
    if t == t0 or j + 1 == len(log):
        return log.angles[j].copy(), 0
    t1 = log.t[j + 1]
    gap = int(t1 - t0)
    if policy == "nearest":
        k = j if (t - t0) <= (t1 - t) else j + 1
        return log.angles[k].copy(), gap
    frac = (t - t0) / (t1 - t0)
    a0, a1 = log.angles[j], log.angles[j + 1]
    return a0 + frac * (a1 - a0), gap


def interpolate_joints(log: JointLog, t, max_gap=DEFAULT_MAX_GAP_NS, policy="linear"):
    if policy not in POLICIES:
        raise ValidationError(f"unknown interpolation policy {policy!r}")
    if len(log) == 0:
        raise ValidationError("joint log is empty")
    t = int(t)
    if t < log.t[0] or t > log.t[-1]:
        raise OutOfRangeError(f"t={t} ns outside joint log span [{log.t[0]}, {log.t[-1]}]")
    j = int(np.searchsorted(log.t, t, side="right")) - 1
    A, gap = _blend(log, j, t, policy)
    if gap > max_gap:
        raise GapError(f"bracketing joint samples {gap} ns apart exceed max gap {max_gap} ns")
    return A


def synchronize_streams(frames: FrameLog, joints: JointLog, max_gap=DEFAULT_MAX_GAP_NS,
                        policy="linear"):
    """Single forward merge of both logs.

    Returns ``(packets, drops)``; every frame ends up in exactly one of them and
    frame order is preserved.
    """
    if policy not in POLICIES:
        raise ValidationError(f"unknown interpolation policy {policy!r}")
    if len(joints) == 0:
        raise ValidationError("joint log is empty")
    packets, drops = [], []
    jt = joints.t.tolist()
    n = len(joints)
    j = 0
    for fid, t in zip(frames.frame_id.tolist(), frames.t.tolist()):
        if t < jt[0] or t > jt[-1]:
            drops.append(Drop(fid, t, "out-of-span"))
            continue
        while j + 1 < n and jt[j + 1] <= t:
            j += 1
        A, gap = _blend(joints, j, t, policy)
        if gap > max_gap:
            drops.append(Drop(fid, t, "gap"))
            continue
        packets.append(SyncedPacket(fid, t, A, gap))
    return packets, drops
