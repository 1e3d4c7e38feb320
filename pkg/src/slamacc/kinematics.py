"""Forward kinematics of a 7-joint serial arm (classic distal DH convention)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geom import Pose, compose, quat_mul

N_JOINTS = 7
BASE_SPACE = "sawyer"
GRIPPER_SPACE = "gripper"


@dataclass(frozen=True)
class DhLink:
    a: float  # mm
    alpha: float  # rad
    d: float  # mm
    theta0: float = 0.0  # rad

    def __post_init__(self):
        if not all(np.isfinite([self.a, self.alpha, self.d, self.theta0])):
            raise ValidationError("DH parameters must be finite")


@dataclass(frozen=True)
class ArmModel:
    links: tuple
    base_offset: Pose
    tool_offset: Pose

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.links) != N_JOINTS:
            raise ValidationError(f"arm model needs exactly {N_JOINTS} links, got {len(self.links)}")

    def to_json(self):
        return {
            "links": [
                {"a_mm": l.a, "alpha_rad": l.alpha, "d_mm": l.d, "theta0_rad": l.theta0}
                for l in self.links
            ],
            "base_offset": self.base_offset.to_json(),
            "tool_offset": self.tool_offset.to_json(),
        }

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict) or set(obj) != {"links", "base_offset", "tool_offset"}:
            raise ValidationError("arm model must have exactly the keys links, base_offset, tool_offset")
        links = []
        for i, l in enumerate(obj["links"]):
            if not isinstance(l, dict) or set(l) != {"a_mm", "alpha_rad", "d_mm", "theta0_rad"}:
                raise ValidationError(f"link {i}: expected keys a_mm, alpha_rad, d_mm, theta0_rad")
            links.append(DhLink(float(l["a_mm"]), float(l["alpha_rad"]),
                                float(l["d_mm"]), float(l["theta0_rad"])))
        return cls(links, Pose.from_json(obj["base_offset"]), Pose.from_json(obj["tool_offset"]))


def zero_model():
    """All-zero links and identity offsets; FK is the identity for every A."""
    links = [DhLink(0.0, 0.0, 0.0, 0.0)] * N_JOINTS
    return ArmModel(links, Pose.identity(), Pose.identity())


def default_model():
    """The shipped synthetic 7-link table (not the real robot's parameters)."""
    text = resources.files("slamacc").joinpath("data/arm_default.json").read_text()
    return ArmModel.from_json(json.loads(text))


def load_model(path):
    with open(Path(path)) as f:
        return ArmModel.from_json(json.load(f))


def as_joint_angles(A):
    A = np.asarray(A, dtype=float)
    if A.shape != (N_JOINTS,):
        raise ValidationError(f"expected {N_JOINTS} joint angles, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("joint angles must be finite")
    return A


def link_transform(link: DhLink, angle, source="", target="") -> Pose:
    """Rot_z(theta0 + angle) . Trans_z(d) . Trans_x(a) . Rot_x(alpha)."""
    if not np.isfinite(angle):
        raise ValidationError("joint angle must be finite")
    th = link.theta0 + angle
    c, s = np.cos(th), np.sin(th)
    qz = np.array([np.cos(th / 2), 0.0, 0.0, np.sin(th / 2)])
    qx = np.array([np.cos(link.alpha / 2), np.sin(link.alpha / 2), 0.0, 0.0])
    t = np.array([link.a * c, link.a * s, link.d])
    return Pose(quat_mul(qz, qx), t, 1.0, source, target)


def forward_kinematics(model: ArmModel, A) -> Pose:
    """Gripper pose in the robot base space (gripper -> sawyer)."""
    A = as_joint_angles(A)
    G = model.base_offset.relabel("", "")
    for link, angle in zip(model.links, A):
        G = compose(G, link_transform(link, angle))
    G = compose(G, model.tool_offset.relabel("", ""))
    return G.relabel(GRIPPER_SPACE, BASE_SPACE)
