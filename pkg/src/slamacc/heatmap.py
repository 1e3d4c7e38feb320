"""Binary PPM heatmaps: low errors green, high errors red."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class HeatmapStyle:
    vmin: float = 0.0
    vmax: float = 1.0
    invalid: tuple = (128, 128, 128)
    low: tuple = (0, 255, 0)
    high: tuple = (255, 0, 0)

    def __post_init__(self):
        if not self.vmin < self.vmax:
            raise ValidationError(f"heatmap clamp needs min < max, got [{self.vmin}, {self.vmax}]")


def colorize(values, style: HeatmapStyle):
    """``(H, W, 3)`` uint8 image; channels interpolate linearly between the endpoints."""
    values = np.asarray(values, dtype=float)
    valid = np.isfinite(values)
    f = np.zeros(values.shape)
    f[valid] = (np.clip(values[valid], style.vmin, style.vmax) - style.vmin) / (style.vmax - style.vmin)
    lo = np.array(style.low, dtype=float)
    hi = np.array(style.high, dtype=float)
    rgb = lo + f[..., None] * (hi - lo)
    img = np.floor(rgb + 0.5).astype(np.uint8)
    img[~valid] = np.array(style.invalid, dtype=np.uint8)
    return img


def write_ppm(img, path):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    H, W, _ = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P6\n{W} {H}\n255\n".encode("ascii") + img.tobytes())
    return path


def read_ppm(path):
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValidationError(f"{path}: not a P6 PPM with maxval 255")
    W, H = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(H, W, 3)


def write_heatmap(values, style: HeatmapStyle, path):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("cannot render an empty map")
    return write_ppm(colorize(values, style), path)


def write_mask(mask, path):
    mask = np.asarray(mask, dtype=bool)
    img = np.zeros(mask.shape + (3,), dtype=np.uint8)
    img[mask] = 255
    return write_ppm(img, path)
