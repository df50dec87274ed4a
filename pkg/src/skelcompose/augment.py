"""Stochastic training augmentations and deterministic resampling.

The pipeline order is fixed: temporal crop + resize, 3D rotation, shear,
joint jitter. Every component can be disabled individually, and the whole
pipeline is deterministic given the caller's random generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import SkeletonSequence


@dataclass
class AugmentationConfig:
    """Parameters of the augmentation pipeline.

    crop_min/crop_max bound the temporal crop ratio; rot_range is the
    per-axis rotation angle bound in radians; shear_range bounds the
    off-diagonal shear coefficients; jitter_sd is the per-joint Gaussian
    noise in meters; frames is the output length after resizing.
    """

    crop_min: float = 0.5
    crop_max: float = 1.0
    rot_range: float = 0.3
    shear_range: float = 0.5
    jitter_sd: float = 0.01
    frames: int = 64

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if not 0 < self.crop_min <= self.crop_max <= 1.0:
            raise ValueError("need 0 < crop_min <= crop_max <= 1")
        if min(self.rot_range, self.shear_range, self.jitter_sd) < 0:
            raise ValueError("ranges must be non-negative")

    @classmethod
    def identity(cls, frames: int) -> "AugmentationConfig":
        """A pipeline that only resizes to the target length."""
        return cls(crop_min=1.0, crop_max=1.0, rot_range=0.0,
                   shear_range=0.0, jitter_sd=0.0, frames=frames)


def resample_linear(coords: np.ndarray, n_out: int) -> np.ndarray:
    """Resize (C, V, T) to n_out frames by linear interpolation along t.

    Exact identity when the lengths already match.
    """
    t = coords.shape[2]
    if t == n_out:
        return coords.copy()
    if t == 1:
        return np.repeat(coords, n_out, axis=2)
    pos = np.linspace(0.0, t - 1, n_out)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, t - 1)
    w = (pos - lo).astype(coords.dtype)
    return coords[:, :, lo] * (1.0 - w) + coords[:, :, hi] * w


def rotation_matrix(angles: np.ndarray) -> np.ndarray:
    """Compose per-axis rotations Rz @ Ry @ Rx from three angles in radians."""
    ax, ay, az = (float(a) for a in angles)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def augment(
    seq: SkeletonSequence, cfg: AugmentationConfig, rng: np.random.Generator
) -> SkeletonSequence:
    """Apply the full pipeline to one clip; metadata is carried over unchanged."""
    coords = seq.coords
    t = coords.shape[2]

    # Temporal crop (clamped to >= 2 frames) then resize to the target length.
    ratio = rng.uniform(cfg.crop_min, cfg.crop_max)
    length = min(t, max(2, int(round(ratio * t))))
    start = rng.integers(0, t - length + 1)
    coords = resample_linear(coords[:, :, start:start + length], cfg.frames)

    if cfg.rot_range > 0:
        rot = rotation_matrix(rng.uniform(-cfg.rot_range, cfg.rot_range, size=3))
        coords = np.einsum("ij,jvt->ivt", rot.astype(np.float32), coords)

    if cfg.shear_range > 0:
        shear = np.eye(3, dtype=np.float32)
        off = rng.uniform(-cfg.shear_range, cfg.shear_range, size=6)
        shear[0, 1], shear[0, 2] = off[0], off[1]
        shear[1, 0], shear[1, 2] = off[2], off[3]
        shear[2, 0], shear[2, 1] = off[4], off[5]
        coords = np.einsum("ij,jvt->ivt", shear, coords)

    if cfg.jitter_sd > 0:
        coords = coords + rng.normal(0.0, cfg.jitter_sd, coords.shape).astype(
            np.float32
        )

    return seq.with_coords(coords.astype(np.float32))
