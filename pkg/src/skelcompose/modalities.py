"""Derived input modalities and the two flattened encoder views.

A clip's raw joint coordinates (C, V, T) generate two further modalities:
bone (per-joint offset to its parent) and motion (frame-to-frame
displacement). Each modality is consumed by the encoders as a temporal
view (T, V*C) and a spatial view (V, T*C); the flattening order is fixed
so both views round-trip exactly to the source array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .skeleton import SkeletonTopology

MODALITIES = ("joint", "bone", "motion")


def derive_bone(joint: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """bone[:, v, t] = joint[:, v, t] - joint[:, parent[v], t]; zero at the root.

    Computed in float64 so differences of float32 inputs are exact and the
    tree prefix-sum inversion round-trips bit-exactly at float32.
    """
    if joint.shape[1] != topology.n_joints:
        raise SchemaError(
            f"array has {joint.shape[1]} joints, topology has {topology.n_joints}"
        )
    parent = np.asarray(topology.parent)
    j = np.asarray(joint, dtype=np.float64)
    return j - j[:, parent, :]


def bone_to_joint(
    bone: np.ndarray, root_trajectory: np.ndarray, topology: SkeletonTopology
) -> np.ndarray:
    """Invert derive_bone by prefix-summing bones down the tree.

    root_trajectory is the (C, T) position of the root joint.
    """
    if bone.shape[1] != topology.n_joints:
        raise SchemaError("bone/topology size mismatch")
    joint = np.empty(bone.shape, dtype=np.float64)
    joint[:, topology.root, :] = root_trajectory
    for v in topology.topological_order()[1:]:
        joint[:, v, :] = joint[:, topology.parent[v], :] + bone[:, v, :]
    return joint


def derive_motion(joint: np.ndarray) -> np.ndarray:
    """motion[:, :, t] = joint[:, :, t+1] - joint[:, :, t]; final frame is zero.

    Float64 like derive_bone, so telescoping back is bit-exact at float32.
    """
    j = np.asarray(joint, dtype=np.float64)
    motion = np.zeros_like(j)
    if j.shape[2] > 1:
        motion[:, :, :-1] = j[:, :, 1:] - j[:, :, :-1]
    return motion


def motion_to_joint(motion: np.ndarray, first_frame: np.ndarray) -> np.ndarray:
    """Invert derive_motion: cumulative sum along t seeded with frame 0 (C, V)."""
    joint = np.empty(motion.shape, dtype=np.float64)
    joint[:, :, 0] = first_frame
    if motion.shape[2] > 1:
        joint[:, :, 1:] = np.asarray(first_frame, dtype=np.float64)[:, :, None] + np.cumsum(
            motion[:, :, :-1], axis=2
        )
    return joint


def make_views(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flatten (C, V, T) into the temporal view (T, V*C) and spatial view (V, T*C).

    x_t[t, v*C + c] = x[c, v, t] and x_s[v, t*C + c] = x[c, v, t].
    """
    c, v, t = x.shape
    x_t = np.ascontiguousarray(x.transpose(2, 1, 0)).reshape(t, v * c)
    x_s = np.ascontiguousarray(x.transpose(1, 2, 0)).reshape(v, t * c)
    return x_t, x_s


def temporal_view_to_coords(x_t: np.ndarray, n_joints: int) -> np.ndarray:
    """Invert the temporal flattening back to (C, V, T)."""
    t, vc = x_t.shape
    c = vc // n_joints
    return np.ascontiguousarray(x_t.reshape(t, n_joints, c).transpose(2, 1, 0))


def spatial_view_to_coords(x_s: np.ndarray, n_frames: int) -> np.ndarray:
    """Invert the spatial flattening back to (C, V, T)."""
    v, tc = x_s.shape
    c = tc // n_frames
    return np.ascontiguousarray(x_s.reshape(v, n_frames, c).transpose(2, 0, 1))


@dataclass
class ModalityBundle:
    """Both encoder views of every derived modality for one clip."""

    temporal: dict[str, np.ndarray]
    spatial: dict[str, np.ndarray]

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(self.temporal)


def make_bundle(
    coords: np.ndarray,
    topology: SkeletonTopology,
    modalities: tuple[str, ...] = MODALITIES,
) -> ModalityBundle:
    """Derive the requested modalities from raw joints and flatten both views."""
    arrays = {}
    for name in modalities:
        if name == "joint":
            arrays[name] = coords
        elif name == "bone":
            arrays[name] = derive_bone(coords, topology)
        elif name == "motion":
            arrays[name] = derive_motion(coords)
        else:
            raise SchemaError(f"unknown modality {name!r}")
    temporal, spatial = {}, {}
    for name, arr in arrays.items():
        temporal[name], spatial[name] = make_views(arr)
    return ModalityBundle(temporal, spatial)


def stack_bundles(bundles: list[ModalityBundle]) -> dict[str, dict[str, np.ndarray]]:
    """Stack per-clip bundles into batched (B, ...) view arrays per stream/modality."""
    if not bundles:
        raise ValueError("empty bundle list")
    mods = bundles[0].modalities
    return {
        "t": {k: np.stack([b.temporal[k] for b in bundles]) for k in mods},
        "s": {k: np.stack([b.spatial[k] for b in bundles]) for k in mods},
    }
