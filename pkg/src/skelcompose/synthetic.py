"""Synthetic multi-view skeleton benchmark generator.

Each action class is a parametric limb-motion program: per-joint
oscillation axes, frequencies, amplitudes, and phases on a fixed joint
tree. A performance renders one 3D trajectory of its class program (with
per-performance phase/speed/amplitude jitter and a subject-specific scale)
and records it from several cameras, each a fixed pure rotation of the
world. Per-view sensor noise is added after the camera rotation, so with
zero noise all views of one performance are exact 3D rotations of each
other.
"""

from __future__ import annotations

import numpy as np

from .skeleton import SkeletonDataset, SkeletonSequence, SkeletonTopology, center_root

_GOLDEN = 2.399963229728653  # radians between successive joint offset directions


def synth_topology(n_joints: int) -> SkeletonTopology:
    """A fixed branching tree: joint v hangs off joint (v-1)//2."""
    parent = [0] + [(v - 1) // 2 for v in range(1, n_joints)]
    return SkeletonTopology(tuple(parent))


def _rest_offsets(n_joints: int) -> np.ndarray:
    """Deterministic (C, V) bone offsets giving a non-degenerate rest pose."""
    offs = np.zeros((3, n_joints))
    for v in range(1, n_joints):
        a = _GOLDEN * v
        offs[:, v] = (0.30 * np.cos(a), 0.22 * np.sin(1.7 * a) - 0.05, 0.30 * np.sin(a))
    return offs


def _axes_from_angles(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Unit vectors (V, 3) from spherical angles."""
    return np.stack(
        [np.sin(theta) * np.cos(phi), np.cos(theta), np.sin(theta) * np.sin(phi)],
        axis=1,
    )


def _rotate_about_axes(vectors: np.ndarray, axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of per-joint vectors (V, 3) about unit axes by angles (V, T)."""
    v = vectors[:, None, :]                      # (V, 1, 3)
    k = axes[:, None, :]                         # (V, 1, 3)
    ang = angles[:, :, None]                     # (V, T, 1)
    cos, sin = np.cos(ang), np.sin(ang)
    cross = np.cross(k, v)                       # (V, 1, 3), constant over t
    dot = (k * v).sum(-1, keepdims=True)
    return v * cos + cross * sin + k * dot * (1.0 - cos)


class _ClassProgram:
    """Oscillation parameters of one action class, fixed by a class seed.

    Amplitudes are deliberately modest (0.13-0.36 rad) so that realistic
    sensor noise leaves the derived motion modality with a low
    signal-to-noise ratio; classes stay cleanly separable through their
    frequency bands.
    """

    def __init__(self, class_index: int, n_joints: int, seed_seq: np.random.SeedSequence):
        rng = np.random.default_rng(seed_seq)
        self.base_freq = 1.0 + 0.8 * class_index
        self.freq = self.base_freq * rng.uniform(0.8, 1.2, n_joints)
        self.amp = rng.uniform(0.13, 0.36, n_joints)
        self.phase = rng.uniform(0.0, 2 * np.pi, n_joints)
        self.axes = _axes_from_angles(
            rng.uniform(0.2, np.pi - 0.2, n_joints), rng.uniform(0, 2 * np.pi, n_joints)
        )
        # A subset of joints stays still so classes also differ in which limbs move.
        still = rng.random(n_joints) < 0.25
        self.amp[still] = 0.0
        self.amp[0] = 0.0


def _render_trajectory(
    program: _ClassProgram,
    topology: SkeletonTopology,
    n_frames: int,
    scale: float,
    phase_jitter: float,
    speed: float,
    amp_jitter: np.ndarray,
) -> np.ndarray:
    """World-frame joint positions (C, V, T) for one performance."""
    n_joints = topology.n_joints
    rest = _rest_offsets(n_joints) * scale       # (3, V)
    tgrid = np.arange(n_frames) / n_frames
    angles = (
        program.amp[:, None]
        * amp_jitter[:, None]
        * np.sin(2 * np.pi * program.freq[:, None] * speed * tgrid[None, :]
                 + program.phase[:, None] + phase_jitter)
    )                                            # (V, T)
    swung = _rotate_about_axes(rest.T, program.axes, angles)  # (V, T, 3)
    coords = np.zeros((3, n_joints, n_frames))
    for v in topology.topological_order()[1:]:
        coords[:, v, :] = coords[:, topology.parent[v], :] + swung[v].T
    return coords


def camera_rotation(camera_id: int, n_views: int) -> np.ndarray:
    """The fixed world rotation of a camera: spaced yaw plus a small pitch."""
    yaw = 2 * np.pi * camera_id / max(n_views, 2)
    pitch = 0.12 * camera_id
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    r_yaw = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    r_pitch = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    return r_pitch @ r_yaw


def synth_generate(
    n_classes: int,
    n_performances: int,
    n_views: int,
    n_joints: int = 11,
    n_frames: int = 16,
    noise_sd: float = 0.0,
    seed: int = 0,
    n_subjects: int = 10,
) -> SkeletonDataset:
    """Generate a labeled multi-view dataset; byte-identical for a fixed seed.

    Classes are assigned round-robin over performances so any
    performance-contiguous split stays balanced.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_views < 1:
        raise ValueError("need at least 1 view")
    root_seq = np.random.SeedSequence(seed)
    class_seeds = root_seq.spawn(n_classes)
    perf_rng = np.random.default_rng(root_seq.spawn(1)[0])
    topology = synth_topology(n_joints)
    programs = [_ClassProgram(c, n_joints, class_seeds[c]) for c in range(n_classes)]
    cameras = [camera_rotation(c, n_views) for c in range(n_views)]

    sequences: list[SkeletonSequence] = []
    for perf in range(n_performances):
        label = perf % n_classes
        subject = int(perf_rng.integers(0, n_subjects))
        scale = 0.9 + 0.02 * subject
        phase_jitter = perf_rng.uniform(0.0, 2 * np.pi)
        speed = perf_rng.uniform(0.92, 1.08)
        amp_jitter = perf_rng.uniform(0.9, 1.1, n_joints)
        world = _render_trajectory(
            programs[label], topology, n_frames, scale, phase_jitter, speed, amp_jitter
        )
        for cam in range(n_views):
            view = np.einsum("ij,jvt->ivt", cameras[cam], world)
            if noise_sd > 0:
                view = view + perf_rng.normal(0.0, noise_sd, view.shape)
            view = center_root(view.astype(np.float32), topology)
            sequences.append(
                SkeletonSequence(
                    coords=view,
                    label=label,
                    subject_id=subject,
                    performance_id=perf,
                    camera_id=cam,
                )
            )
    class_names = [f"class_{c:02d}" for c in range(n_classes)]
    return SkeletonDataset(sequences, topology, class_names)
