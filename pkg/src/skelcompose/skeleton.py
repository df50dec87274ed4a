"""Skeleton data types: joint trees, recorded sequences, and datasets.

Coordinates are stored as float32 arrays of shape (C, V, T): C coordinate
channels (x, y, z in meters), V joints, T frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SchemaError

UNLABELED = -1


@dataclass(frozen=True)
class SkeletonTopology:
    """A joint tree given as a parent array; parent[root] == root."""

    parent: tuple[int, ...]

    def __post_init__(self):
        parent = tuple(int(p) for p in self.parent)
        object.__setattr__(self, "parent", parent)
        n = len(parent)
        if n < 2:
            raise SchemaError(f"topology needs at least 2 joints, got {n}")
        roots = [v for v, p in enumerate(parent) if p == v]
        if len(roots) != 1:
            raise SchemaError(f"topology must have exactly one root, found {roots}")
        if any(p < 0 or p >= n for p in parent):
            raise SchemaError("parent indices out of range")
        # Cycle check: every joint must reach the root.
        root = roots[0]
        for v in range(n):
            seen, cur = set(), v
            while cur != root:
                if cur in seen:
                    raise SchemaError(f"topology contains a cycle through joint {v}")
                seen.add(cur)
                cur = parent[cur]

    @property
    def n_joints(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return next(v for v, p in enumerate(self.parent) if p == v)

    def topological_order(self) -> list[int]:
        """Joints ordered root-first so parents precede children."""
        order, placed = [self.root], {self.root}
        while len(order) < self.n_joints:
            for v in range(self.n_joints):
                if v not in placed and self.parent[v] in placed:
                    order.append(v)
                    placed.add(v)
        return order


# Kinect-style 25-joint tree used by the NTU recordings (0-indexed, root = spine base).
NTU25_PARENT = (
    0, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10,
    0, 12, 13, 14, 0, 16, 17, 18, 1, 7, 7, 11, 11,
)
NTU25_TOPOLOGY = SkeletonTopology(NTU25_PARENT)


@dataclass
class SkeletonSequence:
    """One recorded action clip plus recording metadata.

    performance_id groups simultaneous multi-camera recordings of one
    physical performance; camera_id indexes the viewpoint within it.
    label is UNLABELED (-1) for unlabeled clips.
    """

    coords: np.ndarray
    label: int = UNLABELED
    subject_id: int = 0
    performance_id: int = 0
    camera_id: int = 0

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float32)
        if self.coords.ndim != 3:
            raise SchemaError(f"coords must be (C, V, T), got shape {self.coords.shape}")
        c, v, t = self.coords.shape
        if c != 3:
            raise SchemaError(f"expected 3 coordinate channels, got {c}")
        if v < 2:
            raise SchemaError(f"need at least 2 joints, got {v}")
        if t < 1:
            raise SchemaError("need at least 1 frame")
        if not np.isfinite(self.coords).all():
            raise SchemaError("coords contain NaN/Inf")
        if self.label < 0:
            self.label = UNLABELED

    @property
    def n_joints(self) -> int:
        return self.coords.shape[1]

    @property
    def n_frames(self) -> int:
        return self.coords.shape[2]

    @property
    def is_labeled(self) -> bool:
        return self.label != UNLABELED

    def with_coords(self, coords: np.ndarray) -> "SkeletonSequence":
        return replace(self, coords=coords)


def center_root(coords: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Translate a (C, V, T) array so the root joint of frame 0 sits at the origin."""
    origin = coords[:, topology.root, 0]
    return coords - origin[:, None, None]


@dataclass
class SkeletonDataset:
    """A list of sequences plus the shared topology and class names."""

    sequences: list[SkeletonSequence]
    topology: SkeletonTopology
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        by_perf: dict[int, SkeletonSequence] = {}
        for seq in self.sequences:
            if seq.n_joints != self.topology.n_joints:
                raise SchemaError(
                    f"sequence has {seq.n_joints} joints, topology has {self.topology.n_joints}"
                )
            ref = by_perf.setdefault(seq.performance_id, seq)
            if (ref.label, ref.subject_id) != (seq.label, seq.subject_id):
                raise SchemaError(
                    f"performance {seq.performance_id} mixes labels/subjects"
                )

    def __len__(self) -> int:
        return len(self.sequences)

    def __getitem__(self, i: int) -> SkeletonSequence:
        return self.sequences[i]

    @property
    def n_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        labels = [s.label for s in self.sequences if s.is_labeled]
        return max(labels) + 1 if labels else 0

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    def performances(self) -> dict[int, list[SkeletonSequence]]:
        """Sequences grouped by performance, views sorted by camera id."""
        groups: dict[int, list[SkeletonSequence]] = {}
        for seq in self.sequences:
            groups.setdefault(seq.performance_id, []).append(seq)
        for views in groups.values():
            views.sort(key=lambda s: s.camera_id)
        return groups

    def split_by_performance(
        self, n_train: int, rng: np.random.Generator | None = None
    ) -> tuple["SkeletonDataset", "SkeletonDataset"]:
        """Split whole performances into train/test partitions.

        Performance ids are taken in sorted order (or shuffled when an rng
        is given); all views of one performance land on the same side.
        """
        perf_ids = sorted(self.performances())
        if not 0 < n_train < len(perf_ids):
            raise ValueError(
                f"n_train must be in (0, {len(perf_ids)}), got {n_train}"
            )
        if rng is not None:
            perf_ids = list(rng.permutation(perf_ids))
        train_ids = set(perf_ids[:n_train])
        train = [s for s in self.sequences if s.performance_id in train_ids]
        test = [s for s in self.sequences if s.performance_id not in train_ids]
        return (
            SkeletonDataset(train, self.topology, list(self.class_names)),
            SkeletonDataset(test, self.topology, list(self.class_names)),
        )
