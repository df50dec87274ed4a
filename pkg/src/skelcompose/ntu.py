"""Reader for the public NTU `.skeleton` text layout and its protocol splits.

File layout: line 1 holds the frame count; each frame holds a body count,
then per tracked body a 10-field info line, a joint-count line, and one
line per joint whose first three whitespace-separated fields are x y z
(remaining depth/color/orientation/tracking fields are discarded).

Recording metadata lives in the file name, SsssCcccPpppRrrrAaaa: setup,
camera, performer, replication, action. Split membership (x-sub / x-view /
x-setup) is decided from those fields against the published id lists
shipped in ntu_splits.json.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import ParseError, SchemaError
from .skeleton import (
    NTU25_TOPOLOGY,
    SkeletonDataset,
    SkeletonSequence,
    SkeletonTopology,
    center_root,
)

_NAME_RE = re.compile(r"^S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})$")


@dataclass(frozen=True)
class NtuFileInfo:
    """The five filename fields of one NTU recording."""

    setup: int
    camera: int
    performer: int
    replication: int
    action: int


def parse_ntu_filename(name: str) -> NtuFileInfo:
    """Decode SsssCcccPpppRrrrAaaa from a file name (extension ignored)."""
    stem = Path(name).stem
    m = _NAME_RE.match(stem)
    if m is None:
        raise ParseError(f"file name {name!r} does not follow SsssCcccPpppRrrrAaaa")
    s, c, p, r, a = (int(g) for g in m.groups())
    return NtuFileInfo(s, c, p, r, a)


class _LineReader:
    """Line iterator that tracks the current line number for error messages."""

    def __init__(self, stream: Iterable[str]):
        self._it = iter(stream)
        self.lineno = 0

    def next_tokens(self, what: str) -> list[str]:
        for line in self._it:
            self.lineno += 1
            tokens = line.split()
            if tokens:
                return tokens
        raise ParseError(f"truncated file: expected {what} at line {self.lineno + 1}")

    def next_int(self, what: str) -> int:
        tokens = self.next_tokens(what)
        try:
            return int(tokens[0])
        except ValueError:
            raise ParseError(
                f"line {self.lineno}: expected integer {what}, got {tokens[0]!r}"
            ) from None


def parse_ntu_skeleton(
    text: TextIO | str,
    topology: SkeletonTopology = NTU25_TOPOLOGY,
) -> list[SkeletonSequence]:
    """Parse one `.skeleton` stream into one sequence per tracked body id.

    Frames where a body is absent are zero-filled for that body. The
    returned coordinates are the file values verbatim (no normalization);
    metadata fields are left at defaults for the caller to fill in.
    """
    reader = _LineReader(text.splitlines() if isinstance(text, str) else text)
    n_frames = reader.next_int("frame count")
    if n_frames < 1:
        raise ParseError(f"line {reader.lineno}: frame count must be >= 1")
    v = topology.n_joints

    bodies: dict[int, np.ndarray] = {}
    for frame in range(n_frames):
        n_bodies = reader.next_int(f"body count of frame {frame}")
        for _ in range(n_bodies):
            info = reader.next_tokens("body info line")
            if len(info) != 10:
                raise ParseError(
                    f"line {reader.lineno}: body info line has {len(info)} fields, expected 10"
                )
            body_id = int(info[0])
            n_joints = reader.next_int("joint count")
            if n_joints != v:
                raise SchemaError(
                    f"line {reader.lineno}: joint count {n_joints} does not match "
                    f"topology ({v} joints)"
                )
            coords = bodies.setdefault(body_id, np.zeros((3, v, n_frames), np.float32))
            for j in range(n_joints):
                tokens = reader.next_tokens(f"joint {j} of frame {frame}")
                if len(tokens) < 3:
                    raise ParseError(
                        f"line {reader.lineno}: joint line has {len(tokens)} fields, expected >= 3"
                    )
                try:
                    coords[:, j, frame] = [float(t) for t in tokens[:3]]
                except ValueError:
                    raise ParseError(
                        f"line {reader.lineno}: non-numeric joint coordinates"
                    ) from None

    return [SkeletonSequence(coords=bodies[b]) for b in sorted(bodies)]


def motion_energy(coords: np.ndarray) -> float:
    """Sum of squared frame-to-frame displacements, used to pick the main actor."""
    if coords.shape[2] < 2:
        return 0.0
    return float(np.sum((coords[:, :, 1:] - coords[:, :, :-1]) ** 2))


def select_main_actor(bodies: list[SkeletonSequence]) -> SkeletonSequence:
    """Keep the body with the largest total motion energy."""
    if not bodies:
        raise ParseError("no bodies in clip")
    return max(bodies, key=lambda s: motion_energy(s.coords))


def load_split_tables() -> dict:
    """The published protocol id lists bundled with the package."""
    with resources.files(__package__).joinpath("ntu_splits.json").open("rb") as f:
        return json.load(f)


def split_membership(info: NtuFileInfo, split: str, tables: dict | None = None) -> str:
    """Return 'train' or 'test' for a recording under the given protocol."""
    tables = tables or load_split_tables()
    if split == "xsub":
        subjects = set(tables["ntu60_xsub_train_subjects"]) | set(
            tables["ntu120_xsub_train_subjects"]
        )
        return "train" if info.performer in subjects else "test"
    if split == "xview":
        return "train" if info.camera in set(tables["xview_train_cameras"]) else "test"
    if split == "xsetup":
        return "train" if info.setup in set(tables["xsetup_train_setups"]) else "test"
    raise ValueError(f"unknown split {split!r}")


def ingest_directory(
    directory: str | Path,
    split: str,
    part: str,
    topology: SkeletonTopology = NTU25_TOPOLOGY,
) -> SkeletonDataset:
    """Build a dataset from every `.skeleton` file that belongs to split/part.

    Multi-body clips are reduced to the main actor; coordinates are
    root-centered; files with unrecognized names are skipped with a warning.
    Performance ids group recordings that share setup/performer/replication/
    action (i.e. simultaneous multi-camera captures of one performance).
    """
    if part not in ("train", "test"):
        raise ValueError(f"part must be 'train' or 'test', got {part!r}")
    directory = Path(directory)
    files = sorted(directory.glob("*.skeleton"))
    if not files:
        raise ParseError(f"no skeleton files found in {directory}")

    tables = load_split_tables()
    sequences: list[SkeletonSequence] = []
    perf_ids: dict[tuple[int, int, int, int], int] = {}
    skipped = 0
    max_action = 0
    for path in files:
        try:
            info = parse_ntu_filename(path.name)
        except ParseError:
            warnings.warn(f"skipping unrecognized file name {path.name}")
            skipped += 1
            continue
        if split_membership(info, split, tables) != part:
            continue
        with open(path, "r", encoding="utf-8") as f:
            bodies = parse_ntu_skeleton(f, topology)
        main = select_main_actor(bodies)
        perf_key = (info.setup, info.performer, info.replication, info.action)
        perf_id = perf_ids.setdefault(perf_key, len(perf_ids))
        sequences.append(
            SkeletonSequence(
                coords=center_root(main.coords, topology),
                label=info.action - 1,
                subject_id=info.performer,
                performance_id=perf_id,
                camera_id=info.camera,
            )
        )
        max_action = max(max_action, info.action)
    if skipped:
        warnings.warn(f"skipped {skipped} file(s) with unrecognized names")
    class_names = [f"A{a + 1:03d}" for a in range(max_action)]
    return SkeletonDataset(sequences, topology, class_names)
