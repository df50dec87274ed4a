"""Portable binary dataset container (SKD1).

Layout:
  8-byte magic b"SKDSET\\x01\\x00"
  u32 LE manifest length, then UTF-8 JSON manifest
      {version, count, C, V, T_max, class_names, topology: {parent: [...]}}
  `count` records, each:
      u32 T, u32 label (0xFFFFFFFF = unlabeled), u32 subject,
      u32 performance, u32 camera,
      C*V*T float32 LE in (C outer, V middle, T inner) order

Reading validates magic, version, manifest consistency, and per-record
shape; every failure names the byte offset or record index.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .skeleton import UNLABELED, SkeletonDataset, SkeletonSequence, SkeletonTopology

MAGIC = b"SKDSET\x01\x00"
VERSION = 1
_UNLABELED_U32 = 0xFFFFFFFF
_REC_HEADER = struct.Struct("<5I")


def write_dataset(dataset: SkeletonDataset, path: str | Path) -> None:
    """Serialize a dataset; the round-trip through read_dataset is lossless."""
    path = Path(path)
    c = 3
    v = dataset.topology.n_joints
    t_max = max((s.n_frames for s in dataset.sequences), default=0)
    manifest = {
        "version": VERSION,
        "count": len(dataset.sequences),
        "C": c,
        "V": v,
        "T_max": t_max,
        "class_names": list(dataset.class_names),
        "topology": {"parent": list(dataset.topology.parent)},
    }
    blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for seq in dataset.sequences:
            label = _UNLABELED_U32 if not seq.is_labeled else seq.label
            f.write(
                _REC_HEADER.pack(
                    seq.n_frames, label, seq.subject_id, seq.performance_id, seq.camera_id
                )
            )
            f.write(np.ascontiguousarray(seq.coords, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(
            f"truncated file: {what} at byte offset {f.tell() - len(data)}"
        )
    return data


def read_dataset(path: str | Path) -> SkeletonDataset:
    """Load an SKD1 file, validating structure as it goes."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte offset 0")
        (mlen,) = struct.unpack("<I", _read_exact(f, 4, "manifest length"))
        try:
            manifest = json.loads(_read_exact(f, mlen, "manifest").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable manifest: {exc}") from exc
        if manifest.get("version") != VERSION:
            raise FormatError(f"unsupported version {manifest.get('version')!r}")
        topology = SkeletonTopology(tuple(manifest["topology"]["parent"]))
        c, v, count = manifest["C"], manifest["V"], manifest["count"]
        if v != topology.n_joints:
            raise FormatError("manifest V disagrees with topology parent length")

        sequences = []
        for i in range(count):
            header = f.read(_REC_HEADER.size)
            if len(header) != _REC_HEADER.size:
                if not header and i < count:
                    raise FormatError(
                        f"manifest count {count} exceeds records present ({i})"
                    )
                raise FormatError(f"truncated record header at record index {i}")
            t, label, subject, perf, cam = _REC_HEADER.unpack(header)
            if t < 1:
                raise FormatError(f"record {i} has T={t}")
            payload = f.read(c * v * t * 4)
            if len(payload) != c * v * t * 4:
                raise FormatError(f"truncated coords at record index {i}")
            coords = np.frombuffer(payload, dtype="<f4").reshape(c, v, t)
            sequences.append(
                SkeletonSequence(
                    coords=coords.copy(),
                    label=UNLABELED if label == _UNLABELED_U32 else label,
                    subject_id=subject,
                    performance_id=perf,
                    camera_id=cam,
                )
            )
        trailing = f.read(1)
        if trailing:
            raise FormatError(
                f"records present exceed manifest count {count} "
                f"(extra data at byte offset {f.tell() - 1})"
            )
    return SkeletonDataset(sequences, topology, list(manifest["class_names"]))
