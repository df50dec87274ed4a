"""Downstream protocols over frozen or fine-tuned representations.

Evaluation preprocessing is deterministic: uniform temporal resampling to
the model's frame count, no stochastic augmentation. Features are the
unified concat(temporal, spatial) vectors of width 2*embed_dim.

FeatureBank container (FBK1): 4-byte magic b"FBK1", u32 LE manifest
length, UTF-8 JSON manifest {version, count, width, modality_subset,
split, class_names}, then count*width little-endian float32 row-major,
then count u32 labels (0xFFFFFFFF = unlabeled).
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import resample_linear
from .errors import FormatError, SchemaError
from .modalities import MODALITIES, make_bundle
from .model import Model
from .nn import Adam
from .skeleton import UNLABELED, SkeletonDataset, SkeletonSequence

BANK_MAGIC = b"FBK1"
BANK_VERSION = 1
_UNLABELED_U32 = 0xFFFFFFFF

_LETTER = {"joint": "J", "bone": "B", "motion": "M"}
_FROM_LETTER = {v: k for k, v in _LETTER.items()}


def canonical_subset(modalities) -> tuple[str, ...]:
    """Normalize a modality collection to canonical (joint, bone, motion) order."""
    subset = set(modalities)
    unknown = subset - set(MODALITIES)
    if unknown:
        raise SchemaError(f"unknown modalities {sorted(unknown)}")
    if not subset:
        raise SchemaError("modality subset must be nonempty")
    return tuple(k for k in MODALITIES if k in subset)


_DISPLAY_ORDER = ("joint", "motion", "bone")


def subset_letters(modalities) -> str:
    """Short display form in the conventional J, M, B order, e.g. 'J+M+B'."""
    subset = set(canonical_subset(modalities))
    return "+".join(_LETTER[k] for k in _DISPLAY_ORDER if k in subset)


def parse_subset_letters(flag: str) -> tuple[str, ...]:
    """Parse a CLI modality flag like 'J,M,B' or 'J+B'."""
    parts = [p for p in flag.replace("+", ",").upper().split(",") if p]
    try:
        return canonical_subset(_FROM_LETTER[p] for p in parts)
    except KeyError as exc:
        raise SchemaError(f"unknown modality letter {exc.args[0]!r} in {flag!r}") from None


@dataclass
class FeatureBank:
    """Frozen features plus labels for one dataset split."""

    features: np.ndarray
    labels: np.ndarray
    split: str = ""
    modality_subset: tuple[str, ...] = MODALITIES
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise SchemaError("features must be (N, width) with one label per row")
        if not np.isfinite(self.features).all():
            raise SchemaError("bank features contain NaN/Inf")
        self.modality_subset = canonical_subset(self.modality_subset)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def require_labeled(self, context: str) -> None:
        if (self.labels == UNLABELED).any():
            raise SchemaError(f"{context} requires fully labeled banks")


def preprocess_coords(seq: SkeletonSequence, frames: int) -> np.ndarray:
    """Deterministic inference-time preparation: resample to the model length."""
    return resample_linear(seq.coords, frames)


def extract_bank(
    model: Model,
    dataset: SkeletonDataset,
    modality_subset=None,
    split: str = "",
    batch_size: int = 256,
) -> FeatureBank:
    """One unified-feature row per sequence; deterministic across calls."""
    subset = canonical_subset(modality_subset or model.cfg.modalities)
    rows = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.sequences[start:start + batch_size]
        bundles = [
            make_bundle(preprocess_coords(s, model.cfg.frames), dataset.topology, subset)
            for s in chunk
        ]
        rows.append(model.forward_unified(bundles, subset))
    features = np.concatenate(rows, axis=0) if rows else np.zeros((0, 2 * model.cfg.embed_dim))
    return FeatureBank(
        features=features,
        labels=dataset.labels(),
        split=split,
        modality_subset=subset,
        class_names=list(dataset.class_names),
    )


def write_bank(bank: FeatureBank, path: str | Path) -> None:
    manifest = {
        "version": BANK_VERSION,
        "count": len(bank),
        "width": bank.width,
        "modality_subset": list(bank.modality_subset),
        "split": bank.split,
        "class_names": list(bank.class_names),
    }
    blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    labels = bank.labels.copy()
    labels[labels == UNLABELED] = _UNLABELED_U32
    with open(path, "wb") as f:
        f.write(BANK_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(bank.features, dtype="<f4").tobytes())
        f.write(labels.astype("<u4").tobytes())


def read_bank(path: str | Path) -> FeatureBank:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(BANK_MAGIC))
        if magic != BANK_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
        raw = f.read(4)
        if len(raw) != 4:
            raise FormatError(f"{path}: truncated manifest length")
        (mlen,) = struct.unpack("<I", raw)
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        if manifest.get("version") != BANK_VERSION:
            raise FormatError(f"{path}: unsupported version {manifest.get('version')!r}")
        count, width = manifest["count"], manifest["width"]
        fdata = f.read(count * width * 4)
        if len(fdata) != count * width * 4:
            raise FormatError(f"{path}: truncated feature block")
        ldata = f.read(count * 4)
        if len(ldata) != count * 4:
            raise FormatError(f"{path}: truncated label block")
    features = np.frombuffer(fdata, dtype="<f4").reshape(count, width)
    labels = np.frombuffer(ldata, dtype="<u4").astype(np.int64)
    labels[labels == _UNLABELED_U32] = UNLABELED
    return FeatureBank(
        features=features.copy(),
        labels=labels,
        split=manifest.get("split", ""),
        modality_subset=tuple(manifest["modality_subset"]),
        class_names=list(manifest["class_names"]),
    )


# ---------------------------------------------------------------------------
# protocols


def _softmax_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and d(loss)/d(logits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = float(-np.log(probs[np.arange(n), labels] + 1e-12).mean())
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def linear_probe(
    train_bank: FeatureBank,
    test_bank: FeatureBank,
    epochs: int = 200,
    lr: float = 1e-2,
) -> float:
    """Train one affine classifier on frozen features; top-1 test accuracy."""
    train_bank.require_labeled("linear_probe")
    test_bank.require_labeled("linear_probe")
    classes = np.unique(train_bank.labels)
    if len(classes) < 2:
        raise SchemaError("linear_probe needs at least 2 training classes")
    if not set(np.unique(test_bank.labels)) & set(classes):
        raise SchemaError("train/test class sets do not overlap")
    n_classes = int(max(train_bank.labels.max(), test_bank.labels.max())) + 1
    x = train_bank.features.astype(np.float64)
    w = np.zeros((train_bank.width, n_classes))
    b = np.zeros(n_classes)
    params = {"w": w, "b": b}
    opt = Adam(lr=lr, weight_decay=0.0)
    for _ in range(epochs):
        _, dlogits = _softmax_ce(x @ w + b, train_bank.labels)
        opt.step(params, {"w": x.T @ dlogits, "b": dlogits.sum(0)})
    pred = (test_bank.features.astype(np.float64) @ w + b).argmax(axis=1)
    return float((pred == test_bank.labels).mean())


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0.0, 1.0, norms)


def knn_retrieve(
    train_bank: FeatureBank,
    test_bank: FeatureBank,
    k: int = 1,
    exclude_self: bool = False,
) -> float:
    """Cosine nearest-neighbor classification; majority label of k neighbors."""
    train_bank.require_labeled("knn_retrieve")
    test_bank.require_labeled("knn_retrieve")
    if len(train_bank) == 0:
        raise SchemaError("empty train bank")
    if not 1 <= k <= len(train_bank) - (1 if exclude_self else 0):
        raise SchemaError(f"k={k} out of range for {len(train_bank)} train rows")
    sims = _unit_rows(test_bank.features.astype(np.float64)) @ _unit_rows(
        train_bank.features.astype(np.float64)
    ).T
    if exclude_self:
        if len(train_bank) != len(test_bank):
            raise SchemaError("exclude_self requires equally sized banks")
        np.fill_diagonal(sims, -np.inf)
    if k == 1:
        pred = train_bank.labels[sims.argmax(axis=1)]
    else:
        nn_idx = np.argpartition(-sims, k - 1, axis=1)[:, :k]
        pred = np.empty(len(test_bank), dtype=np.int64)
        for i, idx in enumerate(nn_idx):
            pred[i] = np.bincount(train_bank.labels[idx]).argmax()
    return float((pred == test_bank.labels).mean())


# ---------------------------------------------------------------------------
# fine-tuning protocols


def select_fraction(
    dataset: SkeletonDataset, fraction: float, seed: int
) -> np.ndarray:
    """Seeded per-class (stratified) selection of sequence indices.

    Falls back to unstratified global sampling, with a warning, when the
    fraction yields zero samples for some class.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    labels = dataset.labels()
    if (labels == UNLABELED).any():
        raise SchemaError("fine-tuning requires labeled data")
    rng = np.random.default_rng(seed)
    if fraction == 1.0:
        return np.arange(len(dataset))
    chosen: list[np.ndarray] = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n_c = int(round(fraction * len(idx)))
        if n_c == 0:
            warnings.warn(
                f"fraction {fraction} selects no samples for class {c}; "
                "falling back to unstratified selection"
            )
            n = max(1, int(round(fraction * len(dataset))))
            return np.sort(rng.choice(len(dataset), size=n, replace=False))
        chosen.append(rng.choice(idx, size=n_c, replace=False))
    return np.sort(np.concatenate(chosen))


def _dataset_bundles(model: Model, dataset: SkeletonDataset, subset):
    return [
        make_bundle(preprocess_coords(s, model.cfg.frames), dataset.topology, subset)
        for s in dataset.sequences
    ]


def finetune_classifier(
    model: Model,
    train_dataset: SkeletonDataset,
    test_dataset: SkeletonDataset,
    modality_subset=None,
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
) -> tuple[float, Model]:
    """Attach a linear head and fine-tune every parameter with cross-entropy.

    Returns (top-1 test accuracy, the fine-tuned model copy); the input
    model is left untouched.
    """
    subset = canonical_subset(modality_subset or model.cfg.modalities)
    n_classes = max(train_dataset.n_classes, test_dataset.n_classes)
    if n_classes < 2:
        raise SchemaError("fine-tuning needs at least 2 classes")
    tuned = model.copy()
    rng = np.random.default_rng(seed)
    width = 2 * tuned.cfg.embed_dim
    tuned.params["head.w"] = (
        rng.normal(0.0, 0.01, (width, n_classes)).astype(tuned.dtype)
    )
    tuned.params["head.b"] = np.zeros(n_classes, dtype=tuned.dtype)

    train_bundles = _dataset_bundles(tuned, train_dataset, subset)
    labels = train_dataset.labels()
    opt = Adam(lr=lr, weight_decay=0.0)
    n = len(train_bundles)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = [train_bundles[i] for i in idx]
            unified, cache = tuned.forward_unified(batch, subset, with_cache=True)
            logits = unified @ tuned.params["head.w"] + tuned.params["head.b"]
            _, dlogits = _softmax_ce(logits, labels[idx])
            grads = {
                "head.w": unified.T @ dlogits,
                "head.b": dlogits.sum(0),
            }
            tuned.backward_unified(cache, dlogits @ tuned.params["head.w"].T, grads)
            opt.step(tuned.params, grads)

    test_bundles = _dataset_bundles(tuned, test_dataset, subset)
    preds = []
    for start in range(0, len(test_bundles), 256):
        unified = tuned.forward_unified(test_bundles[start:start + 256], subset)
        preds.append(
            (unified @ tuned.params["head.w"] + tuned.params["head.b"]).argmax(axis=1)
        )
    pred = np.concatenate(preds)
    return float((pred == test_dataset.labels()).mean()), tuned


def semi_supervised(
    model: Model,
    train_dataset: SkeletonDataset,
    test_dataset: SkeletonDataset,
    fraction: float,
    epochs: int = 20,
    lr: float = 1e-3,
    seed: int = 0,
    modality_subset=None,
) -> float:
    """Fine-tune on a seeded stratified fraction of the training labels."""
    idx = select_fraction(train_dataset, fraction, seed)
    subset_ds = SkeletonDataset(
        [train_dataset.sequences[i] for i in idx],
        train_dataset.topology,
        list(train_dataset.class_names),
    )
    acc, _ = finetune_classifier(
        model, subset_ds, test_dataset,
        modality_subset=modality_subset, epochs=epochs, lr=lr, seed=seed,
    )
    return acc


def transfer(
    model: Model,
    train_dataset: SkeletonDataset,
    test_dataset: SkeletonDataset,
    epochs: int = 20,
    lr: float = 1e-3,
    seed: int = 0,
    modality_subset=None,
    joint_map: list[int] | None = None,
    mapped_topology=None,
) -> float:
    """Fine-tune a pretrained model on a different dataset.

    The classifier head is re-initialized for the target's classes. Joint
    counts must match the pretrained architecture unless joint_map gives,
    for each model joint, the source joint index in the target data (with
    mapped_topology describing the tree over the mapped joints).
    """
    def remap(ds: SkeletonDataset) -> SkeletonDataset:
        if ds.topology.n_joints == model.cfg.n_joints and joint_map is None:
            return ds
        if joint_map is None:
            raise SchemaError(
                f"dataset has {ds.topology.n_joints} joints but the model expects "
                f"{model.cfg.n_joints}; supply a joint_map"
            )
        if len(joint_map) != model.cfg.n_joints:
            raise SchemaError("joint_map length must equal the model joint count")
        if mapped_topology is None or mapped_topology.n_joints != model.cfg.n_joints:
            raise SchemaError("joint_map requires a mapped_topology over the model joints")
        mapped = [
            SkeletonSequence(
                coords=s.coords[:, joint_map, :],
                label=s.label, subject_id=s.subject_id,
                performance_id=s.performance_id, camera_id=s.camera_id,
            )
            for s in ds.sequences
        ]
        return SkeletonDataset(mapped, mapped_topology, list(ds.class_names))

    train_ds = remap(train_dataset)
    test_ds = remap(test_dataset)
    acc, _ = finetune_classifier(
        model, train_ds, test_ds,
        modality_subset=modality_subset, epochs=epochs, lr=lr, seed=seed,
    )
    return acc


# ---------------------------------------------------------------------------
# result export

CSV_COLUMNS = ("protocol", "dataset", "modality_subset", "fraction", "seed", "accuracy")


def append_result(
    csv_path: str | Path,
    protocol: str,
    dataset: str,
    modality_subset,
    fraction: float | None,
    seed: int,
    accuracy: float,
) -> None:
    """Append one accuracy row, writing the header on first use."""
    csv_path = Path(csv_path)
    new = not csv_path.exists()
    with open(csv_path, "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if new:
            writer.writerow(CSV_COLUMNS)
        writer.writerow(
            [
                protocol,
                dataset,
                subset_letters(modality_subset),
                "" if fraction is None else fraction,
                seed,
                f"{accuracy:.6f}",
            ]
        )
