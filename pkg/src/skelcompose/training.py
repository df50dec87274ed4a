"""Self-supervised pretraining loop, checkpointing, and resumable state.

Positive pairs are trained symmetrically: each element's fused-path
projections are aligned against the *other* element's unimodal/composed
projections, and the two directional losses are averaged. For a degenerate
pair (same clip, identity augmentation) this collapses to the single-input
objective. The logged metrics satisfy total = alpha*L_d + beta*L_c + L_reg
on every step by construction.

Checkpoint container (format tag DCC1): an ASCII decimal byte-length line,
a UTF-8 JSON header {format, version, model_config, epoch, step,
rng_state, optimizer, blobs}, a newline, then the named little-endian
parameter blobs in header order. Nothing binary precedes the header.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentationConfig
from .errors import FormatError, NumericalError
from .losses import LossBreakdown, LossConfig, total_loss_grad
from .modalities import ModalityBundle, make_bundle
from .model import Model, ModelConfig, ProjectedFeatures
from .nn import Adam
from .pairs import n_units, sample_positive_pair
from .skeleton import SkeletonDataset

CHECKPOINT_FORMAT = "DCC1"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Pretraining hyperparameters; defaults are desk-scale."""

    batch_size: int = 64
    max_epochs: int = 30
    base_lr: float = 5e-4
    drop_lr: float = 5e-5
    drop_epoch: int = 24
    weight_decay: float = 1e-5
    seed: int = 0
    multiview: bool = True
    checkpoint_every: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentationConfig = field(default_factory=lambda: AugmentationConfig(frames=16))
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not 0 < self.drop_epoch <= self.max_epochs:
            raise ValueError("need 0 < drop_epoch <= max_epochs")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (variance terms need N >= 2)")
        if self.augment.frames != self.model.frames:
            raise ValueError(
                f"augment.frames ({self.augment.frames}) != model.frames ({self.model.frames})"
            )
        if self.loss.space == "global" and not self.model.global_heads:
            raise ValueError("loss.space='global' requires model.global_heads=true")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "base_lr": self.base_lr,
            "drop_lr": self.drop_lr,
            "drop_epoch": self.drop_epoch,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "multiview": self.multiview,
            "checkpoint_every": self.checkpoint_every,
            "loss": self.loss.to_dict(),
            "augment": vars(self.augment).copy(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {
            "batch_size", "max_epochs", "base_lr", "drop_lr", "drop_epoch",
            "weight_decay", "seed", "multiview", "checkpoint_every",
            "loss", "augment", "model",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "augment" in d:
            d["augment"] = AugmentationConfig(**d["augment"])
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: base_lr until drop_epoch, drop_lr afterwards."""
    if not 0 <= epoch < cfg.max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.max_epochs})")
    return cfg.base_lr if epoch < cfg.drop_epoch else cfg.drop_lr


def _average_breakdowns(a: LossBreakdown, b: LossBreakdown) -> LossBreakdown:
    return LossBreakdown(
        decomp_by_space={k: 0.5 * (a.decomp_by_space[k] + b.decomp_by_space[k])
                         for k in a.decomp_by_space},
        decomp=0.5 * (a.decomp + b.decomp),
        comp=0.5 * (a.comp + b.comp),
        reg=0.5 * (a.reg + b.reg),
        total=0.5 * (a.total + b.total),
        per_matrix={k: (0.5 * (a.per_matrix[k][0] + b.per_matrix[k][0]),
                        0.5 * (a.per_matrix[k][1] + b.per_matrix[k][1]))
                    for k in a.per_matrix},
    )


def _scale_tree(d, s):
    if isinstance(d, dict):
        return {k: _scale_tree(v, s) for k, v in d.items()}
    return s * d


def pair_objective(
    model: Model,
    bundles_a: list[ModalityBundle],
    bundles_b: list[ModalityBundle],
    loss_cfg: LossConfig,
) -> tuple[LossBreakdown, dict]:
    """Symmetrized cross-pair loss and its parameter gradients."""
    _, p_a, cache_a = model.forward_batch(bundles_a, loss_cfg.space, with_cache=True)
    _, p_b, cache_b = model.forward_batch(bundles_b, loss_cfg.space, with_cache=True)
    # Direction "a from b": a's fused-path outputs chase b's unimodal/composed outputs.
    cross_ab = ProjectedFeatures(uni=p_b.uni, dec=p_a.dec, comp=p_b.comp, fused=p_a.fused)
    cross_ba = ProjectedFeatures(uni=p_a.uni, dec=p_b.dec, comp=p_a.comp, fused=p_b.fused)
    bd_ab, g_ab = total_loss_grad(cross_ab, loss_cfg)
    bd_ba, g_ba = total_loss_grad(cross_ba, loss_cfg)
    pg_a = ProjectedFeatures(
        uni=_scale_tree(g_ba.uni, 0.5), dec=_scale_tree(g_ab.dec, 0.5),
        comp=_scale_tree(g_ba.comp, 0.5), fused=_scale_tree(g_ab.fused, 0.5),
    )
    pg_b = ProjectedFeatures(
        uni=_scale_tree(g_ab.uni, 0.5), dec=_scale_tree(g_ba.dec, 0.5),
        comp=_scale_tree(g_ab.comp, 0.5), fused=_scale_tree(g_ba.fused, 0.5),
    )
    grads: dict = {}
    model.backward_batch(cache_a, pg_a, grads)
    model.backward_batch(cache_b, pg_b, grads)
    return _average_breakdowns(bd_ab, bd_ba), grads


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model: Model
    optimizer: Adam | None
    epoch: int
    step: int
    rng_state: dict | None


def save_checkpoint(
    path: str | Path,
    model: Model,
    epoch: int = 0,
    step: int = 0,
    optimizer: Adam | None = None,
    rng_state: dict | None = None,
) -> None:
    """Write the DCC1 container; round-trips bit-exactly."""
    path = Path(path)
    blobs: list[tuple[str, np.ndarray]] = [
        (name, model.params[name]) for name in sorted(model.params)
    ]
    opt_meta = None
    if optimizer is not None:
        opt_meta = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "weight_decay": optimizer.weight_decay,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
        }
        for name in sorted(model.params):
            blobs.append((f"adam.m.{name}", optimizer.m[name]))
            blobs.append((f"adam.v.{name}", optimizer.v[name]))
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "epoch": epoch,
        "step": step,
        "rng_state": rng_state,
        "optimizer": opt_meta,
        "blobs": [
            {"name": n, "shape": list(a.shape), "dtype": a.dtype.str}
            for n, a in blobs
        ],
    }
    payload = json.dumps(header, separators=(",", ":")).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(f"{len(payload)}\n".encode("ascii"))
        f.write(payload)
        f.write(b"\n")
        for _, a in blobs:
            f.write(np.ascontiguousarray(a).tobytes())
    tmp.replace(path)


def _read_header(path: Path) -> tuple[dict, int]:
    """Parse the JSON header; returns it plus the byte offset of the blobs."""
    with open(path, "rb") as f:
        length_line = f.readline(32)
        try:
            n = int(length_line.strip())
        except ValueError:
            raise FormatError(f"{path}: bad header length line {length_line!r}") from None
        payload = f.read(n)
        if len(payload) != n:
            raise FormatError(f"{path}: truncated header at byte offset {f.tell()}")
        try:
            header = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable header: {exc}") from exc
        f.read(1)
        offset = f.tell()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: format {header.get('format')!r} != {CHECKPOINT_FORMAT}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r}")
    return header, offset


def read_checkpoint_header(path: str | Path) -> dict:
    return _read_header(Path(path))[0]


def load_checkpoint(
    path: str | Path, expected_cfg: ModelConfig | None = None
) -> Checkpoint:
    """Restore model (+ optimizer moments + rng state) from a DCC1 file.

    With expected_cfg given, refuses to load a mismatching architecture,
    naming the first parameter whose shape differs.
    """
    path = Path(path)
    header, blob_offset = _read_header(path)
    cfg = ModelConfig.from_dict(header["model_config"])
    model = Model(cfg)
    if expected_cfg is not None and expected_cfg != cfg:
        probe = Model(expected_cfg)
        for name in sorted(set(model.params) | set(probe.params)):
            a = model.params.get(name)
            b = probe.params.get(name)
            if a is None or b is None or a.shape != b.shape:
                raise FormatError(
                    f"{path}: parameter {name!r} has shape "
                    f"{None if a is None else a.shape}, expected "
                    f"{None if b is None else b.shape}"
                )
        raise FormatError(f"{path}: model config differs from expected config")

    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        f.seek(blob_offset)
        for meta in header["blobs"]:
            shape = tuple(meta["shape"])
            dtype = np.dtype(meta["dtype"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise FormatError(
                    f"{path}: truncated blob {meta['name']!r} at byte offset {f.tell()}"
                )
            arrays[meta["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    for name in model.params:
        if name not in arrays:
            raise FormatError(f"{path}: missing parameter blob {name!r}")
        if arrays[name].shape != model.params[name].shape:
            raise FormatError(
                f"{path}: parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {model.params[name].shape}"
            )
        model.params[name] = arrays[name]

    optimizer = None
    if header.get("optimizer"):
        meta = header["optimizer"]
        optimizer = Adam(
            lr=meta["lr"], weight_decay=meta["weight_decay"],
            beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
        )
        optimizer.t = int(meta["t"])
        optimizer.m = {n: arrays[f"adam.m.{n}"] for n in model.params}
        optimizer.v = {n: arrays[f"adam.v.{n}"] for n in model.params}
    return Checkpoint(
        model=model,
        optimizer=optimizer,
        epoch=int(header["epoch"]),
        step=int(header["step"]),
        rng_state=header.get("rng_state"),
    )


# ---------------------------------------------------------------------------
# the loop


@dataclass
class PretrainResult:
    model: Model
    checkpoint_path: Path
    metrics_path: Path
    epochs_run: int
    first_epoch_mean: float
    final_epoch_mean: float


def pretrain(
    dataset: SkeletonDataset,
    cfg: TrainConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    log_steps: bool = True,
    workers: int = 1,
) -> PretrainResult:
    """Run the pretraining loop; writes metrics.jsonl and checkpoint.dcc.

    Deterministic for a fixed seed in single-worker mode; resuming from a
    checkpoint continues the exact rng stream of the uninterrupted run.
    workers > 1 parallelizes augmentation/bundle building on per-pair
    spawned generators (a different, internally consistent random stream).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    ckpt_path = out_dir / "checkpoint.dcc"

    seq = np.random.SeedSequence(cfg.seed)
    init_seed, loop_seed = seq.spawn(2)
    units = n_units(dataset, cfg.multiview)
    if units < cfg.batch_size:
        raise ValueError(
            f"dataset offers {units} sampling units, fewer than batch_size {cfg.batch_size}"
        )

    if resume is not None:
        ck = load_checkpoint(resume, expected_cfg=cfg.model)
        model, optimizer = ck.model, ck.optimizer
        if optimizer is None:
            raise FormatError(f"{resume}: checkpoint carries no optimizer state")
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
        start_epoch, step = ck.epoch, ck.step
        mode = "a"
    else:
        model = Model(cfg.model, seed=init_seed)
        optimizer = Adam(lr=cfg.base_lr, weight_decay=cfg.weight_decay)
        rng = np.random.default_rng(loop_seed)
        start_epoch, step = 0, 0
        mode = "w"

    mods = cfg.model.modalities

    def build_pair(i: int, pair_rng: np.random.Generator):
        sa, sb = sample_positive_pair(dataset, i, cfg.multiview, pair_rng, cfg.augment)
        return (
            make_bundle(sa.coords, dataset.topology, mods),
            make_bundle(sb.coords, dataset.topology, mods),
        )

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    first_epoch_mean = final_epoch_mean = float("nan")
    with open(metrics_path, mode, encoding="utf-8") as mf:
        for epoch in range(start_epoch, cfg.max_epochs):
            lr = lr_schedule(epoch, cfg)
            order = rng.permutation(units)
            n_batches = units // cfg.batch_size
            totals = []
            for b in range(n_batches):
                idxs = [int(i) for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                if pool is None:
                    built = [build_pair(i, rng) for i in idxs]
                else:
                    built = list(pool.map(build_pair, idxs, rng.spawn(len(idxs))))
                firsts = [p[0] for p in built]
                seconds = [p[1] for p in built]
                breakdown, grads = pair_objective(model, firsts, seconds, cfg.loss)
                if not np.isfinite(breakdown.total):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, batch {b} "
                        f"(units {sorted(int(i) for i in idxs)}): "
                        f"decomp={breakdown.decomp} comp={breakdown.comp} reg={breakdown.reg}"
                    )
                optimizer.step(model.params, grads, lr)
                step += 1
                totals.append(breakdown.total)
                if log_steps:
                    mf.write(json.dumps(breakdown.metrics_line(step, lr)) + "\n")
            epoch_mean = float(np.mean(totals))
            mf.write(json.dumps({"epoch": epoch, "mean_total": epoch_mean,
                                 "lr": lr, "steps": len(totals)}) + "\n")
            mf.flush()
            if epoch == 0:
                first_epoch_mean = epoch_mean
            final_epoch_mean = epoch_mean
            done = epoch + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.max_epochs:
                save_checkpoint(
                    out_dir / f"checkpoint_epoch{done:04d}.dcc", model,
                    epoch=done, step=step, optimizer=optimizer,
                    rng_state=rng.bit_generator.state,
                )
    if pool is not None:
        pool.shutdown()
    save_checkpoint(ckpt_path, model, epoch=cfg.max_epochs, step=step,
                    optimizer=optimizer, rng_state=rng.bit_generator.state)
    return PretrainResult(
        model=model,
        checkpoint_path=ckpt_path,
        metrics_path=metrics_path,
        epochs_run=cfg.max_epochs - start_epoch,
        first_epoch_mean=first_epoch_mean,
        final_epoch_mean=final_epoch_mean,
    )
