"""Command-line entry point: data synthesis/ingestion, pretraining,
evaluation, and feature export.

Every command writes a run manifest (resolved config snapshot, seed, code
version, timestamps, output paths) next to its primary output so any
reported number can be rerun from the snapshot. Exit codes: 0 success,
2 usage error, 3 data/format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dataset_io import read_dataset, write_dataset
from .errors import FormatError, NumericalError, ParseError, SchemaError
from .evaluation import (
    append_result,
    extract_bank,
    knn_retrieve,
    linear_probe,
    parse_subset_letters,
    semi_supervised,
    subset_letters,
    transfer,
    write_bank,
)
from .ntu import ingest_directory
from .synthetic import synth_generate
from .training import TrainConfig, load_checkpoint, pretrain

USAGE_ERROR = 2
DATA_ERROR = 3
NUMERICAL_ERROR = 4


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_manifest(path: Path, command: str, config: dict, seed: int,
                   started: str, outputs: list[str]) -> None:
    """Atomic write of the run manifest."""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    tmp.replace(path)


def resolve_data_path(path: str) -> Path:
    """Use the path as given, falling back to $DCC_DATA_DIR when absent."""
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get("DCC_DATA_DIR")
    if root and (Path(root) / path).exists():
        return Path(root) / path
    raise FileNotFoundError(f"dataset {path!r} not found (DCC_DATA_DIR={root!r})")


def load_config_file(path: str) -> dict:
    p = Path(path)
    text = p.read_bytes()
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text.decode("utf-8"))


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    """Merge the config document with CLI overrides into one snapshot."""
    doc = load_config_file(args.config) if args.config else {}
    cfg = TrainConfig.from_dict(doc)
    if args.epochs is not None:
        drop = cfg.drop_epoch if cfg.drop_epoch <= args.epochs else max(1, int(0.8 * args.epochs))
        cfg = replace(cfg, max_epochs=args.epochs, drop_epoch=drop)
    if args.batch_size is not None:
        cfg = replace(cfg, batch_size=args.batch_size)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.multiview is not None:
        cfg = replace(cfg, multiview=args.multiview == "on")
    loss = cfg.loss
    if getattr(args, "alpha", None) is not None:
        loss = replace(loss, alpha=args.alpha)
    if getattr(args, "beta", None) is not None:
        loss = replace(loss, beta=args.beta)
    if getattr(args, "var_weight", None) is not None:
        loss = replace(loss, var_weight=args.var_weight)
    if getattr(args, "loss_space", None) is not None:
        loss = replace(loss, space=args.loss_space)
    model = cfg.model
    if args.modalities is not None:
        model = replace(model, modalities=parse_subset_letters(args.modalities))
    if loss.space == "global" and not model.global_heads:
        model = replace(model, global_heads=True)
    return replace(cfg, loss=loss, model=model)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    started = _now()
    dataset = synth_generate(
        n_classes=args.classes,
        n_performances=args.performances,
        n_views=args.views,
        n_joints=args.joints,
        n_frames=args.frames,
        noise_sd=args.noise,
        seed=args.seed,
    )
    out = Path(args.out)
    write_dataset(dataset, out)
    flags = {
        "classes": args.classes, "performances": args.performances,
        "views": args.views, "joints": args.joints, "frames": args.frames,
        "noise": args.noise,
    }
    write_manifest(out.with_name(out.name + ".manifest.json"), "synth",
                   flags, args.seed, started, [str(out)])
    print(f"wrote {len(dataset)} sequences to {out}")
    return 0


def cmd_ingest_ntu(args: argparse.Namespace) -> int:
    started = _now()
    dataset = ingest_directory(args.dir, split=args.split, part=args.part)
    out = Path(args.out)
    write_dataset(dataset, out)
    flags = {"dir": str(args.dir), "split": args.split, "part": args.part}
    write_manifest(out.with_name(out.name + ".manifest.json"), "ingest-ntu",
                   flags, 0, started, [str(out)])
    print(f"wrote {len(dataset)} sequences ({args.split}/{args.part}) to {out}")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    started = _now()
    cfg = build_train_config(args)
    dataset = read_dataset(resolve_data_path(args.data))
    if dataset.topology.n_joints != cfg.model.n_joints:
        raise SchemaError(
            f"dataset has {dataset.topology.n_joints} joints, model config expects "
            f"{cfg.model.n_joints}"
        )
    out_dir = Path(args.out_dir)
    result = pretrain(dataset, cfg, out_dir, resume=args.resume, workers=args.workers)
    write_manifest(out_dir / "manifest.json", "pretrain", cfg.to_dict(),
                   cfg.seed, started,
                   [str(result.checkpoint_path), str(result.metrics_path)])
    print(
        f"pretrained {result.epochs_run} epochs: first-epoch loss "
        f"{result.first_epoch_mean:.4f}, final-epoch loss {result.final_epoch_mean:.4f}"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _load_model(ckpt: str):
    return load_checkpoint(resolve_data_path(ckpt)).model


def cmd_eval(args: argparse.Namespace) -> int:
    started = _now()
    model = _load_model(args.ckpt)
    subset = parse_subset_letters(args.modalities) if args.modalities else None
    train_ds = read_dataset(resolve_data_path(args.train_data))
    test_ds = read_dataset(resolve_data_path(args.test_data))
    fraction = None
    finetuning = args.protocol in ("semi", "transfer")
    epochs = args.epochs if args.epochs is not None else (20 if finetuning else 200)
    lr = args.lr if args.lr is not None else (1e-3 if finetuning else 1e-2)
    if args.protocol == "linear":
        train_bank = extract_bank(model, train_ds, subset, split="train")
        test_bank = extract_bank(model, test_ds, subset, split="test")
        accuracy = linear_probe(train_bank, test_bank, epochs=epochs, lr=lr)
    elif args.protocol == "knn":
        train_bank = extract_bank(model, train_ds, subset, split="train")
        test_bank = extract_bank(model, test_ds, subset, split="test")
        accuracy = knn_retrieve(train_bank, test_bank, k=args.k)
    elif args.protocol == "semi":
        fraction = args.fraction
        accuracy = semi_supervised(model, train_ds, test_ds, fraction,
                                   epochs=epochs, lr=lr,
                                   seed=args.seed, modality_subset=subset)
    elif args.protocol == "transfer":
        accuracy = transfer(model, train_ds, test_ds, epochs=epochs,
                            lr=lr, seed=args.seed, modality_subset=subset)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(args.protocol)

    used = subset or model.cfg.modalities
    dataset_name = Path(args.test_data).stem
    print(
        f"{args.protocol} {subset_letters(used)} accuracy={accuracy:.4f}"
        + (f" fraction={fraction}" if fraction is not None else "")
    )
    csv_path = Path(args.csv)
    append_result(csv_path, args.protocol, dataset_name, used,
                  fraction, args.seed, accuracy)
    flags = {
        "ckpt": args.ckpt, "protocol": args.protocol,
        "train_data": args.train_data, "test_data": args.test_data,
        "modalities": subset_letters(used), "fraction": fraction,
        "epochs": epochs, "lr": lr, "k": args.k,
    }
    write_manifest(csv_path.with_name(csv_path.name + ".manifest.json"), "eval",
                   flags, args.seed, started, [str(csv_path)])
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    started = _now()
    model = _load_model(args.ckpt)
    subset = parse_subset_letters(args.modalities) if args.modalities else None
    dataset = read_dataset(resolve_data_path(args.data))
    bank = extract_bank(model, dataset, subset, split=args.split)
    out = Path(args.out)
    write_bank(bank, out)
    flags = {"ckpt": args.ckpt, "data": args.data,
             "modalities": subset_letters(bank.modality_subset), "split": args.split}
    write_manifest(out.with_name(out.name + ".manifest.json"), "export",
                   flags, 0, started, [str(out)])
    print(f"wrote bank of {len(bank)} x {bank.width} features to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelcompose",
        description="Multimodal skeleton representation pretraining and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-view dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--performances", type=int, default=600)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--joints", type=int, default=11)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synthetic.skd")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest-ntu", help="convert .skeleton files to SKD1")
    p.add_argument("--dir", required=True)
    p.add_argument("--split", choices=("xsub", "xview", "xsetup"), required=True)
    p.add_argument("--part", choices=("train", "test"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest_ntu)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--config", help="JSON or TOML TrainConfig document")
    p.add_argument("--data", required=True, help="SKD1 training data")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--alpha", type=float, help="decomposition weight")
    p.add_argument("--beta", type=float, help="composition weight")
    p.add_argument("--lambda", type=float, dest="var_weight",
                   help="variance hinge weight inside the VC regularizer")
    p.add_argument("--loss-space", choices=("stream", "global"))
    p.add_argument("--multiview", choices=("on", "off"))
    p.add_argument("--modalities", help="e.g. J,M,B")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--workers", type=int, default=1,
                   help="loader threads; >1 drops bitwise determinism")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="run a downstream protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--protocol", choices=("linear", "knn", "semi", "transfer"),
                   required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--modalities", help="e.g. J,M,B")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--epochs", type=int, help="probe or fine-tune epochs")
    p.add_argument("--lr", type=float, help="probe or fine-tune learning rate")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default="results.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write a feature bank (FBK1)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modalities", help="e.g. J,M,B")
    p.add_argument("--split", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (SchemaError, ParseError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
