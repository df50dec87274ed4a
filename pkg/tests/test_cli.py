"""End-to-end command-line behavior, exit codes, and run manifests."""

import json

import numpy as np
import pytest

from skelcompose.cli import main
from skelcompose.dataset_io import read_dataset
from skelcompose.evaluation import read_bank
from skelcompose.training import read_checkpoint_header


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def synth_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "tiny.skd"
    code = run_cli(
        "synth", "--classes", 2, "--performances", 8, "--views", 2,
        "--joints", 5, "--frames", 8, "--noise", "0.01", "--seed", 3,
        "--out", out,
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def desk_cfg_file(tmp_path_factory):
    cfg = {
        "batch_size": 4,
        "max_epochs": 2,
        "drop_epoch": 2,
        "seed": 0,
        "model": {"embed_dim": 8, "frames": 8, "n_joints": 5,
                  "n_heads": 2, "ffn_mult": 2},
        "augment": {"frames": 8},
    }
    path = tmp_path_factory.mktemp("cfg") / "desk.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory, synth_file, desk_cfg_file):
    out_dir = tmp_path_factory.mktemp("run")
    code = run_cli(
        "pretrain", "--config", desk_cfg_file, "--data", synth_file,
        "--out-dir", out_dir,
    )
    assert code == 0
    return out_dir


class TestSynth:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.skd", tmp_path / "b.skd"
        for out in (a, b):
            assert run_cli("synth", "--classes", 2, "--performances", 6,
                           "--views", 2, "--joints", 5, "--frames", 8,
                           "--seed", 7, "--out", out) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_views_usage_error(self, tmp_path):
        assert run_cli("synth", "--views", 0, "--out", tmp_path / "x.skd") == 2

    def test_manifest_written(self, synth_file):
        manifest = json.loads(
            (synth_file.parent / (synth_file.name + ".manifest.json")).read_text()
        )
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 3
        assert manifest["outputs"] == [str(synth_file)]
        assert manifest["code_version"]


class TestPretrain:
    def test_outputs_exist(self, pretrained):
        assert (pretrained / "checkpoint.dcc").exists()
        assert (pretrained / "metrics.jsonl").exists()
        manifest = json.loads((pretrained / "manifest.json").read_text())
        assert manifest["command"] == "pretrain"
        assert manifest["config"]["max_epochs"] == 2

    def test_checkpoint_header_carries_config(self, pretrained):
        header = read_checkpoint_header(pretrained / "checkpoint.dcc")
        assert header["model_config"]["embed_dim"] == 8
        assert header["epoch"] == 2

    def test_mismatched_joints_is_data_error(self, tmp_path, desk_cfg_file):
        bad = tmp_path / "bad.skd"
        assert run_cli("synth", "--classes", 2, "--performances", 6, "--views", 1,
                       "--joints", 7, "--frames", 8, "--out", bad) == 0
        code = run_cli("pretrain", "--config", desk_cfg_file, "--data", bad,
                       "--out-dir", tmp_path / "run")
        assert code == 3

    def test_numerical_blowup_exit_code(self, tmp_path, synth_file):
        # An absurd learning rate drives float32 activations to inf; the
        # trainer must abort with the numerical-failure exit code.
        cfg = {
            "batch_size": 4, "max_epochs": 3, "drop_epoch": 3, "seed": 0,
            "base_lr": 1e28,
            "model": {"embed_dim": 8, "frames": 8, "n_joints": 5,
                      "n_heads": 2, "ffn_mult": 2},
            "augment": {"frames": 8},
        }
        cfg_path = tmp_path / "hot.json"
        cfg_path.write_text(json.dumps(cfg))
        code = run_cli(
            "pretrain", "--config", cfg_path, "--data", synth_file,
            "--out-dir", tmp_path / "run",
        )
        assert code == 4

    def test_flag_overrides_land_in_manifest(self, tmp_path, desk_cfg_file, synth_file):
        out_dir = tmp_path / "run"
        code = run_cli(
            "pretrain", "--config", desk_cfg_file, "--data", synth_file,
            "--out-dir", out_dir, "--alpha", "0.5", "--beta", "2.0",
            "--epochs", "1", "--multiview", "off", "--modalities", "J,B",
        )
        assert code == 0
        cfg = json.loads((out_dir / "manifest.json").read_text())["config"]
        assert cfg["loss"]["alpha"] == 0.5 and cfg["loss"]["beta"] == 2.0
        assert cfg["multiview"] is False
        assert cfg["model"]["modalities"] == ["joint", "bone"]

    def test_desk_model_smoke_under_60s(self, tmp_path):
        # Two epochs at the desk architecture complete comfortably within
        # the one-minute budget on a laptop CPU.
        import time

        data = tmp_path / "desk.skd"
        assert run_cli("synth", "--classes", 4, "--performances", 80, "--views", 2,
                       "--seed", 1, "--out", data) == 0
        cfg = tmp_path / "desk.json"
        cfg.write_text(json.dumps({"batch_size": 64, "max_epochs": 2, "drop_epoch": 2}))
        started = time.time()
        assert run_cli("pretrain", "--config", cfg, "--data", data,
                       "--out-dir", tmp_path / "run") == 0
        assert time.time() - started < 60.0
        assert (tmp_path / "run" / "checkpoint.dcc").exists()
        assert (tmp_path / "run" / "metrics.jsonl").exists()

    def test_manifest_snapshot_reruns_identically(self, tmp_path, pretrained, synth_file):
        # The manifest's config snapshot drives a rerun that reproduces the
        # original metrics byte for byte.
        from skelcompose.dataset_io import read_dataset
        from skelcompose.training import TrainConfig, pretrain

        snapshot = json.loads((pretrained / "manifest.json").read_text())["config"]
        cfg = TrainConfig.from_dict(snapshot)
        rerun = pretrain(read_dataset(synth_file), cfg, tmp_path / "rerun")
        assert rerun.metrics_path.read_text() == (pretrained / "metrics.jsonl").read_text()

    def test_toml_config_accepted(self, tmp_path, synth_file):
        cfg = tmp_path / "desk.toml"
        cfg.write_text(
            "batch_size = 4\nmax_epochs = 1\ndrop_epoch = 1\n"
            "[model]\nembed_dim = 8\nframes = 8\nn_joints = 5\n"
            "[augment]\nframes = 8\n"
        )
        assert run_cli("pretrain", "--config", cfg, "--data", synth_file,
                       "--out-dir", tmp_path / "run") == 0


class TestEval:
    def test_knn_appends_csv_row(self, tmp_path, pretrained, synth_file, capsys):
        csv_path = tmp_path / "results.csv"
        code = run_cli(
            "eval", "--ckpt", pretrained / "checkpoint.dcc", "--protocol", "knn",
            "--train-data", synth_file, "--test-data", synth_file,
            "--modalities", "J", "--csv", csv_path,
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "knn J accuracy=" in out
        rows = csv_path.read_text().splitlines()
        assert rows[0].startswith("protocol,")
        assert rows[1].startswith("knn,")

    def test_distinct_modalities_distinct_rows(self, tmp_path, pretrained, synth_file):
        csv_path = tmp_path / "results.csv"
        for mods in ("J", "J,M,B"):
            assert run_cli(
                "eval", "--ckpt", pretrained / "checkpoint.dcc",
                "--protocol", "linear", "--epochs", 20,
                "--train-data", synth_file, "--test-data", synth_file,
                "--modalities", mods, "--csv", csv_path,
            ) == 0
        rows = csv_path.read_text().splitlines()
        assert len(rows) == 3
        subsets = {r.split(",")[2] for r in rows[1:]}
        assert subsets == {"J", "J+M+B"}

    def test_semi_protocol(self, tmp_path, pretrained, synth_file):
        assert run_cli(
            "eval", "--ckpt", pretrained / "checkpoint.dcc", "--protocol", "semi",
            "--train-data", synth_file, "--test-data", synth_file,
            "--fraction", "0.5", "--epochs", 1, "--csv", tmp_path / "r.csv",
        ) == 0

    def test_missing_data_usage_error(self, tmp_path, pretrained):
        assert run_cli(
            "eval", "--ckpt", pretrained / "checkpoint.dcc", "--protocol", "knn",
            "--train-data", tmp_path / "nope.skd",
            "--test-data", tmp_path / "nope.skd",
        ) == 2


class TestExport:
    def test_bank_round_trip(self, tmp_path, pretrained, synth_file):
        out = tmp_path / "bank.fbk"
        assert run_cli(
            "export", "--ckpt", pretrained / "checkpoint.dcc", "--data", synth_file,
            "--modalities", "J,B", "--split", "train", "--out", out,
        ) == 0
        bank = read_bank(out)
        data = read_dataset(synth_file)
        assert bank.features.shape == (len(data), 16)
        assert bank.modality_subset == ("joint", "bone")
        assert (tmp_path / "bank.fbk.manifest.json").exists()


class TestIngest:
    def _write_clip(self, path):
        lines = ["2"]
        rng = np.random.default_rng(0)
        for _ in range(2):
            lines.append("1")
            lines.append("1 0 1 1 1 1 0 0.0 0.0 2")
            lines.append("25")
            for j in range(25):
                x, y, z = rng.normal(size=3)
                lines.append(f"{x:.4f} {y:.4f} {z:.4f} 0 0 0 0 1 0 0 0 2")
        path.write_text("\n".join(lines) + "\n")

    def test_xview_c001_lands_in_test(self, tmp_path):
        src = tmp_path / "raw"
        src.mkdir()
        self._write_clip(src / "S001C001P001R001A001.skeleton")
        self._write_clip(src / "S001C002P001R001A001.skeleton")
        out = tmp_path / "test.skd"
        assert run_cli("ingest-ntu", "--dir", src, "--split", "xview",
                       "--part", "test", "--out", out) == 0
        ds = read_dataset(out)
        assert len(ds) == 1 and ds.sequences[0].camera_id == 1

    def test_empty_directory_data_error(self, tmp_path):
        src = tmp_path / "empty"
        src.mkdir()
        assert run_cli("ingest-ntu", "--dir", src, "--split", "xview",
                       "--part", "train", "--out", tmp_path / "o.skd") == 3

    def test_same_directory_twice_identical_files(self, tmp_path):
        src = tmp_path / "raw"
        src.mkdir()
        self._write_clip(src / "S001C002P001R001A001.skeleton")
        a, b = tmp_path / "a.skd", tmp_path / "b.skd"
        for out in (a, b):
            assert run_cli("ingest-ntu", "--dir", src, "--split", "xview",
                           "--part", "train", "--out", out) == 0
        assert a.read_bytes() == b.read_bytes()


def test_unknown_command_usage_error():
    assert run_cli("frobnicate") == 2
