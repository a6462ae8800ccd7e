"""End-to-end command-line workflow and exit-code contract."""

import os

import numpy as np
import pytest

from pcdistill.cli import main
from pcdistill.config import build_config, dump_config, parse_config_file

TINY = [
    "--set", "train.n_scenes=2",
    "--set", "train.n_eval_scenes=1",
    "--set", "train.batch_size=2",
    "--set", "train.steps=1",
]


def test_dump_config_round_trips(tmp_path):
    out = tmp_path / "config.txt"
    assert main(["dump-config", "--out", str(out)]) == 0
    overrides = parse_config_file(str(out))
    assert dump_config(build_config(overrides)) == out.read_text()


def test_dump_config_reflects_overrides(capsys):
    assert main(["dump-config", "--set", "train.lr0=0.125"]) == 0
    assert "train.lr0=0.125" in capsys.readouterr().out


def test_synth_gen_writes_scenes_and_images(tmp_path, capsys):
    out = tmp_path / "scenes"
    assert main(["synth-gen", "--out", str(out), "--count", "2"]) == 0
    names = sorted(os.listdir(out))
    assert "scene_000.bin" in names and "scene_001.bin" in names
    assert "scene_000_view0.ppm" in names and "scene_000_view1.ppm" in names
    text = capsys.readouterr().out
    assert "0 texel violations" in text


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["pretrain", "--out", str(out)] + TINY)
    assert rc == 0
    return out


def test_pretrain_writes_artifacts(run_dir, capsys):
    names = sorted(os.listdir(run_dir))
    assert names == ["checkpoint.bin", "config.txt", "history.csv"]
    history = (run_dir / "history.csv").read_text().strip().split("\n")
    assert history[0].startswith("step,lr,total")
    assert len(history) == 2  # header + one step


def test_probe_runs_from_run_directory(run_dir, capsys):
    ckpt = str(run_dir / "checkpoint.bin")
    assert main(["probe", "--checkpoint", ckpt]) == 0
    out = capsys.readouterr().out
    assert "pretrained probe: mIoU" in out
    assert main(["probe", "--checkpoint", ckpt, "--scratch"]) == 0
    assert "scratch probe: mIoU" in capsys.readouterr().out


def test_render_depth_writes_composites(run_dir, tmp_path, capsys):
    ckpt = str(run_dir / "checkpoint.bin")
    out = tmp_path / "depth"
    assert main(["render-depth", "--checkpoint", ckpt, "--out", str(out), "--count", "1"]) == 0
    names = sorted(os.listdir(out))
    assert names == ["depth_000_view0.ppm", "depth_000_view1.ppm"]
    text = capsys.readouterr().out
    assert "depth BCE" in text and "uniform predictor" in text

    from pcdistill.synth import read_ppm
    from pcdistill.config import build_config

    img = read_ppm(out / "depth_000_view0.ppm")
    cfg = build_config({})
    assert img.shape[1] == 3 * cfg.scene.image_width  # three panels abreast


def test_sweep_writes_csv(tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--out", str(out), "--seeds", "0", "--no-ratio"] + TINY)
    assert rc == 0
    lines = (out / "sweep.csv").read_text().strip().split("\n")
    assert lines[0] == "setting,seed,alpha,beta,miou,fwiou"
    settings = [line.split(",")[0] for line in lines[1:]]
    assert settings == ["scratch", "ipv-only", "bev-only", "hybrid"]
    assert "hybrid: mean mIoU" in capsys.readouterr().out


def test_grad_check_passes(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "info_nce" in out and "depth_pipeline" in out and "worst" in out


def test_grad_check_fails_at_zero_tolerance(capsys):
    assert main(["grad-check", "--tolerance", "0"]) == 4


# -- failure modes ------------------------------------------------------------


def test_bad_set_syntax_is_usage_error():
    assert main(["dump-config", "--set", "train.lr0"]) == 2


def test_unknown_config_key_is_usage_error():
    assert main(["dump-config", "--set", "train.no_such_field=1"]) == 2


def test_malformed_value_is_usage_error():
    assert main(["dump-config", "--set", "train.steps=banana"]) == 2


def test_missing_config_file_is_io_error():
    assert main(["dump-config", "--config", "/does/not/exist.txt"]) == 3


def test_missing_checkpoint_is_io_error():
    assert main(["probe", "--checkpoint", "/does/not/exist.bin"]) == 3


def test_corrupt_checkpoint_is_checkpoint_error(tmp_path):
    ckpt = tmp_path / "bad.bin"
    ckpt.write_bytes(b"not a checkpoint at all")
    cfg = tmp_path / "config.txt"
    assert main(["dump-config", "--out", str(cfg)]) == 0
    rc = main(["probe", "--checkpoint", str(ckpt), "--run-config", str(cfg)])
    assert rc == 5


def test_unknown_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit):
        main(["no-such-command"])
