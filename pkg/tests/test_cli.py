import json
from pathlib import Path

import numpy as np
import pytest
import torch

from docillum.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from docillum.imaging import read_manifest, read_png, write_png
from docillum.lpnet import LPNet, save_lpnet

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = ["data.count=4", "data.size=24", "data.heldout=2", "lpnet.epochs=1", "lpnet.decay_epochs=1", "lpnet.batch=2",
        "lpnet.crop=16", "lpnet.depth=1", "train.epochs=2", "train.batch=2", "train.crop=16",
        "train.constant_epochs=1", "train.decay_epochs=1", "train.base_channels=4",
        "train.disc_channels=4", "train.checkpoint_every=1"]


def sets(run_dir, extra=()):
    out = []
    for item in [f"run_dir={run_dir}", *TINY, *extra]:
        out += ["--set", item]
    return out


def test_synth_data_refuses_non_empty_dir(tmp_path):
    out = tmp_path / "d"
    assert main(["synth-data", "--out", str(out), "--count", "2", "--size", "16"]) == EXIT_OK
    assert len(read_manifest(out / "manifest.json").pool("abnormal")) == 2
    assert main(["synth-data", "--out", str(out), "--count", "2", "--size", "16"]) == EXIT_CONFIG
    assert main(["synth-data", "--out", str(out), "--count", "1", "--size", "16", "--force"]) == EXIT_OK


def test_synth_data_counts_and_determinism(tmp_path):
    for name in ("a", "b"):
        argv = ["synth-data", "--out", str(tmp_path / name), "--count", "200", "--size", "256", "--seed", "7"]
        assert main(argv) == EXIT_OK
    m = read_manifest(tmp_path / "a" / "manifest.json")
    assert [len(m.pool(p)) for p in ("abnormal", "normal", "heldout-paired")] == [200, 200, 40]
    assert (tmp_path / "a" / "manifest.json").read_text() == (tmp_path / "b" / "manifest.json").read_text()
    for e in m.pool("heldout-paired")[:5]:
        assert (tmp_path / "a" / e.path).read_bytes() == (tmp_path / "b" / e.path).read_bytes()
    assert main(["synth-data", "--out", str(tmp_path / "empty"), "--count", "0"]) == EXIT_OK


def test_config_errors_exit_2(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["pipeline", "--config", str(CONFIGS / "toy.yaml"), "--set", "train.bogus=1"]) == EXIT_CONFIG
    assert main(["pipeline"]) == EXIT_CONFIG
    assert main(["train-gan", "--config", str(CONFIGS / "toy.yaml")]) == EXIT_CONFIG


def test_pipeline_end_to_end_and_resume(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["pipeline", "--config", str(CONFIGS / "toy.yaml"), *sets(run)]) == EXIT_OK
    exp = json.loads((run / "experiment.json").read_text())
    assert set(exp["stages"]) == {"data", "train-lpnet", "train-gan", "evaluate"}
    report = json.loads((run / "eval" / "report.json").read_text())
    assert report["count"] == 2 and "ms_ssim" in report["mean"]
    assert (run / "eval" / "report.csv").exists()
    # a second run into the same directory must be an explicit resume
    assert main(["pipeline", "--config", str(CONFIGS / "toy.yaml"), *sets(run)]) == EXIT_CONFIG
    assert main(["pipeline", "--resume", str(run)]) == EXIT_OK

    ckpt = sorted((run / "gan" / "checkpoints").glob("*.pt"))[-1]
    img = np.random.default_rng(0).uniform(-1, 1, (21, 35, 3)).astype(np.float32)
    write_png(tmp_path / "in.png", img)
    assert main(["infer", "--checkpoint", str(ckpt), "--input", str(tmp_path / "in.png"),
                 "--output", str(tmp_path / "out.png")]) == EXIT_OK
    assert read_png(tmp_path / "out.png").shape == (21, 35, 3)

    capsys.readouterr()
    assert main(["evaluate", "--manifest", str(run / "data" / "manifest.json"), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path / "ev"), "--area", "0", "--json"]) == EXIT_OK
    mean = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert mean["ms_ssim"] == pytest.approx(report["mean"]["ms_ssim"], abs=1e-9)


def test_divergence_exits_3(tmp_path):
    main(["synth-data", "--out", str(tmp_path / "d"), "--count", "2", "--size", "24"])
    torch.manual_seed(0)
    lp = LPNet(1)
    with torch.no_grad():
        lp.head.bias.fill_(float("nan"))
    save_lpnet(lp, tmp_path / "lp.pt")
    argv = ["train-gan", "--config", str(CONFIGS / "toy.yaml"), "--manifest", str(tmp_path / "d" / "manifest.json"),
            *sets(tmp_path / "run", [f"train.lpnet_checkpoint={tmp_path / 'lp.pt'}"])]
    assert main(argv) == EXIT_RUNTIME


def test_external_lpnet_checkpoint_is_reused(tmp_path):
    torch.manual_seed(0)
    save_lpnet(LPNet(1), tmp_path / "lp.pt")
    run = tmp_path / "run"
    argv = ["pipeline", "--config", str(CONFIGS / "toy.yaml"),
            *sets(run, [f"train.lpnet_checkpoint={tmp_path / 'lp.pt'}", "train.epochs=1",
                        "train.constant_epochs=1", "train.decay_epochs=0"])]
    assert main(argv) == EXIT_OK
    assert "train-lpnet" not in json.loads((run / "experiment.json").read_text())["stages"]
