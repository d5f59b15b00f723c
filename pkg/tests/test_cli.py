import csv
import re
import hashlib
import json
from pathlib import Path

import pytest
import torch

from diffordinal import checkpoint as ckpt_mod
from diffordinal.checkpoint import load_checkpoint
from diffordinal.cli import main
from diffordinal.model import DiffusionAR
from diffordinal.synth import SynthConfig

SMALL = ["--width", "16", "--depth", "1", "--feature-dim", "8", "--encoder-hidden", "16",
         "--diffusion-steps", "50", "--inference-steps", "10", "--samples-per-step", "2"]


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--n", "100", "--n-test", "40", "--d", "6", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    rc = main(["train", "--data", str(data_dir / "train.txt"), "--epochs", "2", "--checkpoint",
               str(run / "m.pt"), *SMALL])
    assert rc == 0
    return run / "m.pt"


def test_gen_data_default_flags(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path)]) == 0
    for name in ("train.txt", "train_latents.txt", "test.txt", "test_latents.txt", "manifest.json"):
        assert (tmp_path / name).exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert SynthConfig(**manifest["synth"]) == SynthConfig()
    assert 0 < manifest["bayes_accuracy"]["test"] <= 1


def test_gen_data_same_seed_same_digests(tmp_path):
    for sub in ("a", "b"):
        assert main(["gen-data", "--seed", "7", "--n", "300", "--out", str(tmp_path / sub)]) == 0
    for name in ("train.txt", "test.txt", "train_latents.txt", "manifest.json"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)


def test_gen_data_rejects_k1(tmp_path, capsys):
    assert main(["gen-data", "--k", "1", "--out", str(tmp_path)]) == 2
    assert "num_classes" in capsys.readouterr().err


def test_train_one_epoch_log(data_dir, tmp_path, capsys):
    rc = main(["train", "--data", str(data_dir / "train.txt"), "--epochs", "1",
               "--checkpoint", str(tmp_path / "m.pt"), *SMALL])
    assert rc == 0
    log = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 1 and len(log[0]["step_losses"]) == 4
    assert "epoch 1/1" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "train_manifest.json").read_text())
    assert manifest["config"]["epochs"] == 1 and set(manifest["seeds"]["streams"]) >= {"data", "init"}


def test_train_requires_epochs(data_dir, tmp_path, capsys):
    assert main(["train", "--data", str(data_dir / "train.txt"), "--checkpoint", str(tmp_path / "m.pt")]) == 2
    assert "epochs" in capsys.readouterr().err


def test_config_file_and_flag_precedence(data_dir, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"data: {data_dir / 'train.txt'}\nepochs: 1\nwidth: 12\ndepth: 1\nfeature_dim: 4\n"
                   f"diffusion_steps: 40\ninference_steps: 5\ncheckpoint: {tmp_path / 'm.pt'}\n")
    assert main(["train", "--config", str(cfg), "--width", "10"]) == 0
    saved = load_checkpoint(tmp_path / "m.pt")["config"]
    assert saved["width"] == 10 and saved["feature_dim"] == 4 and saved["lr"] == 1e-3


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("widht: 3\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "widht" in capsys.readouterr().err


def test_class_count_mismatch_with_file(data_dir, tmp_path, capsys):
    rc = main(["train", "--data", str(data_dir / "train.txt"), "--epochs", "1", "--num-classes", "4",
               "--checkpoint", str(tmp_path / "m.pt")])
    assert rc == 2 and "num_classes" in capsys.readouterr().err


def test_nan_loss_aborts_with_exit_3(data_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(DiffusionAR, "step_losses", lambda self, x, y, g=None: torch.full((len(y), 4), float("nan"), requires_grad=True))
    rc = main(["train", "--data", str(data_dir / "train.txt"), "--epochs", "1",
               "--checkpoint", str(tmp_path / "m.pt"), *SMALL])
    assert rc == 3 and "non-finite" in capsys.readouterr().err


def test_resume_matches_uninterrupted(data_dir, tmp_path):
    common = ["--data", str(data_dir / "train.txt"), *SMALL]
    assert main(["train", *common, "--epochs", "4", "--checkpoint", str(tmp_path / "full.pt")]) == 0
    assert main(["train", *common, "--epochs", "2", "--checkpoint", str(tmp_path / "part.pt")]) == 0
    assert main(["train", *common, "--epochs", "4", "--checkpoint", str(tmp_path / "part.pt"), "--resume"]) == 0
    full, part = load_checkpoint(tmp_path / "full.pt"), load_checkpoint(tmp_path / "part.pt")
    assert full["epoch"] == part["epoch"] == 4
    assert full["log"] == part["log"]
    assert all(torch.equal(full["model"][k], part["model"][k]) for k in full["model"])


def test_interrupted_checkpoint_write_keeps_previous(trained, monkeypatch):
    before = sha(trained)
    ck = load_checkpoint(trained)

    def broken_save(obj, path):
        Path(path).write_bytes(b"partial")
        raise KeyboardInterrupt

    monkeypatch.setattr(ckpt_mod.torch, "save", broken_save)
    from diffordinal.checkpoint import restore, save_checkpoint

    model, opt, cfg = restore(ck)
    with pytest.raises(KeyboardInterrupt):
        save_checkpoint(trained, model, opt, cfg, ck["in_dim"], 99, [])
    assert sha(trained) == before
    assert not [p for p in trained.parent.iterdir() if p.name.endswith(".tmp")]


def test_eval_outputs_and_determinism(trained, data_dir, tmp_path):
    args = ["eval", "--checkpoint", str(trained), "--test-data", str(data_dir / "test.txt")]
    assert main([*args, "--report-dir", str(tmp_path / "a")]) == 0
    assert main([*args, "--report-dir", str(tmp_path / "b")]) == 0
    for name in ("report.json", "report.txt", "breakdown.csv", "breakdown.svg"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name), name
    with open(tmp_path / "a" / "breakdown.csv") as fh:
        for row in csv.DictReader(fh):
            total = float(row["correct_pct"]) + float(row["adjacent_pct"]) + float(row["other_pct"])
            assert abs(total - 100) <= 1e-9
    svg = (tmp_path / "a" / "breakdown.svg").read_text()
    # self-contained: every href is an in-document reference
    assert svg.lstrip().startswith("<?xml") and "</svg>" in svg
    assert all(h.startswith("#") for h in re.findall(r'href="([^"]*)"', svg))
    doc = json.loads((tmp_path / "a" / "report.json").read_text())
    assert doc["metrics"]["invalid_sequence_rate"] is not None


def test_eval_rejects_incompatible_config(trained, data_dir, tmp_path, capsys):
    rc = main(["eval", "--checkpoint", str(trained), "--test-data", str(data_dir / "test.txt"),
               "--width", "32", "--report-dir", str(tmp_path)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "mismatch" in err and "width" in err


def _vector(data_dir, n=None):
    row = (data_dir / "test.txt").read_text().splitlines()[1].split(",")[1:]
    return ",".join(row if n is None else row[:n])


def test_predict_prints_trace(trained, data_dir, capsys):
    assert main(["predict", "--checkpoint", str(trained), "--vector", _vector(data_dir)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 + 4 + 1
    assert lines[-1].startswith("class ")
    assert len(lines[1].split()[3].split(",")) == 2  # samples_per_step from checkpoint config


def test_predict_single_sample_column(trained, data_dir, capsys):
    assert main(["predict", "--checkpoint", str(trained), "--samples-per-step", "1",
                 "--vector", _vector(data_dir)]) == 0
    step_lines = capsys.readouterr().out.strip().splitlines()[1:-1]
    assert all(len(line.split()[3].split(",")) == 1 for line in step_lines)


def test_predict_wrong_dimension(trained, data_dir, capsys):
    assert main(["predict", "--checkpoint", str(trained), "--vector", _vector(data_dir, 3)]) == 2
    err = capsys.readouterr().err
    assert "3" in err and "expected 6" in err


def test_report_comparison(trained, data_dir, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(trained), "--test-data", str(data_dir / "test.txt"),
                 "--report-dir", str(tmp_path / "r1")]) == 0
    assert main(["report", str(tmp_path / "r1" / "report.json"), str(tmp_path / "r1" / "report.json"),
                 "--names", "a", "b", "--out", str(tmp_path / "cmp")]) == 0
    out = capsys.readouterr().out
    assert "accuracy" in out and "\na " in out
    rows = list(csv.DictReader(open(tmp_path / "cmp" / "comparison.csv")))
    assert [r["run"] for r in rows] == ["a", "b"]


def test_separable_softmax_is_perfect(tmp_path):
    d = tmp_path / "d"
    assert main(["gen-data", "--n", "1000", "--n-test", "200", "--ambiguity", "0.01", "--out", str(d)]) == 0
    assert main(["train", "--head", "softmax", "--data", str(d / "train.txt"), "--epochs", "30",
                 "--lr", "0.01", "--checkpoint", str(tmp_path / "m.pt")]) == 0
    assert main(["eval", "--checkpoint", str(tmp_path / "m.pt"), "--test-data", str(d / "test.txt"),
                 "--report-dir", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "report.json").read_text())["metrics"]["accuracy"] == 1.0


def test_separable_loss_decreases_over_first_five_epochs(tmp_path):
    d = tmp_path / "d"
    assert main(["gen-data", "--n", "2000", "--n-test", "0", "--ambiguity", "0.01", "--out", str(d)]) == 0
    assert main(["train", "--data", str(d / "train.txt"), "--epochs", "5", "--checkpoint", str(tmp_path / "m.pt")]) == 0
    losses = [r["loss"] for r in load_checkpoint(tmp_path / "m.pt")["log"]]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses
