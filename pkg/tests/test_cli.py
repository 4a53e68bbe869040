"""Command-line interface: help, exit codes, the full pipeline and seeded determinism."""

import xml.etree.ElementTree as ET

import pytest

from acoustic_screen.audio import DatasetManifest, read_wav
from acoustic_screen.cli import run
from acoustic_screen.synth import low_band_fraction

SUBCOMMANDS = [
    "preprocess", "featurize", "train", "pretrain-avg", "pretrain-ssl", "extract-ssl", "predict",
    "ensemble", "fuse", "cv", "auc", "plot-roc", "plot-spec", "synth-data",
]  # fmt: skip

SMALL_CONFIG = """\
model:
  hidden: 16
  ffn_dim: 32
train:
  epochs: 3
folds:
  k: 3
"""


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["synth-data", "--n", "30", "--out", str(root / "data")]) == 0
    return root, write(root / "small.yaml", SMALL_CONFIG), str(root / "data" / "manifest.csv")


# ---------------------------------------------------------------- help and exit codes


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_top_level_help_and_usage_errors(capsys):
    assert run(["--help"]) == 0
    assert run([]) == 1
    assert run(["nosuch"]) == 1
    assert run(["auc"]) == 1  # missing required options
    assert run(["cv", "--manifest", "x.csv", "--out", "o", "--jobs", "0"]) == 1
    assert run(["fuse", "--in", "a,b", "--out", "o"]) == 1


def test_data_errors_exit_two(tmp_path, capsys):
    assert run(["auc", "--scores", str(tmp_path / "missing.txt"), "--labels", str(tmp_path / "m.csv")]) == 2
    bad = write(tmp_path / "bad.yaml", "train:\n  nosuch: 1\n")
    assert run(["synth-data", "--n", "10", "--out", str(tmp_path / "d"), "--config", bad]) == 2
    assert run(["synth-data", "--n", "3", "--out", str(tmp_path / "d")]) == 2
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------- scoring utilities


def test_fuse_auc_ensemble(tmp_path, capsys):
    b = write(tmp_path / "b.txt", "p1 0.3\np2 0.9\n")
    c = write(tmp_path / "c.txt", "p1 0.6\np2 0.1\n")
    s = write(tmp_path / "s.txt", "p1 0.9\np2 0.2\n")
    out = tmp_path / "f.txt"
    assert run(["fuse", "--weights", "1/3,1/3,1/3", "--in", f"{b},{c},{s}", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "p1 0.600000"
    assert run(["fuse", "--weights", "0.5,0.3,0.3", "--in", f"{b},{c},{s}", "--out", str(out)]) == 2

    write(tmp_path / "x.wav", "")
    write(tmp_path / "y.wav", "")
    labels = write(tmp_path / "m.csv", "id,path,label,task\np1,x.wav,p,cough\np2,y.wav,n,cough\n")
    capsys.readouterr()
    assert run(["auc", "--scores", str(out), "--labels", labels]) == 0
    assert capsys.readouterr().out.strip() == "1.000000"

    ens = tmp_path / "e.txt"
    assert run(["ensemble", "--sup", b, "--ssl", c, "--mu", "0.7", "--out", str(ens)]) == 0
    assert ens.read_text().splitlines()[1] == "p2 0.660000"
    assert run(["plot-roc", "--scores", f"{b},{out}", "--labels", labels, "--out", str(tmp_path / "r.svg")]) == 0
    ET.parse(tmp_path / "r.svg")


# ---------------------------------------------------------------- synthetic data


def test_synth_data_is_deterministic_and_separable(tmp_path):
    for name in ("a", "b"):
        assert run(["synth-data", "--n", "24", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    m = DatasetManifest.from_csv(tmp_path / "a" / "manifest.csv")
    assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()
    for e in m:
        assert (tmp_path / "b" / "wav" / e.path.name).read_bytes() == e.path.read_bytes()
        clip = read_wav(e.path)
        frac = low_band_fraction(clip.samples, clip.sample_rate)
        assert frac > 0.8 if e.label == 1 else frac < 0.5
    assert m.class_counts() == (12, 12)
    assert {e.task for e in m} == {"breath", "cough", "speech"}


# ---------------------------------------------------------------- full pipeline


def test_pipeline_end_to_end(workspace, tmp_path, capsys):
    root, cfg, manifest = workspace
    o = tmp_path
    assert run(["preprocess", "--manifest", manifest, "--out", str(o / "pre"), "--config", cfg]) == 0
    pre = str(o / "pre" / "manifest.csv")
    assert len(DatasetManifest.from_csv(pre)) == 30

    assert run(["featurize", "--manifest", manifest, "--out", str(o / "feat"), "--config", cfg]) == 0
    assert len(list((o / "feat").glob("*.feat"))) == 30
    assert run(["featurize", "--manifest", manifest, "--kind", "spectrogram", "--out", str(o / "spec")]) == 0

    assert run(["pretrain-avg", "--manifest", manifest, "--out", str(o / "avg.ckpt"), "--epochs", "2",
                "--task-models", str(o / "tasks"), "--config", cfg]) == 0  # fmt: skip
    assert sorted(p.name for p in (o / "tasks").iterdir()) == ["breath.ckpt", "cough.ckpt", "speech.ckpt"]

    common = ["--manifest", manifest, "--task", "cough", "--config", cfg]
    assert run(["train", *common, "--features", str(o / "feat"), "--init", str(o / "avg.ckpt"),
                "--val", manifest, "--log", str(o / "log.csv"), "--out", str(o / "m.ckpt")]) == 0  # fmt: skip
    assert (o / "log.csv").read_text().splitlines()[0].startswith("epoch")
    assert len((o / "log.csv").read_text().splitlines()) == 1 + 3

    assert run(["predict", *common, "--model", str(o / "m.ckpt"), "--out", str(o / "sup.txt")]) == 0
    assert len((o / "sup.txt").read_text().splitlines()) == 10

    assert run(["pretrain-ssl", "--manifest", manifest, "--steps", "3", "--out", str(o / "ssl.ckpt"),
                "--log", str(o / "ssl.csv"), "--config", cfg]) == 0  # fmt: skip
    assert len((o / "ssl.csv").read_text().splitlines()) == 4
    assert run(["extract-ssl", *common, "--ckpt", str(o / "ssl.ckpt"), "--out", str(o / "sslfeat")]) == 0
    assert len(list((o / "sslfeat").glob("*.feat"))) == 10
    assert run(["train", *common, "--features", str(o / "sslfeat"), "--out", str(o / "s.ckpt")]) == 0
    assert run(["predict", *common, "--features", str(o / "sslfeat"), "--model", str(o / "s.ckpt"),
                "--out", str(o / "ssl.txt")]) == 0  # fmt: skip
    assert run(["ensemble", "--sup", str(o / "sup.txt"), "--ssl", str(o / "ssl.txt"), "--out", str(o / "ens.txt")]) == 0

    wav = str(DatasetManifest.from_csv(manifest).entries[0].path)
    assert run(["plot-spec", "--wav", wav, "--out", str(o / "s.pgm"), "--svg"]) == 0
    assert (o / "s.pgm").read_bytes().startswith(b"P5")

    # a model trained on MFCC cannot score SSL features
    assert run(["predict", *common, "--features", str(o / "sslfeat"), "--model", str(o / "m.ckpt"),
                "--out", str(o / "x.txt")]) == 2  # fmt: skip


def test_cv_outputs_byte_identical_with_same_seed(workspace, tmp_path, capsys):
    root, cfg, manifest = workspace
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["cv", "--manifest", manifest, "--seed", "5", "--out", str(out), "--config", cfg,
                    "--test", manifest, "--jobs", "2" if name == "b" else "1"]) == 0  # fmt: skip
        outs.append(out)
    text = capsys.readouterr().out
    assert text.count("fold 0: AUC") == 2 and "pooled validation AUC" in text
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["report.csv", "report.json", "roc_val.svg", "test_scores.txt", "val_scores.txt"]
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n


def test_train_predict_byte_identical_with_same_seed(workspace, tmp_path):
    root, cfg, manifest = workspace
    for name in ("a", "b"):
        common = ["--manifest", manifest, "--config", cfg, "--seed", "9"]
        assert run(["train", *common, "--out", str(tmp_path / f"{name}.ckpt")]) == 0
        assert run(["predict", *common, "--model", str(tmp_path / f"{name}.ckpt"), "--out", str(tmp_path / f"{name}.txt")]) == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    common = ["--manifest", manifest, "--config", cfg, "--seed", "10"]
    assert run(["train", *common, "--out", str(tmp_path / "c.ckpt")]) == 0
    assert (tmp_path / "c.ckpt").read_bytes() != (tmp_path / "a.ckpt").read_bytes()
