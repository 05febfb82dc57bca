import csv
import shutil
from pathlib import Path

import numpy as np
import pytest

from ocspoof.cli import main
from ocspoof.config import ConfigError, RunConfig
from ocspoof.protocol import DECODERS, AudioBuffer, encode_wav, read_protocol
from ocspoof.toy import make_toy_corpus
from ocspoof.trainer import Checkpoint
from pipeline import run_pipeline, toy_config


# --- config ----------------------------------------------------------------


def test_defaults_and_derived_features():
    cfg = RunConfig.from_text("[lfcc]\ninclude_deltas = false\n")
    assert cfg.model.n_features == 20
    assert RunConfig().model.n_features == 60
    assert cfg.train.lr == 3e-4 and cfg.eval.pca_fit == "all"


@pytest.mark.parametrize("text, match", [
    ("[trian]\nlr = 1\n", "unknown sections"),
    ("[train]\nlearning_rate = 1\n", "unknown keys"),
    ("[train]\nepochs = many\n", "cannot parse"),
    ("[train]\nloss = arcface\n", "loss"),
    ("[model]\nn_features = 60\n", "derived"),
    ("[eval]\npca_fit = spoof\n", "pca_fit"),
    ("[eval]\np_spoof = 2\n", "eval"),
])
def test_config_rejections(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_text(text)


def test_config_hash_tracks_content():
    a, b = RunConfig.from_text(""), RunConfig.from_text("[train]\nlr = 0.001\n")
    assert a.hash == RunConfig().hash and a.hash != b.hash and len(a.hash) == 16


def test_bundled_configs_parse(tmp_path):
    cfg = RunConfig.load(toy_config(tmp_path))
    assert cfg.model.embed_dim == 16 and cfg.train.epochs == 15
    from importlib import resources
    tdcf = RunConfig.from_text(resources.files("ocspoof").joinpath("data/la2019_tdcf.cfg").read_text())
    assert tdcf.eval.costs.p_spoof == 0.05


# --- CLI errors ---------------------------------------------------------------


def test_no_subcommand_exits_1(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exits_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\nfoo = 1\n")
    assert main(["evaluate", "--config", str(bad), "--scores", "x", "--protocol", "y"]) == 1
    assert main(["evaluate", "--config", str(tmp_path / "missing.cfg"), "--scores", "x"]) == 1


def test_missing_data_exits_2(tmp_path):
    proto = tmp_path / "p.txt"
    proto.write_text("S a - - bonafide\n")
    assert main(["evaluate", "--scores", str(tmp_path / "none.txt"), "--protocol", str(proto)]) == 2
    scores = tmp_path / "s.txt"
    scores.write_text("a 1.0\n")
    # one class only
    assert main(["evaluate", "--scores", str(scores), "--protocol", str(proto)]) == 2


def test_evaluate_perfect_separation(tmp_path, capsys):
    proto = tmp_path / "p.txt"
    proto.write_text("S b1 - - bonafide\nS b2 - - bonafide\nS s1 - A01 spoof\nS s2 - A02 spoof\n")
    scores = tmp_path / "s.txt"
    scores.write_text("# produced by hand\nb1 0.9\nb2 0.8\ns1 -0.5\ns2 0.1\n")
    assert main(["evaluate", "--scores", str(scores), "--protocol", str(proto),
                 "--out", str(tmp_path / "rep")]) == 0
    assert "EER" in capsys.readouterr().out
    rows = list(csv.reader(line for line in (tmp_path / "rep.csv").read_text().splitlines()
                           if not line.startswith("#")))
    assert ["eer", "all", "0.0"] in rows
    assert ["score_type", "all", "unspecified (no loss= line in score file)"] in rows
    assert (tmp_path / "rep.det.csv").is_file() and (tmp_path / "rep.txt").is_file()


def test_bad_decoder_spec(tmp_path):
    assert main(["--decoder", "flac=nomodule:f", "evaluate", "--scores", "x"]) == 1


# --- full pipeline -------------------------------------------------------------


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipe"))


def test_toy_pipeline_dev_eer(pipeline_run):
    ckpt = Checkpoint.load(pipeline_run["ckpt"])
    assert ckpt.dev_eer <= 0.01
    log = pipeline_run["log"].read_text().splitlines()
    assert log[0].startswith("# config_hash=")
    body = [ln for ln in log if not ln.startswith("#")]
    assert body[0] == "epoch,train_loss,dev_eer,lr"
    assert len(body) == 1 + 16


def test_toy_pipeline_outputs(pipeline_run):
    lines = pipeline_run["scores"].read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    body = [ln.split() for ln in lines if not ln.startswith("#")]
    assert len(body) == len(read_protocol(pipeline_run["eval"]))
    assert all(-1 <= float(s) <= 1 for _, s in body)
    proj = [ln for ln in pipeline_run["proj"].read_text().splitlines() if not ln.startswith("#")]
    assert proj[0] == "utt_id,key,attack_id,pc1,pc2"
    assert len(proj) - 1 == 2 * 48 + 2 * 48
    assert "TOY_E" in pipeline_run["proj"].read_text()
    assert (pipeline_run["ckpt"].parent / "feats" / "manifest.txt").is_file()
    assert "score: cosine similarity to w0" in Path(f"{pipeline_run['report']}.txt").read_text()


def test_binary_head_scores_are_flagged(tmp_path, capsys):
    proto = tmp_path / "p.txt"
    proto.write_text("S b - - bonafide\nS s - A01 spoof\n")
    scores = tmp_path / "s.txt"
    scores.write_text("# loss=softmax\nb 3.5\ns -1.0\n")
    assert main(["evaluate", "--scores", str(scores), "--protocol", str(proto)]) == 0
    assert "logit difference" in capsys.readouterr().out


def test_split_count_check(tmp_path, capsys):
    corpus = make_toy_corpus(tmp_path / "c", n_per_class=4)
    args = ["extract", "--protocol", str(corpus["train"]), "--audio-dir", str(corpus["audio"]),
            "--out", str(tmp_path / "f"), "--split", "train"]
    assert main(args) == 0
    assert "FAIL" in capsys.readouterr().err
    assert main(args + ["--strict-counts"]) == 2


def test_corpus_layout_with_flac_plugin(tmp_path, monkeypatch):
    """Directory and file names of the LA 2019 release, with a stand-in decoder."""
    root = tmp_path / "LA"
    proto_dir = root / "ASVspoof2019_LA_cm_protocols"
    proto_dir.mkdir(parents=True)
    rng = np.random.default_rng(0)
    names = {"train": "trn", "dev": "trl", "eval": "trl"}
    for split, suffix in names.items():
        flac_dir = root / f"ASVspoof2019_LA_{split}" / "flac"
        flac_dir.mkdir(parents=True)
        lines = []
        for i in range(3):
            utt = f"LA_{split[0].upper()}_{1000000 + i}"
            key = "bonafide" if i == 0 else "spoof"
            attack = "-" if i == 0 else f"A{i:02d}"
            lines.append(f"LA_00{79 + i} {utt} - {attack} {key}")
            audio = AudioBuffer(rng.uniform(-0.3, 0.3, 8000), 16000)
            (flac_dir / f"{utt}.flac").write_bytes(encode_wav(audio))
        proto = proto_dir / f"ASVspoof2019.LA.cm.{split}.{suffix}.txt"
        proto.write_text("\n".join(lines) + "\n")
        out = tmp_path / "feats" / split
        base = ["extract", "--protocol", str(proto), "--audio-dir", str(flac_dir),
                "--ext", ".flac", "--out", str(out), "--split", split]
        monkeypatch.delitem(DECODERS, ".flac", raising=False)
        assert main(base) == 2  # no decoder for .flac yet
        assert main(["--decoder", "flac=flac_stub:decode"] + base) == 0
        assert len(list(out.glob("*.lfcc"))) == 3


def test_train_dimension_mismatch(tmp_path, pipeline_run):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(toy_config(tmp_path).read_text().replace("n_ceps = 20", "n_ceps = 10"))
    feats = pipeline_run["ckpt"].parent / "feats"
    assert main(["train", "--config", str(cfg), "--train-protocol", str(pipeline_run["train"]),
                 "--dev-protocol", str(pipeline_run["dev"]), "--features", str(feats),
                 "--out", str(tmp_path / "m"), "--log", str(tmp_path / "l")]) == 2


def test_degenerate_projection_exits_3(tmp_path, pipeline_run):
    feats = tmp_path / "feats"
    shutil.copytree(pipeline_run["ckpt"].parent / "feats", feats)
    dev = read_protocol(pipeline_run["dev"])
    # two utterances: a 2-D PCA of two points has rank 1
    proto = tmp_path / "two.txt"
    proto.write_text("\n".join(f"{e.speaker_id} {e.utt_id} - {e.attack_id} {e.key.value}"
                               for e in (dev[0], dev[-1])) + "\n")
    assert main(["project", "--checkpoint", str(pipeline_run["ckpt"]), "--features", str(feats),
                 "--fit-protocol", str(proto), "--out", str(tmp_path / "p.csv")]) == 3
