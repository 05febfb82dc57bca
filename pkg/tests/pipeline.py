"""Drive the command-line pipeline on the bundled toy corpus."""
from importlib import resources
from pathlib import Path

from ocspoof.cli import main
from ocspoof.toy import make_toy_corpus


def toy_config(tmp: Path) -> Path:
    path = tmp / "toy.cfg"
    path.write_text(resources.files("ocspoof").joinpath("data/toy.cfg").read_text(), encoding="utf-8")
    return path


def run_pipeline(root: Path, n_per_class: int = 48) -> dict[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    corpus = make_toy_corpus(root / "corpus", n_per_class=n_per_class, seed=0)
    cfg = str(toy_config(root))
    feats = str(root / "feats")
    out = {k: root / v for k, v in {"ckpt": "model.ckpt", "log": "train.csv", "scores": "eval.scores",
                                   "report": "eval", "proj": "proj.csv"}.items()}
    for split in ("train", "dev", "eval"):
        assert main(["extract", "--config", cfg, "--protocol", str(corpus[split]),
                     "--audio-dir", str(corpus["audio"]), "--out", feats]) == 0
    assert main(["train", "--config", cfg, "--train-protocol", str(corpus["train"]),
                 "--dev-protocol", str(corpus["dev"]), "--features", feats,
                 "--out", str(out["ckpt"]), "--log", str(out["log"])]) == 0
    assert main(["score", "--config", cfg, "--checkpoint", str(out["ckpt"]),
                 "--protocol", str(corpus["eval"]), "--features", feats, "--out", str(out["scores"])]) == 0
    assert main(["evaluate", "--config", cfg, "--scores", str(out["scores"]),
                 "--protocol", str(corpus["eval"]), "--out", str(out["report"])]) == 0
    assert main(["project", "--config", cfg, "--checkpoint", str(out["ckpt"]), "--features", feats,
                 "--fit-protocol", str(corpus["dev"]), "--apply-protocol", str(corpus["eval"]),
                 "--out", str(out["proj"])]) == 0
    out.update(corpus)
    return out
