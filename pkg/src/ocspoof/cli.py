"""Command-line entry point: extract, train, score, evaluate, project.

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 numeric failure. Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import importlib
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .lfcc import LfccConfig, lfcc
from .metrics import evaluate, format_scores, join_scores, parse_scores
from .projection import DegenerateProjection, EmbeddingPCA
from .protocol import (DataError, DatasetSplit, Key, load_audio, read_feature_cache, read_protocol,
                       register_decoder, validate_split, write_feature_cache)
from .trainer import Checkpoint, TrainingDiverged, format_log, train

log = logging.getLogger("ocspoof")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
MANIFEST = "manifest.txt"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _header(cfg: RunConfig, command: str) -> list[str]:
    return [f"config_hash={cfg.hash}", f"command={command}"]


def _write_text(path: str | Path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _extract_one(utt_id: str, audio_dir: str, ext: str, rate: int, cfg: LfccConfig, out_dir: str):
    audio = load_audio(Path(audio_dir) / f"{utt_id}{ext}", expected_rate=rate)
    write_feature_cache(Path(out_dir) / f"{utt_id}.lfcc", lfcc(audio, cfg))
    return utt_id


def _load_features(feature_dir: str | Path, entries) -> list[np.ndarray]:
    feature_dir = Path(feature_dir)
    out = []
    for e in entries:
        path = feature_dir / f"{e.utt_id}.lfcc"
        if not path.is_file():
            raise DataError(f"missing cached features for {e.utt_id} ({path})")
        out.append(read_feature_cache(path))
    return out


def _protocol(path):
    if path is None:
        raise ConfigError("a protocol file is required")
    try:
        return read_protocol(path)
    except OSError as exc:
        raise DataError(f"cannot read protocol {path}: {exc}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_extract(args, cfg: RunConfig) -> int:
    entries = _protocol(args.protocol or cfg.data.train_protocol)
    if args.split:
        report = validate_split(DatasetSplit(args.split, entries))
        print(report, file=sys.stderr)
        if args.strict_counts and not report.passed:
            raise DataError(f"split counts do not match: {report}")
    audio_dir = args.audio_dir or cfg.data.audio_dir
    out_dir = args.out or cfg.data.feature_dir
    if audio_dir is None or out_dir is None:
        raise ConfigError("extract needs --audio-dir and --out (or [data] audio_dir / feature_dir)")
    if not Path(audio_dir).is_dir():
        raise ConfigError(f"audio directory {audio_dir!r} does not exist")
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    job = partial(_extract_one, audio_dir=str(audio_dir), ext=args.ext or cfg.data.audio_ext,
                  rate=cfg.data.sample_rate, cfg=cfg.lfcc, out_dir=str(out_dir))
    ids = [e.utt_id for e in entries]
    workers = args.workers or cfg.data.workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(job, ids, chunksize=16))
    else:
        done = [job(u) for u in ids]
    manifest = [f"# {h}" for h in _header(cfg, "extract")] + done
    _write_text(Path(out_dir) / MANIFEST, "\n".join(manifest) + "\n")
    print(f"extracted {len(done)} utterances to {out_dir}", file=sys.stderr)
    return 0


def _labels(entries):
    return np.array([e.label for e in entries])


def cmd_train(args, cfg: RunConfig) -> int:
    train_entries = _protocol(args.train_protocol or cfg.data.train_protocol)
    dev_entries = _protocol(args.dev_protocol or cfg.data.dev_protocol)
    feature_dir = args.features or cfg.data.feature_dir
    if feature_dir is None:
        raise ConfigError("train needs --features (or [data] feature_dir)")
    train_x = _load_features(feature_dir, train_entries)
    dev_x = _load_features(feature_dir, dev_entries)
    dims = {x.shape[1] for x in train_x + dev_x}
    if dims != {cfg.model.n_features}:
        raise DataError(f"cached feature dims {sorted(dims)} do not match [lfcc] ({cfg.model.n_features})")
    header = _header(cfg, "train")
    try:
        best, history = train(train_x, _labels(train_entries), dev_x, _labels(dev_entries),
                              cfg.model, cfg.train)
    except TrainingDiverged as exc:
        exc.checkpoint.extra = {"config_hash": cfg.hash, "diverged": True}
        exc.checkpoint.save(args.out)
        _write_text(args.log, format_log(exc.history, header))
        print(f"training diverged: {exc}; last good checkpoint saved to {args.out}", file=sys.stderr)
        return EXIT_NUMERIC
    best.extra = {"config_hash": cfg.hash}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    best.save(args.out)
    _write_text(args.log, format_log(history, header))
    print(f"best epoch {best.epoch}: dev EER {100 * best.dev_eer:.4g}%", file=sys.stderr)
    return 0


def _checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"invalid checkpoint {path}: {exc}") from None


def _fixed(ckpt: Checkpoint, seqs):
    from .estimator import FixedLengthCropper
    return FixedLengthCropper(ckpt.train_config.target_len, random_crop=False).transform(seqs)


def cmd_score(args, cfg: RunConfig) -> int:
    ckpt = _checkpoint(args.checkpoint)
    entries = _protocol(args.protocol or cfg.data.eval_protocol)
    seqs = _load_features(args.features or cfg.data.feature_dir, entries)
    scores = ckpt.scores(_fixed(ckpt, seqs))
    header = _header(cfg, "score") + [f"checkpoint_config_hash={ckpt.extra.get('config_hash', '')}",
                                      f"loss={ckpt.train_config.loss}"]
    _write_text(args.out, format_scores(zip((e.utt_id for e in entries), scores.tolist()), header))
    return 0


SCORE_TYPES = {
    "oc_softmax": "cosine similarity to w0",
    "softmax": "logit difference, bona fide minus spoof (convention for binary heads)",
    "am_softmax": "cosine difference, bona fide minus spoof (convention for binary heads)",
}


def _score_type(text: str) -> str:
    for line in text.splitlines():
        if line.startswith("# loss="):
            loss = line[len("# loss="):].strip()
            return SCORE_TYPES.get(loss, f"unknown loss {loss!r}")
    return "unspecified (no loss= line in score file)"


def cmd_evaluate(args, cfg: RunConfig) -> int:
    try:
        text = Path(args.scores).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read scores {args.scores}: {exc}") from None
    records = join_scores(parse_scores(text), _protocol(args.protocol or cfg.data.eval_protocol))
    try:
        report = evaluate(records, cfg.eval.costs)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    score_type = _score_type(text)
    table = report.summary_table(args.name) + f"\nscore: {score_type}"
    print(table)
    if args.out:
        buf = io.StringIO()
        for h in _header(cfg, "evaluate"):
            buf.write(f"# {h}\n")
        csv.writer(buf, lineterminator="\n").writerows(report.to_csv_rows() + [["score_type", "all", score_type]])
        _write_text(f"{args.out}.csv", buf.getvalue())
        det = io.StringIO()
        for h in _header(cfg, "evaluate"):
            det.write(f"# {h}\n")
        w = csv.writer(det, lineterminator="\n")
        w.writerow(["threshold", "fa_rate", "miss_rate"])
        w.writerows([repr(t), repr(fa), repr(m)] for fa, m, t in report.det_points)
        _write_text(f"{args.out}.det.csv", det.getvalue())
        txt = "\n".join(f"# {h}" for h in _header(cfg, "evaluate")) + "\n" + table + "\n"
        _write_text(f"{args.out}.txt", txt)
    return 0


def cmd_project(args, cfg: RunConfig) -> int:
    ckpt = _checkpoint(args.checkpoint)
    feature_dir = args.features or cfg.data.feature_dir
    fit_entries = _protocol(args.fit_protocol or cfg.data.dev_protocol)
    fit_emb = ckpt.embed(_fixed(ckpt, _load_features(feature_dir, fit_entries)))
    mode = "bonafide" if args.bonafide_only else cfg.eval.pca_fit
    mask = np.array([e.key is Key.BONAFIDE for e in fit_entries]) if mode == "bonafide" else slice(None)
    pca = EmbeddingPCA(2).fit(fit_emb[mask])
    rows = list(zip(fit_entries, pca.transform(fit_emb)))
    for path in args.apply_protocol or []:
        entries = _protocol(path)
        emb = ckpt.embed(_fixed(ckpt, _load_features(feature_dir, entries)))
        rows += zip(entries, pca.transform(emb))
    buf = io.StringIO()
    for h in _header(cfg, "project") + [f"pca_fit={mode}",
                                        "explained_variance=" + " ".join(map(repr, pca.explained_variance_.tolist()))]:
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["utt_id", "key", "attack_id", "pc1", "pc2"])
    seen = set()
    for e, p in rows:
        if e.utt_id in seen:
            continue
        seen.add(e.utt_id)
        w.writerow([e.utt_id, e.key.value, e.attack_id, repr(float(p[0])), repr(float(p[1]))])
    _write_text(args.out, buf.getvalue())
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ocspoof", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--decoder", action="append", default=[], metavar="EXT=MODULE:FUNC",
                        help="register an audio decoder (bytes -> AudioBuffer) for a file extension")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("extract", help="audio + protocol -> LFCC feature cache")
    p.add_argument("--config")
    p.add_argument("--protocol")
    p.add_argument("--audio-dir")
    p.add_argument("--ext", help="audio file extension, e.g. .wav or .flac")
    p.add_argument("--out", help="feature cache directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--split", choices=["train", "dev", "eval"],
                   help="report class counts against the LA 2019 partition sizes")
    p.add_argument("--strict-counts", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="features -> checkpoint + epoch log")
    p.add_argument("--config")
    p.add_argument("--train-protocol")
    p.add_argument("--dev-protocol")
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="checkpoint + features -> score file")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol")
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="score file + protocol -> EER / min t-DCF report")
    p.add_argument("--config")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol")
    p.add_argument("--out", help="output prefix for .csv/.det.csv/.txt reports")
    p.add_argument("--name", default="CM")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("project", help="checkpoint + features -> 2-D PCA coordinates")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features")
    p.add_argument("--fit-protocol")
    p.add_argument("--apply-protocol", action="append")
    p.add_argument("--bonafide-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)
    return parser


def _register_decoders(specs):
    for spec in specs:
        try:
            ext, target = spec.split("=", 1)
            module, func = target.split(":", 1)
            register_decoder(ext if ext.startswith(".") else f".{ext}",
                             getattr(importlib.import_module(module), func))
        except (ValueError, ImportError, AttributeError) as exc:
            raise ConfigError(f"bad --decoder {spec!r}: {exc}") from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("ocspoof: error: a subcommand is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _register_decoders(args.decoder)
        cfg = RunConfig.load(args.config)
        cfg.data.validate_paths()
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, DegenerateProjection) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
