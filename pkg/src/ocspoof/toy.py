"""Synthetic one-class fixtures: feature sequences and a tiny WAV corpus."""
from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .protocol import AudioBuffer, ProtocolEntry, Key, encode_wav, serialize_protocol


@dataclass
class ToySplit:
    seqs: list[np.ndarray]
    labels: np.ndarray
    attacks: list[str]


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def toy_directions(n_features: int = 8):
    """Bona fide direction plus three seen and two unseen spoof directions.

    Seen spoof directions all sit on the negative side of the second axis,
    the unseen ones on the positive side, so a classifier that only learns
    "second coordinate negative means spoof" misses the unseen attacks while
    one that models the bona fide cluster does not.
    """
    e = np.eye(n_features)
    u = e[0]
    seen = {
        "S1": _unit(0.6 * e[0] - e[1] + 0.3 * e[2]),
        "S2": _unit(0.6 * e[0] - e[1] - 0.3 * e[3]),
        "S3": _unit(0.5 * e[0] - e[1] + 0.4 * e[4]),
    }
    unseen = {
        "U1": _unit(0.6 * e[0] + 0.8 * e[1] + 0.3 * e[5]),
        "U2": _unit(0.6 * e[0] + 0.8 * e[1] - 0.3 * e[6]),
    }
    return u, seen, unseen


def _sequences(direction, n, rng, n_features, noise, min_len, max_len, spread):
    out = []
    for _ in range(n):
        centre = _unit(direction + spread * rng.standard_normal(n_features))
        t = int(rng.integers(min_len, max_len + 1))
        gain = rng.uniform(0.8, 1.2)
        out.append(gain * centre[None, :] + noise * rng.standard_normal((t, n_features)))
    return out


def make_toy_sequences(n_bonafide=2000, n_spoof=2000, n_features=8, seed=0, noise=0.3,
                       spread=0.15, min_len=10, max_len=30, unseen=False) -> ToySplit:
    """One split of labelled sequences.

    ``unseen=False`` draws spoofs evenly from the seen clusters; ``unseen=True``
    draws them from the two unseen clusters.
    """
    rng = np.random.default_rng(seed)
    u, seen_dirs, unseen_dirs = toy_directions(n_features)
    clusters = unseen_dirs if unseen else seen_dirs
    seqs = _sequences(u, n_bonafide, rng, n_features, noise, min_len, max_len, spread)
    attacks = ["-"] * n_bonafide
    names = list(clusters)
    per = np.bincount(np.arange(n_spoof) % len(names), minlength=len(names))
    for name, count in zip(names, per):
        seqs += _sequences(clusters[name], int(count), rng, n_features, noise, min_len, max_len, spread)
        attacks += [name] * int(count)
    labels = np.array([0] * n_bonafide + [1] * n_spoof)
    return ToySplit(seqs, labels, attacks)


# --------------------------------------------------------------------------
# WAV corpus for end-to-end CLI runs

_SR = 16000


def _toy_audio(kind: str, rng: np.random.Generator, seconds: float) -> np.ndarray:
    t = np.arange(int(seconds * _SR)) / _SR
    f0 = rng.uniform(110, 180)
    # every class is a harmonic stack; classes differ in spectral tilt and added noise
    tilt = {"-": 1.0, "A01": 0.6, "A02": 1.0, "A03": 1.6}[kind]
    x = sum(np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h ** tilt
            for h in range(1, 30) if f0 * h < _SR / 2)
    x = x / np.max(np.abs(x))
    if kind == "A02":
        x = x + 0.05 * rng.standard_normal(t.size)
    x = x + 0.01 * rng.standard_normal(t.size)
    return 0.5 * x / np.max(np.abs(x))


def make_toy_corpus(root: str | Path, n_per_class: int = 48, seed: int = 0,
                    seconds: float = 0.5) -> dict[str, Path]:
    """Write train/dev/eval protocols and 16 kHz WAVs under ``root``.

    Train and dev share attacks A01/A02; eval adds the unseen A03.
    """
    root = Path(root)
    audio_dir = root / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    plan = {"train": ["A01", "A02"], "dev": ["A01", "A02"], "eval": ["A01", "A02", "A03"]}
    paths = {"audio": audio_dir}
    for split, attacks in plan.items():
        entries = []
        kinds = ["-"] * n_per_class + [attacks[i % len(attacks)] for i in range(n_per_class)]
        for i, kind in enumerate(kinds):
            utt = f"TOY_{split[0].upper()}_{i:05d}"
            key = Key.BONAFIDE if kind == "-" else Key.SPOOF
            samples = _toy_audio(kind, rng, seconds * rng.uniform(0.8, 1.2))
            (audio_dir / f"{utt}.wav").write_bytes(encode_wav(AudioBuffer(samples, _SR)))
            entries.append(ProtocolEntry(f"SPK{i % 4}", utt, kind, key))
        path = root / f"toy.{split}.txt"
        path.write_text(serialize_protocol(entries), encoding="utf-8")
        paths[split] = path
    return paths


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write the synthetic toy corpus.")
    parser.add_argument("root")
    parser.add_argument("--n-per-class", type=int, default=48)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    for name, path in make_toy_corpus(args.root, args.n_per_class, args.seed).items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
