"""ASVspoof-style protocol files, audio ingestion and fixed-length batching."""
from __future__ import annotations

import enum
import io
import struct
import wave
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np


class DataError(ValueError):
    """Raised for malformed protocol, audio or cache inputs."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class Key(str, enum.Enum):
    BONAFIDE = "bonafide"
    SPOOF = "spoof"

    @property
    def label(self) -> int:
        # 0 is the target (bona fide) class
        return 0 if self is Key.BONAFIDE else 1


@dataclass(frozen=True)
class ProtocolEntry:
    speaker_id: str
    utt_id: str
    attack_id: str
    key: Key
    field3: str = "-"

    def __post_init__(self):
        if (self.key is Key.BONAFIDE) != (self.attack_id == "-"):
            raise DataError(
                f"{self.utt_id}: key {self.key.value!r} inconsistent with attack {self.attack_id!r}"
            )

    @property
    def label(self) -> int:
        return self.key.label


def parse_protocol(text: str | Iterable[str]) -> list[ProtocolEntry]:
    """Parse protocol lines ``speaker utt_id field3 attack_id key``.

    Blank lines are skipped. ``field3`` is kept on the entry only so that
    :func:`serialize_protocol` can reproduce the input; nothing reads it.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    entries: list[ProtocolEntry] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        fields = raw.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise DataError(f"expected 5 fields, got {len(fields)}", line=lineno)
        speaker, utt, field3, attack, key_tok = fields
        try:
            key = Key(key_tok.lower())
        except ValueError:
            raise DataError(f"unknown key {key_tok!r}", line=lineno) from None
        if utt in seen:
            raise DataError(f"duplicate utt_id {utt!r} (first on line {seen[utt]})", line=lineno)
        seen[utt] = lineno
        try:
            entries.append(ProtocolEntry(speaker, utt, attack, key, field3))
        except DataError as exc:
            raise DataError(str(exc), line=lineno) from None
    return entries


def serialize_protocol(entries: Iterable[ProtocolEntry]) -> str:
    return "".join(
        f"{e.speaker_id} {e.utt_id} {e.field3} {e.attack_id} {e.key.value}\n" for e in entries
    )


def read_protocol(path: str | Path) -> list[ProtocolEntry]:
    with open(path, encoding="utf-8") as fh:
        return parse_protocol(fh.read())


# bona fide / spoof utterance counts of the ASVspoof 2019 LA partitions
LA2019_COUNTS = {
    "train": (2580, 22800),
    "dev": (2548, 22296),
    "eval": (7355, 63882),
}


@dataclass
class DatasetSplit:
    name: str
    entries: list[ProtocolEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.name not in LA2019_COUNTS:
            raise ValueError(f"split name must be one of {sorted(LA2019_COUNTS)}, got {self.name!r}")

    @property
    def counts(self) -> tuple[int, int]:
        c = Counter(e.key for e in self.entries)
        return c[Key.BONAFIDE], c[Key.SPOOF]

    @property
    def attacks(self) -> list[str]:
        return sorted({e.attack_id for e in self.entries if e.key is Key.SPOOF})


@dataclass(frozen=True)
class SplitReport:
    split: str
    expected: tuple[int, int]
    observed: tuple[int, int]

    @property
    def passed(self) -> bool:
        return self.expected == self.observed

    @property
    def delta(self) -> tuple[int, int]:
        return (self.observed[0] - self.expected[0], self.observed[1] - self.expected[1])

    def __str__(self) -> str:
        status = "PASS" if self.passed else f"FAIL (delta bonafide={self.delta[0]:+d}, spoof={self.delta[1]:+d})"
        return (
            f"{self.split}: bonafide={self.observed[0]} spoof={self.observed[1]} "
            f"expected=({self.expected[0]}, {self.expected[1]}) {status}"
        )


def validate_split(split: DatasetSplit, expected: tuple[int, int] | None = None) -> SplitReport:
    """Compare the split's class counts against ``expected``.

    ``expected`` defaults to the published LA 2019 counts for the split name.
    """
    if expected is None:
        expected = LA2019_COUNTS[split.name]
    return SplitReport(split.name, tuple(expected), split.counts)


# --------------------------------------------------------------------------
# audio


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if np.asarray(self.samples).size == 0:
            raise DataError("audio buffer is empty")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


EXPECTED_SAMPLE_RATE = 16000

Decoder = Callable[[bytes], AudioBuffer]


def decode_wav(data: bytes) -> AudioBuffer:
    """Decode a mono 16-bit PCM RIFF/WAVE byte string."""
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            if wf.getnchannels() != 1:
                raise DataError(f"expected mono audio, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise DataError(f"expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            rate = wf.getframerate()
            pcm = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"invalid WAV data: {exc}") from None
    samples = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def encode_wav(audio: AudioBuffer) -> bytes:
    pcm = np.clip(np.round(np.asarray(audio.samples) * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(pcm.tobytes())
    return buf.getvalue()


# extension -> decoder; FLAC etc. are registered by the caller
DECODERS: dict[str, Decoder] = {".wav": decode_wav}


def register_decoder(extension: str, decoder: Decoder) -> None:
    DECODERS[extension.lower()] = decoder


def load_audio(path: str | Path, expected_rate: int = EXPECTED_SAMPLE_RATE) -> AudioBuffer:
    path = Path(path)
    decoder = DECODERS.get(path.suffix.lower())
    if decoder is None:
        raise DataError(f"no decoder registered for {path.suffix!r} ({path})")
    audio = decoder(path.read_bytes())
    if audio.sample_rate != expected_rate:
        raise DataError(f"{path}: sample rate {audio.sample_rate} Hz, expected {expected_rate} Hz")
    return audio


# --------------------------------------------------------------------------
# fixed-length cropping


def fix_length(frames: np.ndarray, target_len: int, rng: np.random.Generator | None = None,
               offset: int | None = None) -> np.ndarray:
    """Bring ``frames`` (n_frames x dims) to exactly ``target_len`` rows.

    Short inputs are tiled cyclically. Long inputs are cut to a contiguous
    window; the start is ``offset`` if given, otherwise drawn uniformly from
    ``rng.integers(0, n - target_len + 1)``.
    """
    frames = np.asarray(frames)
    n = frames.shape[0] if frames.ndim else 0
    if n == 0:
        raise DataError("cannot fix the length of an empty feature matrix")
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    if n == target_len:
        return frames
    if n < target_len:
        return frames[np.arange(target_len) % n]
    if offset is None:
        if rng is None:
            raise ValueError("rng or offset is required to crop a long input")
        offset = int(rng.integers(0, n - target_len + 1))
    elif not 0 <= offset <= n - target_len:
        raise ValueError(f"offset {offset} outside [0, {n - target_len}]")
    return frames[offset:offset + target_len]


# --------------------------------------------------------------------------
# feature cache

CACHE_MAGIC = b"LFCC"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")


def write_feature_cache(path: str | Path, features: np.ndarray) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    n_frames, n_dims = features.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n_frames, n_dims))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_feature_cache(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise DataError(f"{path}: truncated feature cache header")
    magic, version, n_frames, n_dims = _CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    expected = _CACHE_HEADER.size + 4 * n_frames * n_dims
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=_CACHE_HEADER.size)
    return arr.reshape(n_frames, n_dims).astype(np.float64)
