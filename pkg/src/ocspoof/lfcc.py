"""Linear-frequency cepstral coefficients."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .protocol import AudioBuffer, DataError


@dataclass(frozen=True)
class LfccConfig:
    frame_len: float = 0.020
    hop_len: float = 0.010
    n_fft: int = 512
    n_filters: int = 20
    n_ceps: int = 20
    include_deltas: bool = True
    window: str = "hamming"
    log_floor: float = 1e-12
    delta_window: int = 2

    def __post_init__(self):
        if not 0 < self.hop_len < self.frame_len:
            raise ValueError(f"need frame_len > hop_len > 0, got {self.frame_len}, {self.hop_len}")
        if not 1 <= self.n_ceps <= self.n_filters:
            raise ValueError(f"need 1 <= n_ceps <= n_filters, got {self.n_ceps}, {self.n_filters}")
        if self.window not in _WINDOWS:
            raise ValueError(f"window must be one of {sorted(_WINDOWS)}, got {self.window!r}")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")

    @property
    def n_dims(self) -> int:
        return self.n_ceps * (3 if self.include_deltas else 1)

    def frame_samples(self, sample_rate: int) -> tuple[int, int]:
        frame = int(round(self.frame_len * sample_rate))
        hop = int(round(self.hop_len * sample_rate))
        if self.n_fft < frame:
            raise ValueError(f"n_fft={self.n_fft} shorter than the {frame}-sample frame")
        return frame, hop

    @classmethod
    def from_mapping(cls, values: dict) -> "LfccConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown lfcc keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


_WINDOWS = {"hamming": np.hamming, "hann": np.hanning}


def frame_and_window(audio: AudioBuffer, cfg: LfccConfig = LfccConfig()) -> np.ndarray:
    """Slice audio into overlapping windowed frames, shape (n_frames, frame_samples)."""
    x = np.asarray(audio.samples, dtype=np.float64)
    frame, hop = cfg.frame_samples(audio.sample_rate)
    if x.size < frame:
        raise DataError(f"audio has {x.size} samples, shorter than one {frame}-sample frame")
    n_frames = (x.size - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx] * _WINDOWS[cfg.window](frame)


def filterbank_matrix(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters with linearly spaced centres from 0 Hz to Nyquist.

    Returns (n_filters, n_fft // 2 + 1). Filter k rises from edge k to edge
    k + 1 and falls to edge k + 2, so neighbours overlap by half.
    """
    edges = np.linspace(0.0, sample_rate / 2.0, n_filters + 2)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - left) / (centre - left)
    falling = (right - freqs) / (right - centre)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def linear_filterbank(power_spectrum: np.ndarray, cfg: LfccConfig = LfccConfig(),
                      sample_rate: int = 16000) -> np.ndarray:
    spec = np.asarray(power_spectrum, dtype=np.float64)
    if spec.shape[-1] != cfg.n_fft // 2 + 1:
        raise ValueError(f"spectrum has {spec.shape[-1]} bins, expected {cfg.n_fft // 2 + 1}")
    if not np.all(np.isfinite(spec)) or np.any(spec < 0):
        raise ValueError("power spectrum must be finite and non-negative")
    return spec @ filterbank_matrix(cfg.n_filters, cfg.n_fft, sample_rate).T


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Rows of the orthonormal DCT-II basis of length ``n_in``."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    m = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    m[0] /= np.sqrt(2.0)
    return m


def deltas(x: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas along the frame axis with edge-frame replication."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("need at least one frame")
    padded = np.pad(x, [(width, width)] + [(0, 0)] * (x.ndim - 1), mode="edge")
    n = x.shape[0]
    out = np.zeros_like(x)
    for w in range(1, width + 1):
        out += w * (padded[width + w:width + w + n] - padded[width - w:width - w + n])
    return out / (2 * sum(w * w for w in range(1, width + 1)))


def lfcc(audio: AudioBuffer, cfg: LfccConfig = LfccConfig()) -> np.ndarray:
    """Compute the (n_frames, n_dims) LFCC matrix, dims ordered static | delta | delta-delta."""
    frames = frame_and_window(audio, cfg)
    power = np.abs(np.fft.rfft(frames, cfg.n_fft, axis=1)) ** 2
    energies = linear_filterbank(power, cfg, audio.sample_rate)
    logfb = np.log(np.maximum(energies, cfg.log_floor))
    static = logfb @ dct_matrix(cfg.n_ceps, cfg.n_filters).T
    if not cfg.include_deltas:
        return static
    d1 = deltas(static, cfg.delta_window)
    d2 = deltas(d1, cfg.delta_window)
    return np.hstack([static, d1, d2])


class LfccExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from a list of AudioBuffer to a list of LFCC matrices."""

    def __init__(self, frame_len=0.020, hop_len=0.010, n_fft=512, n_filters=20, n_ceps=20,
                 include_deltas=True, window="hamming", log_floor=1e-12, delta_window=2):
        self.frame_len = frame_len
        self.hop_len = hop_len
        self.n_fft = n_fft
        self.n_filters = n_filters
        self.n_ceps = n_ceps
        self.include_deltas = include_deltas
        self.window = window
        self.log_floor = log_floor
        self.delta_window = delta_window

    @property
    def config(self) -> LfccConfig:
        return LfccConfig(**self.get_params())

    def fit(self, X=None, y=None):
        self.config  # validates parameters
        self.n_features_out_ = self.config.n_dims
        return self

    def transform(self, X):
        cfg = self.config
        if isinstance(X, AudioBuffer):
            return lfcc(X, cfg)
        return [lfcc(a, cfg) for a in X]
