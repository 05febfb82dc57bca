"""Frame encoder + attentive temporal pooling, with exact backpropagation.

Parameters live in a flat ``dict[str, np.ndarray]`` so optimisers and the
checkpoint writer can iterate over them by name. Every encoder is built
from one primitive, a 1-D convolution over time with "same" zero padding
(a kernel of width 1 is a per-frame dense layer).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

ENCODERS = ("mlp_small", "conv_small", "resnet18_like")
POOLINGS = ("attentive", "mean")


@dataclass(frozen=True)
class NetConfig:
    n_features: int = 60
    encoder: str = "mlp_small"
    hidden_dims: tuple[int, ...] = (32,)
    embed_dim: int = 256
    pooling: str = "attentive"
    attention_dim: int | None = None
    kernel_size: int = 3
    input_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a non-empty list of positive sizes")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd number")

    @property
    def frame_dim(self) -> int:
        return self.hidden_dims[-1] if self.encoder != "resnet18_like" else self.hidden_dims[0]

    @property
    def att_dim(self) -> int:
        return self.attention_dim or self.frame_dim


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: NetConfig, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params: dict[str, np.ndarray] = {}

    def conv(name, c_in, c_out, k):
        params[f"{name}.W"] = _glorot(rng, k * c_in, c_out, (k * c_in, c_out))
        params[f"{name}.b"] = np.zeros(c_out)

    f = cfg.n_features
    if cfg.input_norm:
        # fixed per-dimension standardisation, set from training data; never trained
        params["norm.mean"] = np.zeros(f)
        params["norm.std"] = np.ones(f)
    if cfg.encoder == "mlp_small":
        for i, h in enumerate(cfg.hidden_dims):
            conv(f"enc{i}", f, h, 1)
            f = h
    elif cfg.encoder == "conv_small":
        for i, h in enumerate(cfg.hidden_dims):
            conv(f"enc{i}", f, h, cfg.kernel_size)
            f = h
    else:
        width = cfg.hidden_dims[0]
        conv("stem", f, width, cfg.kernel_size)
        for i in range(len(cfg.hidden_dims)):
            conv(f"blk{i}.conv1", width, width, cfg.kernel_size)
            conv(f"blk{i}.conv2", width, width, cfg.kernel_size)
    h, a = cfg.frame_dim, cfg.att_dim
    if cfg.pooling == "attentive":
        params["att.W"] = _glorot(rng, h, a, (h, a))
        params["att.v"] = _glorot(rng, a, 1, (a,))
    params["out.W"] = _glorot(rng, h, cfg.embed_dim, (h, cfg.embed_dim))
    params["out.b"] = np.zeros(cfg.embed_dim)
    return params


def is_trainable(name: str) -> bool:
    return not name.startswith("norm.")


def set_input_norm(params: dict[str, np.ndarray], seqs, floor: float = 1e-8) -> None:
    """Set the input standardisation from every frame of ``seqs``."""
    frames = np.concatenate([np.asarray(s, dtype=np.float64) for s in seqs], axis=0)
    params["norm.mean"] = frames.mean(axis=0)
    params["norm.std"] = np.maximum(frames.std(axis=0), floor)


def _fingerprint(params: dict[str, np.ndarray]) -> int:
    crc = 0
    for name in sorted(params):
        crc = zlib.crc32(np.ascontiguousarray(params[name]).tobytes(), crc)
    return crc


# --------------------------------------------------------------------------
# primitives


def conv1d_forward(x, W, b, k):
    """x: (B, T, C) -> (B, T, C_out); W: (k*C, C_out)."""
    bsz, t, c = x.shape
    pad = k // 2
    if pad:
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        cols = np.concatenate([xp[:, j:j + t] for j in range(k)], axis=2)
    else:
        cols = x
    return cols @ W + b, cols


def conv1d_backward(dout, cols, W, k, c_in):
    bsz, t, _ = dout.shape
    dW = cols.reshape(-1, cols.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    db = dout.sum(axis=(0, 1))
    dcols = dout @ W.T
    pad = k // 2
    if not pad:
        return dcols, dW, db
    dxp = np.zeros((bsz, t + 2 * pad, c_in))
    for j in range(k):
        dxp[:, j:j + t] += dcols[:, :, j * c_in:(j + 1) * c_in]
    return dxp[:, pad:pad + t], dW, db


def attentive_pool(h, W, v, shift=0.0):
    """Additive attention: a = softmax_t(v^T tanh(W^T h_t) + shift), pooled = sum_t a_t h_t."""
    u = np.tanh(h @ W)
    logits = u @ v + shift
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    a = e / e.sum(axis=1, keepdims=True)
    pooled = np.einsum("bt,btd->bd", a, h)
    return pooled, (h, u, a)


def attentive_pool_backward(dpooled, cache, W, v):
    h, u, a = cache
    da = np.einsum("bd,btd->bt", dpooled, h)
    dh = a[:, :, None] * dpooled[:, None, :]
    dlogits = a * (da - np.sum(a * da, axis=1, keepdims=True))
    dv = np.einsum("bt,bta->a", dlogits, u)
    dz = dlogits[:, :, None] * v[None, None, :] * (1.0 - u * u)
    dW = h.reshape(-1, h.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
    dh += dz @ W.T
    return dh, dW, dv


# --------------------------------------------------------------------------
# network


@dataclass
class ForwardCache:
    cfg: NetConfig
    fingerprint: int
    x_shape: tuple
    single: bool = False
    steps: list = field(default_factory=list)
    pool: tuple | None = None
    frames: np.ndarray | None = None
    pooled: np.ndarray | None = None


def _as_batch(features, cfg: NetConfig) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError(f"features must be (T, F) or (B, T, F) with T >= 1, got {x.shape}")
    if x.shape[2] != cfg.n_features:
        raise ValueError(f"expected {cfg.n_features} feature dims, got {x.shape[2]}")
    return x, single


def forward(features, params: dict[str, np.ndarray], cfg: NetConfig):
    """Embed one utterance (T, F) or a batch (B, T, F).

    Returns the embedding(s) and a cache for :func:`backward`.
    """
    x, single = _as_batch(features, cfg)
    cache = ForwardCache(cfg, _fingerprint(params), x.shape, single)
    k = cfg.kernel_size

    def conv_tanh(name, inp, width):
        z, cols = conv1d_forward(inp, params[f"{name}.W"], params[f"{name}.b"], width)
        return np.tanh(z), cols

    h = x
    if cfg.input_norm:
        h = (x - params["norm.mean"]) / params["norm.std"]
    if cfg.encoder in ("mlp_small", "conv_small"):
        width = 1 if cfg.encoder == "mlp_small" else k
        for i in range(len(cfg.hidden_dims)):
            out, cols = conv_tanh(f"enc{i}", h, width)
            cache.steps.append(("layer", f"enc{i}", width, h.shape[-1], cols, out))
            h = out
    else:
        out, cols = conv_tanh("stem", h, k)
        cache.steps.append(("layer", "stem", k, h.shape[-1], cols, out))
        h = out
        for i in range(len(cfg.hidden_dims)):
            a1, cols1 = conv_tanh(f"blk{i}.conv1", h, k)
            z2, cols2 = conv1d_forward(a1, params[f"blk{i}.conv2.W"], params[f"blk{i}.conv2.b"], k)
            out = np.tanh(h + z2)
            cache.steps.append(("block", f"blk{i}", k, h.shape[-1], (cols1, a1, cols2), out))
            h = out

    if cfg.pooling == "attentive":
        pooled, cache.pool = attentive_pool(h, params["att.W"], params["att.v"])
    else:
        pooled = h.mean(axis=1)
    cache.frames, cache.pooled = h, pooled
    emb = pooled @ params["out.W"] + params["out.b"]
    if not np.all(np.isfinite(emb)):
        raise FloatingPointError("non-finite activation in forward pass")
    return (emb[0] if single else emb), cache


def backward(cache: ForwardCache, upstream, params: dict[str, np.ndarray]):
    """Gradients of ``sum(upstream * embedding)`` w.r.t. params and input features."""
    cfg = cache.cfg
    if _fingerprint(params) != cache.fingerprint:
        raise ValueError("stale cache: parameters changed since the forward pass")
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None]
    if g.shape != cache.pooled.shape[:1] + (cfg.embed_dim,):
        raise ValueError(f"upstream gradient shape {g.shape} does not match the cached forward")
    grads: dict[str, np.ndarray] = {}
    grads["out.W"] = cache.pooled.T @ g
    grads["out.b"] = g.sum(axis=0)
    dpooled = g @ params["out.W"].T
    h = cache.frames
    if cfg.pooling == "attentive":
        dh, grads["att.W"], grads["att.v"] = attentive_pool_backward(
            dpooled, cache.pool, params["att.W"], params["att.v"])
    else:
        dh = np.repeat(dpooled[:, None, :] / h.shape[1], h.shape[1], axis=1)

    for kind, name, k, c_in, saved, out in reversed(cache.steps):
        dz = dh * (1.0 - out * out)
        if kind == "layer":
            dh, grads[f"{name}.W"], grads[f"{name}.b"] = conv1d_backward(
                dz, saved, params[f"{name}.W"], k, c_in)
        else:
            cols1, a1, cols2 = saved
            da1, grads[f"{name}.conv2.W"], grads[f"{name}.conv2.b"] = conv1d_backward(
                dz, cols2, params[f"{name}.conv2.W"], k, a1.shape[-1])
            dz1 = da1 * (1.0 - a1 * a1)
            dskip, grads[f"{name}.conv1.W"], grads[f"{name}.conv1.b"] = conv1d_backward(
                dz1, cols1, params[f"{name}.conv1.W"], k, c_in)
            dh = dz + dskip
    if cfg.input_norm:
        dh = dh / params["norm.std"]
    return grads, (dh[0] if cache.single else dh)


def attention_weights(features, params, cfg: NetConfig) -> np.ndarray:
    """Per-frame attention weights (B, T); uniform for mean pooling."""
    _, cache = forward(features, params, cfg)
    if cfg.pooling == "mean":
        b, t = cache.frames.shape[:2]
        return np.full((b, t), 1.0 / t)
    return cache.pool[2]
