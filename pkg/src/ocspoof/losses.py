"""Softmax, AM-Softmax and OC-Softmax loss heads with analytic gradients.

Every loss returns ``(loss, grads)`` where ``grads`` maps ``"x"`` (the
N x D embedding batch) and each head vector name to an array of the
matching shape. Labels follow the convention 0 = bona fide, 1 = spoof.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


def softplus(z):
    """log(1 + e^z) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _check_finite(**arrays):
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name} contains non-finite values")


def _normalize(v: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError(f"{name} has zero norm")
    return v / norm, norm


def _normalize_backward(grad_hat, v_hat, norm):
    # d(v/|v|) = (I - v_hat v_hat^T) / |v|
    return (grad_hat - v_hat * np.sum(grad_hat * v_hat, axis=-1, keepdims=True)) / norm


def _check_batch(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"embeddings must be a non-empty N x D matrix, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} embeddings")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (bona fide) or 1 (spoof)")
    _check_finite(x=x)
    return x, y.astype(np.int64)


@dataclass
class BinaryHeadParams:
    w0: np.ndarray
    w1: np.ndarray
    alpha: float = 20.0
    margin: float = 0.9

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=np.float64)
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        if self.w0.shape != self.w1.shape or self.w0.ndim != 1:
            raise ValueError("w0 and w1 must be vectors of equal length")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, **kw) -> "BinaryHeadParams":
        return cls(rng.standard_normal(dim), rng.standard_normal(dim), **kw)

    def vectors(self) -> dict[str, np.ndarray]:
        return {"w0": self.w0, "w1": self.w1}


@dataclass
class OcHeadParams:
    w0: np.ndarray
    alpha: float = 20.0
    m0: float = 0.9
    m1: float = 0.2

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=np.float64)
        if self.w0.ndim != 1:
            raise ValueError("w0 must be a vector")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (-1 <= self.m1 < self.m0 <= 1):
            raise ValueError(f"need -1 <= m1 < m0 <= 1, got m0={self.m0}, m1={self.m1}")

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, **kw) -> "OcHeadParams":
        return cls(rng.standard_normal(dim), **kw)

    def vectors(self) -> dict[str, np.ndarray]:
        return {"w0": self.w0}


def softmax_loss(x, y, params: BinaryHeadParams):
    x, y = _check_batch(x, y)
    w0, w1 = params.w0, params.w1
    _check_finite(w0=w0, w1=w1)
    n = x.shape[0]
    sign = np.where(y == 0, 1.0, -1.0)  # z = (w_{1-y} - w_y)^T x
    diff = w1 - w0
    z = sign * (x @ diff)
    loss = softplus(z).mean()
    dz = expit(z) / n
    gx = (dz * sign)[:, None] * diff[None, :]
    gw1 = (dz * sign) @ x
    return float(loss), {"x": gx, "w0": -gw1, "w1": gw1}


def am_softmax_loss(x, y, params: BinaryHeadParams):
    x, y = _check_batch(x, y)
    _check_finite(w0=params.w0, w1=params.w1)
    n = x.shape[0]
    xh, xn = _normalize(x, "embedding")
    w0h, w0n = _normalize(params.w0, "w0")
    w1h, w1n = _normalize(params.w1, "w1")
    sign = np.where(y == 0, 1.0, -1.0)
    dw = w0h - w1h
    c = sign * (xh @ dw)  # (w_y_hat - w_{1-y}_hat)^T x_hat
    z = params.alpha * (params.margin - c)
    loss = softplus(z).mean()
    dc = -params.alpha * expit(z) / n
    gxh = (dc * sign)[:, None] * dw[None, :]
    gw0h = (dc * sign) @ xh
    return float(loss), {
        "x": _normalize_backward(gxh, xh, xn),
        "w0": _normalize_backward(gw0h, w0h, w0n[0]),
        "w1": _normalize_backward(-gw0h, w1h, w1n[0]),
    }


def oc_softmax_loss(x, y, params: OcHeadParams):
    x, y = _check_batch(x, y)
    _check_finite(w0=params.w0)
    n = x.shape[0]
    xh, xn = _normalize(x, "embedding")
    wh, wn = _normalize(params.w0, "w0")
    cos = xh @ wh
    # y=0 penalises cos below m0, y=1 penalises cos above m1
    sign = np.where(y == 0, -1.0, 1.0)
    margin = np.where(y == 0, params.m0, params.m1)
    z = params.alpha * sign * (cos - margin)
    loss = softplus(z).mean()
    dcos = params.alpha * sign * expit(z) / n
    gxh = dcos[:, None] * wh[None, :]
    gwh = dcos @ xh
    return float(loss), {
        "x": _normalize_backward(gxh, xh, xn),
        "w0": _normalize_backward(gwh, wh, wn[0]),
    }


def cm_score(x, params: OcHeadParams | BinaryHeadParams, loss: str = "oc_softmax") -> np.ndarray:
    """Countermeasure score(s), higher meaning more bona fide.

    OC-Softmax: cosine between x and w0. Softmax: bona fide minus spoof
    logit. AM-Softmax: the same difference on unit vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    _check_finite(x=x2)
    if loss == "oc_softmax":
        xh, _ = _normalize(x2, "embedding")
        wh, _ = _normalize(params.w0, "w0")
        s = np.clip(xh @ wh, -1.0, 1.0)
    elif loss == "softmax":
        s = x2 @ (params.w0 - params.w1)
    elif loss == "am_softmax":
        xh, _ = _normalize(x2, "embedding")
        s = xh @ (_normalize(params.w0, "w0")[0] - _normalize(params.w1, "w1")[0])
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return float(s[0]) if single else s


LOSSES = {
    "softmax": softmax_loss,
    "am_softmax": am_softmax_loss,
    "oc_softmax": oc_softmax_loss,
}


def make_head(loss: str, dim: int, rng: np.random.Generator, alpha: float = 20.0,
              margin: float = 0.9, m0: float = 0.9, m1: float = 0.2):
    if loss == "oc_softmax":
        return OcHeadParams.random(dim, rng, alpha=alpha, m0=m0, m1=m1)
    if loss in ("softmax", "am_softmax"):
        return BinaryHeadParams.random(dim, rng, alpha=alpha, margin=margin)
    raise ValueError(f"unknown loss {loss!r}")
