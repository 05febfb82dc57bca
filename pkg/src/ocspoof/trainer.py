"""Training loop, optimisers and the binary checkpoint format."""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import network
from .losses import LOSSES, BinaryHeadParams, OcHeadParams, cm_score, make_head
from .metrics import eer
from .network import NetConfig
from .protocol import fix_length

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "oc_softmax"
    batch_size: int = 64
    epochs: int = 100
    lr: float = 0.0003
    lr_decay: float = 0.5
    lr_decay_every: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_head: float | None = None  # None: same as lr
    alpha: float = 20.0
    margin: float = 0.9
    m0: float = 0.9
    m1: float = 0.2
    target_len: int = 750
    redraw_crop: bool = True
    weight_decay: float = 0.0
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("lr", "lr_decay", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_head is not None and self.lr_head <= 0:
            raise ValueError("lr_head must be positive")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")

    @property
    def head_lr(self) -> float:
        return self.lr if self.lr_head is None else self.lr_head


def lr_at_epoch(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def _check_grads(grads: dict[str, np.ndarray]):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam, updating ``params`` and ``state`` in place.

    A step whose gradients are all exactly zero is skipped entirely.
    """
    _check_grads(grads)
    if all(not np.any(g) for g in grads.values()):
        return params, state
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
    _check_grads(grads)
    for name, g in grads.items():
        params[name] -= lr * g
    return params


# --------------------------------------------------------------------------
# checkpoint

CKPT_MAGIC = b"OCSP"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    net_config: NetConfig
    train_config: TrainConfig
    net_params: dict[str, np.ndarray]
    head: OcHeadParams | BinaryHeadParams
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    dev_eer: float = float("nan")
    extra: dict = field(default_factory=dict)

    def scores(self, features, batch_size: int = 256) -> np.ndarray:
        """CM scores for a (B, T, F) array or a list of (T, F) matrices."""
        return np.array([cm_score(e, self.head, self.train_config.loss)
                         for e in self.embed(features, batch_size)])

    def embed(self, features, batch_size: int = 256) -> np.ndarray:
        if isinstance(features, np.ndarray) and features.ndim == 3:
            batches = [features[i:i + batch_size] for i in range(0, len(features), batch_size)]
        else:
            # variable lengths: one utterance at a time
            batches = [np.asarray(f)[None] for f in features]
        out = [network.forward(b, self.net_params, self.net_config)[0] for b in batches]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.net_config.embed_dim))

    def header(self) -> dict:
        head_meta = {k: v for k, v in asdict(self.head).items() if not isinstance(v, np.ndarray)}
        return {
            "net_config": asdict(self.net_config),
            "train_config": asdict(self.train_config),
            "head": head_meta,
            "adam_t": self.adam.t,
            "epoch": self.epoch,
            "dev_eer": self.dev_eer,
            "extra": self.extra,
        }

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"net/{k}", v) for k, v in sorted(self.net_params.items())]
        out += [(f"head/{k}", v) for k, v in sorted(self.head.vectors().items())]
        out += [(f"adam_m/{k}", v) for k, v in sorted(self.adam.m.items())]
        out += [(f"adam_v/{k}", v) for k, v in sorted(self.adam.v.items())]
        return out

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        meta = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        tensors = self.tensors()
        buf.write(struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(meta)))
        buf.write(meta)
        buf.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        magic, version, meta_len = struct.unpack_from("<4sII", view, 0)
        if magic != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint (magic {bytes(magic)!r})")
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos = 12
        meta = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", view, pos)
        pos += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            tensors[name] = arr.astype(np.float64)
            pos += 4 * size
        if pos != len(data):
            raise ValueError(f"{len(data) - pos} trailing bytes in checkpoint")

        def group(prefix):
            return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

        net_cfg = NetConfig(**meta["net_config"])
        train_cfg = TrainConfig(**meta["train_config"])
        head_vecs = group("head/")
        if train_cfg.loss == "oc_softmax":
            head = OcHeadParams(head_vecs["w0"], **meta["head"])
        else:
            head = BinaryHeadParams(head_vecs["w0"], head_vecs["w1"], **meta["head"])
        adam = AdamState(meta["adam_t"], group("adam_m/"), group("adam_v/"))
        return cls(net_cfg, train_cfg, group("net/"), head, adam, meta["epoch"],
                   meta["dev_eer"], meta.get("extra", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    dev_eer: float
    lr: float


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, checkpoint: Checkpoint, history: list[EpochRecord]):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


def format_log(history: Sequence[EpochRecord], header: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for h in header:
        buf.write(f"# {h}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in fields(EpochRecord)])
    for r in history:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.dev_eer), repr(r.lr)])
    return buf.getvalue()


def _stack(seqs, idx, target_len, offsets=None, rng=None):
    if offsets is None:
        return np.stack([fix_length(seqs[i], target_len, rng) for i in idx])
    return np.stack([
        fix_length(seqs[i], target_len, offset=int(offsets[i]) if len(seqs[i]) > target_len else None)
        for i in idx
    ])


def dev_scores(ckpt: Checkpoint, seqs, batch_size: int = 256) -> np.ndarray:
    """Scores on a validation set: every sequence cut at offset 0 / repeat-padded."""
    L = ckpt.train_config.target_len
    out = []
    for start in range(0, len(seqs), batch_size):
        idx = range(start, min(start + batch_size, len(seqs)))
        xb = np.stack([fix_length(seqs[i], L, offset=0 if len(seqs[i]) > L else None) for i in idx])
        emb, _ = network.forward(xb, ckpt.net_params, ckpt.net_config)
        out.append(cm_score(emb, ckpt.head, ckpt.train_config.loss))
    return np.concatenate(out)


def _dev_eer(ckpt, seqs, labels) -> float:
    s = dev_scores(ckpt, seqs)
    labels = np.asarray(labels)
    return eer((s[labels == 0], s[labels == 1]))[0]


def train(train_seqs, train_labels, dev_seqs, dev_labels, net_cfg: NetConfig,
          cfg: TrainConfig = TrainConfig()) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train an embedding network and loss head; keep the lowest-dev-EER epoch.

    ``*_seqs`` are sequences of (T_i, F) feature matrices (or a (B, T, F)
    array); labels are 0 for bona fide, 1 for spoof. The returned history
    starts with the untrained model as epoch 0.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    dev_labels = np.asarray(dev_labels, dtype=np.int64)
    n = len(train_seqs)
    if n == 0 or len(dev_seqs) == 0:
        raise ValueError("train and dev splits must be non-empty")
    if len(train_labels) != n or len(dev_labels) != len(dev_seqs):
        raise ValueError("labels do not match sequences")

    init_ss, shuffle_ss, crop_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    crop_rng = np.random.default_rng(crop_ss)

    params = network.init_params(net_cfg, init_rng)
    if net_cfg.input_norm:
        network.set_input_norm(params, train_seqs)
    head = make_head(cfg.loss, net_cfg.embed_dim, init_rng, alpha=cfg.alpha,
                     margin=cfg.margin, m0=cfg.m0, m1=cfg.m1)
    state = AdamState()
    loss_fn = LOSSES[cfg.loss]
    ckpt = Checkpoint(net_cfg, cfg, params, head, state, 0)

    fixed_offsets = None
    if not cfg.redraw_crop:
        fixed_offsets = np.array([crop_rng.integers(0, max(len(s) - cfg.target_len, 0) + 1)
                                  for s in train_seqs])

    ckpt.dev_eer = _dev_eer(ckpt, dev_seqs, dev_labels)
    history = [EpochRecord(0, float("nan"), ckpt.dev_eer, lr_at_epoch(0, cfg))]
    best = copy.deepcopy(ckpt)

    for e in range(cfg.epochs):
        lr = lr_at_epoch(e, cfg)
        lr_head = cfg.head_lr * cfg.lr_decay ** (e // cfg.lr_decay_every)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = _stack(train_seqs, idx, cfg.target_len, fixed_offsets, crop_rng)
            emb, cache = network.forward(xb, params, net_cfg)
            loss, g = loss_fn(emb, train_labels[idx], head)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in epoch {e + 1}", best, history)
            net_grads, _ = network.backward(cache, g["x"], params)
            if cfg.weight_decay:
                for k in net_grads:
                    net_grads[k] = net_grads[k] + cfg.weight_decay * params[k]
            if cfg.grad_clip:
                norm = np.sqrt(sum(float(np.sum(v * v)) for v in net_grads.values()))
                if norm > cfg.grad_clip:
                    net_grads = {k: v * (cfg.grad_clip / norm) for k, v in net_grads.items()}
            try:
                adam_step(params, net_grads, state, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
                head_grads = {k: g[k] for k in head.vectors()}
                sgd_step(head.vectors(), head_grads, lr_head)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {e + 1}: {exc}", best, history) from exc
            total += loss * len(idx)
        ckpt.epoch = e + 1
        ckpt.dev_eer = _dev_eer(ckpt, dev_seqs, dev_labels)
        history.append(EpochRecord(e + 1, total / n, ckpt.dev_eer, lr))
        log.info("epoch %d loss %.5f dev EER %.4f", e + 1, total / n, ckpt.dev_eer)
        if ckpt.dev_eer < best.dev_eer:
            best = copy.deepcopy(ckpt)
    return best, history
