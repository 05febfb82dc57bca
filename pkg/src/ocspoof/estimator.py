"""scikit-learn style countermeasure estimator and fixed-length transformer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .metrics import eer
from .network import NetConfig
from .protocol import fix_length
from .trainer import Checkpoint, TrainConfig, dev_scores, train


def check_sequences(X, n_features: int | None = None) -> list[np.ndarray]:
    """Validate a batch of variable-length feature matrices (or a 3-D array)."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        seqs = list(X.astype(np.float64, copy=False))
    else:
        seqs = [np.asarray(x, dtype=np.float64) for x in X]
    if not seqs:
        raise ValueError("need at least one sequence")
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError(f"sequence {i} must be a non-empty (frames, dims) matrix, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"sequence {i} contains non-finite values")
        if n_features is not None and s.shape[1] != n_features:
            raise ValueError(f"sequence {i} has {s.shape[1]} dims, expected {n_features}")
    dims = {s.shape[1] for s in seqs}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dims across sequences: {sorted(dims)}")
    return seqs


def check_labels(y, n: int) -> np.ndarray:
    y = column_or_1d(y)
    if len(y) != n:
        raise ValueError(f"{len(y)} labels for {n} sequences")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 (bona fide) or 1 (spoof)")
    return y.astype(np.int64)


class FixedLengthCropper(TransformerMixin, BaseEstimator):
    """Repeat-pad or crop every sequence to ``target_len`` frames.

    With ``random_crop=False`` long sequences keep their first frames.
    """

    def __init__(self, target_len=750, random_crop=True, seed=0):
        self.target_len = target_len
        self.random_crop = random_crop
        self.seed = seed

    def fit(self, X=None, y=None):
        self.rng_ = np.random.default_rng(self.seed)
        return self

    def transform(self, X):
        seqs = check_sequences(X)
        rng = getattr(self, "rng_", None) or np.random.default_rng(self.seed)
        out = []
        for s in seqs:
            if self.random_crop or len(s) <= self.target_len:
                out.append(fix_length(s, self.target_len, rng))
            else:
                out.append(fix_length(s, self.target_len, offset=0))
        return np.stack(out)


class SpoofCountermeasure(ClassifierMixin, BaseEstimator):
    """Embedding network + margin loss head trained as a spoofing countermeasure.

    Labels are 0 for bona fide and 1 for spoof. ``score_samples`` returns
    the CM score (higher = more bona fide, cosine to w0 for OC-Softmax);
    ``decision_function`` is that score minus ``threshold_``, the dev-set
    EER threshold, and ``predict`` maps non-negative decisions to 0.
    """

    def __init__(self, loss="oc_softmax", encoder="mlp_small", hidden_dims=(32,), embed_dim=256,
                 pooling="attentive", kernel_size=3, alpha=20.0, margin=0.9, m0=0.9, m1=0.2,
                 batch_size=64, epochs=100, lr=0.0003, lr_decay=0.5, lr_decay_every=10,
                 lr_head=None, target_len=750, redraw_crop=True, seed=0):
        self.loss = loss
        self.encoder = encoder
        self.hidden_dims = hidden_dims
        self.embed_dim = embed_dim
        self.pooling = pooling
        self.kernel_size = kernel_size
        self.alpha = alpha
        self.margin = margin
        self.m0 = m0
        self.m1 = m1
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.lr_head = lr_head
        self.target_len = target_len
        self.redraw_crop = redraw_crop
        self.seed = seed

    def _configs(self, n_features):
        net = NetConfig(n_features=n_features, encoder=self.encoder,
                        hidden_dims=tuple(self.hidden_dims), embed_dim=self.embed_dim,
                        pooling=self.pooling, kernel_size=self.kernel_size, seed=self.seed)
        tr = TrainConfig(loss=self.loss, batch_size=self.batch_size, epochs=self.epochs,
                         lr=self.lr, lr_decay=self.lr_decay, lr_decay_every=self.lr_decay_every,
                         lr_head=self.lr_head, alpha=self.alpha, margin=self.margin,
                         m0=self.m0, m1=self.m1, target_len=self.target_len,
                         redraw_crop=self.redraw_crop, seed=self.seed)
        return net, tr

    def fit(self, X, y, validation_data=None):
        """Train; the epoch with the lowest EER on ``validation_data`` is kept.

        Without validation data the training set itself is used for selection.
        """
        seqs = check_sequences(X)
        y = check_labels(y, len(seqs))
        if validation_data is None:
            dev_seqs, dev_y = seqs, y
        else:
            dev_seqs = check_sequences(validation_data[0], seqs[0].shape[1])
            dev_y = check_labels(validation_data[1], len(dev_seqs))
        net_cfg, train_cfg = self._configs(seqs[0].shape[1])
        self.checkpoint_, self.history_ = train(seqs, y, dev_seqs, dev_y, net_cfg, train_cfg)
        self._set_fitted(dev_seqs, dev_y)
        return self

    def _set_fitted(self, dev_seqs, dev_y):
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.checkpoint_.net_config.n_features
        s = dev_scores(self.checkpoint_, dev_seqs)
        if np.any(dev_y == 0) and np.any(dev_y == 1):
            self.validation_eer_, self.threshold_ = eer((s[dev_y == 0], s[dev_y == 1]))
        else:
            self.validation_eer_, self.threshold_ = float("nan"), 0.0
        return self

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, threshold: float = 0.0) -> "SpoofCountermeasure":
        net, tr = ckpt.net_config, ckpt.train_config
        est = cls(loss=tr.loss, encoder=net.encoder, hidden_dims=net.hidden_dims,
                  embed_dim=net.embed_dim, pooling=net.pooling, kernel_size=net.kernel_size,
                  alpha=tr.alpha, margin=tr.margin, m0=tr.m0, m1=tr.m1,
                  batch_size=tr.batch_size, epochs=tr.epochs, lr=tr.lr, lr_decay=tr.lr_decay,
                  lr_decay_every=tr.lr_decay_every, lr_head=tr.lr_head,
                  target_len=tr.target_len, redraw_crop=tr.redraw_crop, seed=tr.seed)
        est.checkpoint_ = ckpt
        est.history_ = []
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = net.n_features
        est.threshold_ = threshold
        est.validation_eer_ = ckpt.dev_eer
        return est

    def _prepare(self, X):
        check_is_fitted(self, "checkpoint_")
        seqs = check_sequences(X, self.n_features_in_)
        return FixedLengthCropper(self.target_len, random_crop=False).transform(seqs)

    def transform(self, X) -> np.ndarray:
        """Utterance embeddings, (n, embed_dim)."""
        X = self._prepare(X)
        return self.checkpoint_.embed(X)

    def score_samples(self, X) -> np.ndarray:
        X = self._prepare(X)
        return self.checkpoint_.scores(X)

    def decision_function(self, X) -> np.ndarray:
        return self.score_samples(X) - self.threshold_

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 0, 1)

    def score(self, X, y, sample_weight=None):
        """1 - EER of the CM scores on (X, y)."""
        y = check_labels(y, len(X))
        s = self.score_samples(X)
        return 1.0 - eer((s[y == 0], s[y == 1]))[0]
