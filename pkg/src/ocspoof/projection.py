"""Two-component PCA of utterance embeddings with a fixed sign convention."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class DegenerateProjection(ValueError):
    pass


@dataclass
class ProjectionResult:
    components: np.ndarray  # (2, D), orthonormal rows
    mean: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    projected: np.ndarray  # (n, 2)
    labels: list | None = None


class EmbeddingPCA(TransformerMixin, BaseEstimator):
    """Mean-centred PCA onto the top ``n_components`` covariance eigenvectors.

    Fit once (e.g. on dev embeddings) and apply the same transform to any
    other set so that all projections share one coordinate system. Each
    component is flipped so that its largest-magnitude entry is positive.
    """

    def __init__(self, n_components=2, rank_tol=1e-10):
        self.n_components = n_components
        self.rank_tol = rank_tol

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2, ensure_min_features=2)
        k = self.n_components
        if k > X.shape[1]:
            raise ValueError(f"n_components={k} exceeds dimension {X.shape[1]}")
        self.mean_ = X.mean(axis=0)
        cov = np.cov(X - self.mean_, rowvar=False, ddof=1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        total = float(np.sum(np.clip(evals, 0, None)))
        scale = max(total, np.finfo(float).tiny)
        for j in range(k):
            if evals[j] <= self.rank_tol * scale:
                raise DegenerateProjection(
                    f"covariance has rank < {k}: component {j + 1} has variance {evals[j]:.3g}"
                    f" along direction {np.array2string(evecs[:, j], precision=3)}"
                )
        comps = evecs[:, :k].T.copy()
        pivot = np.argmax(np.abs(comps), axis=1)
        comps *= np.sign(comps[np.arange(k), pivot])[:, None]
        self.components_ = comps
        self.explained_variance_ = evals[:k].copy()
        self.explained_variance_ratio_ = evals[:k] / scale
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} dims, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_.T

    def result(self, X, labels=None) -> ProjectionResult:
        check_is_fitted(self, "components_")
        return ProjectionResult(self.components_, self.mean_, self.explained_variance_,
                                self.explained_variance_ratio_, self.transform(X), labels)


def pca_project(embeddings, fit_mask=None, labels=None) -> ProjectionResult:
    """Fit a 2-D PCA on ``embeddings[fit_mask]`` (all rows by default) and project every row."""
    X = np.asarray(embeddings, dtype=np.float64)
    fit_on = X if fit_mask is None else X[np.asarray(fit_mask)]
    return EmbeddingPCA(2).fit(fit_on).result(X, labels)
