"""LDA projection and length normalisation."""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DegenerateEmbeddingError, PreconditionError, StructuralError


@dataclass
class LdaTransform:
    """``y = projection @ (x - mean)``; ``metadata`` records any regularisation."""

    mean: np.ndarray
    projection: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def in_dim(self):
        return self.projection.shape[1]

    @property
    def out_dim(self):
        return self.projection.shape[0]

    def apply(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.in_dim:
            raise StructuralError(f"LDA expects dim {self.in_dim}, got {X.shape[1]}")
        return (X - self.mean) @ self.projection.T


def scatter_matrices(X, labels):
    """Within- and between-class scatter, both normalised by the sample count."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    mean = X.mean(axis=0)
    d = X.shape[1]
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for c in np.unique(labels):
        Xc = X[labels == c]
        mc = Xc.mean(axis=0)
        centred = Xc - mc
        Sw += centred.T @ centred
        diff = (mc - mean)[:, None]
        Sb += len(Xc) * diff @ diff.T
    return Sw / len(X), Sb / len(X), mean


def fit_lda(X, labels, requested_dim=200):
    """Fisher LDA via the generalised eigenproblem ``Sb v = l Sw v``.

    The output dimension is ``min(requested_dim, n_classes - 1, dim)``,
    further capped by the number of non-zero discriminant eigenvalues.
    A singular within-class scatter gets ``1e-6 * trace / dim`` added to its
    diagonal, which is recorded in ``metadata["regularized"]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise StructuralError("one label per embedding is required")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise PreconditionError("LDA needs at least 2 classes")
    if counts.min() < 2:
        raise PreconditionError("every LDA class needs at least 2 samples")
    Sw, Sb, mean = scatter_matrices(X, labels)
    d = X.shape[1]
    out_dim = int(min(requested_dim, len(classes) - 1, d))
    meta = {"regularized": False, "ridge": 0.0}
    evals = np.linalg.eigvalsh(Sw)
    if evals[0] <= 1e-10 * max(evals[-1], 1e-300):
        ridge = 1e-6 * np.trace(Sw) / d
        if ridge <= 0:
            ridge = 1e-6
        Sw = Sw + ridge * np.eye(d)
        meta = {"regularized": True, "ridge": float(ridge)}
        warnings.warn("within-class scatter is singular; LDA was regularised", RuntimeWarning)
    vals, vecs = eigh(Sb, Sw)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    # directions without between-class spread carry no discriminant information
    rank = int((vals > 1e-10 * max(vals[0], 1e-300)).sum())
    out_dim = max(1, min(out_dim, rank))
    projection = vecs[:, :out_dim].T
    return LdaTransform(mean, np.ascontiguousarray(projection), meta)


def length_normalize(e):
    """Scale each row (or a single vector) to unit Euclidean norm."""
    e = np.asarray(e, dtype=float)
    norms = np.linalg.norm(e, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateEmbeddingError("cannot length-normalise a zero embedding")
    return e / norms


class LDA(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`fit_lda`."""

    def __init__(self, n_components=200):
        self.n_components = n_components

    def fit(self, X, y):
        self.transform_ = fit_lda(X, y, self.n_components)
        self.n_components_ = self.transform_.out_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.apply(X)


class LengthNormalizer(BaseEstimator, TransformerMixin):
    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return length_normalize(X)
