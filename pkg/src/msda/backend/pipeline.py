"""LDA -> length normalisation -> PLDA scoring with optional s-norm."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .lda import fit_lda, length_normalize
from .plda import fit_plda, plda_llr_matrix
from .snorm import CohortSet, adaptive_snorm


class PldaBackend(BaseEstimator):
    """Multi-condition backend trained on pooled embeddings of every domain.

    ``score`` returns PLDA LLRs of enrollment sets against test embeddings;
    with ``snorm_top_k`` set they are s-normalised against the training
    speakers' mean embeddings.
    """

    def __init__(self, lda_dim=200, plda_iters=20, length_norm=True, snorm_top_k=None):
        self.lda_dim = lda_dim
        self.plda_iters = plda_iters
        self.length_norm = length_norm
        self.snorm_top_k = snorm_top_k

    def preprocess(self, X):
        check_is_fitted(self, "lda_")
        Y = self.lda_.apply(X)
        return length_normalize(Y) if self.length_norm else Y

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.lda_ = fit_lda(X, y, self.lda_dim)
        Y = self.preprocess(X)
        result = fit_plda(Y, y, self.plda_iters)
        self.plda_ = result.model
        self.log_likelihoods_ = result.log_likelihoods
        if self.snorm_top_k:
            means = np.stack([Y[y == c].mean(0) for c in np.unique(y)])
            self.cohort_ = CohortSet(means, self.snorm_top_k)
        return self

    def score(self, enroll_sets, tests):
        """``(n_models, n_tests)`` matrix of (optionally normalised) LLRs."""
        check_is_fitted(self, "plda_")
        E = [self.preprocess(e) for e in enroll_sets]
        T = self.preprocess(tests)
        raw = plda_llr_matrix(self.plda_, E, T)
        if not self.snorm_top_k:
            return raw
        cohort = [row[None] for row in self.cohort_.embeddings]
        enroll_cohort = plda_llr_matrix(self.plda_, E, self.cohort_.embeddings)
        test_cohort = plda_llr_matrix(self.plda_, cohort, T).T
        k = self.cohort_.top_k
        return adaptive_snorm(raw, enroll_cohort[:, None, :], test_cohort[None, :, :], k)
