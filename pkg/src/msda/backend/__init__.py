"""Embedding back-end: LDA, length normalisation, PLDA and score normalisation."""
from .io import (EmbeddingSet, load_backend, load_embeddings, save_backend, save_embeddings)
from .lda import LDA, LdaTransform, LengthNormalizer, fit_lda, length_normalize
from .pipeline import PldaBackend
from .plda import (PLDA, PldaFitResult, PldaModel, em_step, fit_plda, log_likelihood, plda_llr,
                   plda_llr_matrix, posterior_odds)
from .snorm import CohortSet, adaptive_snorm

__all__ = [
    "CohortSet", "EmbeddingSet", "LDA", "LdaTransform", "LengthNormalizer", "PLDA", "PldaBackend",
    "PldaFitResult", "PldaModel", "adaptive_snorm", "em_step", "fit_lda", "fit_plda",
    "length_normalize", "load_backend", "load_embeddings", "log_likelihood", "plda_llr",
    "plda_llr_matrix", "posterior_odds", "save_backend", "save_embeddings",
]
