"""Adaptive symmetric score normalisation against a speaker cohort."""
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError

SIGMA_FLOOR = 1e-6


@dataclass
class CohortSet:
    """Cohort embeddings (one row per cohort speaker) and the top-K size."""

    embeddings: np.ndarray
    top_k: int = 50

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=float))
        if self.top_k < 2:
            raise ConfigurationError("top_k must be >= 2")
        if len(self.embeddings) < self.top_k:
            raise ConfigurationError(
                f"cohort has {len(self.embeddings)} members, fewer than top_k={self.top_k}")


def _top_stats(scores, top_k):
    scores = np.asarray(scores, dtype=float)
    if scores.shape[-1] < top_k:
        raise ConfigurationError(f"cohort of {scores.shape[-1]} scores is smaller than top_k={top_k}")
    top = -np.sort(-scores, axis=-1)[..., :top_k]
    return top.mean(axis=-1), np.maximum(top.std(axis=-1), SIGMA_FLOOR)


def adaptive_snorm(raw, enroll_cohort_scores, test_cohort_scores, top_k):
    """``0.5 * ((raw - mu_e) / sd_e + (raw - mu_t) / sd_t)`` over the top-K cohort scores.

    Broadcasts: ``raw`` may be an array whose leading shape matches the
    cohort score arrays without their last axis.
    """
    if top_k < 2:
        raise ConfigurationError("top_k must be >= 2")
    mu_e, sd_e = _top_stats(enroll_cohort_scores, top_k)
    mu_t, sd_t = _top_stats(test_cohort_scores, top_k)
    out = 0.5 * ((raw - mu_e) / sd_e + (raw - mu_t) / sd_t)
    return float(out) if np.ndim(out) == 0 else out
