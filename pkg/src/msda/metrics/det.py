"""DET operating points and the equal error rate."""
from dataclasses import dataclass

import numpy as np

from ..exceptions import PreconditionError, StructuralError


def split_scores(scores, labels):
    """Target and non-target score arrays; ``labels`` are booleans or 0/1."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise StructuralError("one label per score is required")
    if not np.all(np.isfinite(scores)):
        raise PreconditionError("scores must be finite")
    tar, non = scores[labels], scores[~labels]
    if len(tar) == 0 or len(non) == 0:
        raise PreconditionError("need at least one target and one non-target score")
    return tar, non


@dataclass
class DetCurve:
    """Operating points ordered by increasing threshold (accept iff score >= threshold)."""

    thresholds: np.ndarray
    p_miss: np.ndarray
    p_fa: np.ndarray

    def __len__(self):
        return len(self.thresholds)

    def check(self):
        ok = (np.all(np.diff(self.p_miss) >= 0) and np.all(np.diff(self.p_fa) <= 0)
              and np.all((0 <= self.p_miss) & (self.p_miss <= 1))
              and np.all((0 <= self.p_fa) & (self.p_fa <= 1)))
        if not ok:
            raise StructuralError("DET curve violates its monotonicity invariant")
        return self

    def points(self):
        return list(zip(self.thresholds.tolist(), self.p_miss.tolist(), self.p_fa.tolist()))


def compute_det(scores, labels):
    """Points at ``-inf``, every distinct score and ``+inf``."""
    tar, non = split_scores(scores, labels)
    thresholds = np.unique(np.concatenate([tar, non]))
    tar_sorted = np.sort(tar)
    non_sorted = np.sort(non)
    n_miss = np.searchsorted(tar_sorted, thresholds, side="left")
    n_fa = len(non) - np.searchsorted(non_sorted, thresholds, side="left")
    thresholds = np.concatenate([[-np.inf], thresholds, [np.inf]])
    p_miss = np.concatenate([[0.0], n_miss / len(tar), [1.0]])
    p_fa = np.concatenate([[1.0], n_fa / len(non), [0.0]])
    return DetCurve(thresholds, p_miss, p_fa)


def eer_from_det(det):
    """First point with ``p_miss >= p_fa``; linear interpolation when not exact."""
    diff = det.p_miss - det.p_fa
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(det.p_miss[k])
    m0, m1 = det.p_miss[k - 1], det.p_miss[k]
    f0, f1 = det.p_fa[k - 1], det.p_fa[k]
    t = (f0 - m0) / ((m1 - m0) - (f1 - f0))
    return float(m0 + t * (m1 - m0))


def compute_eer(scores, labels):
    return eer_from_det(compute_det(scores, labels))
