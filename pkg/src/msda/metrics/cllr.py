"""Log-likelihood-ratio cost and its PAV minimum."""
import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import PreconditionError
from .det import split_scores

LN2 = math.log(2.0)


def compute_cllr(llrs, labels):
    """``0.5 * (mean_tar log2(1 + e^-L) + mean_non log2(1 + e^L))`` for natural-log LLRs."""
    tar, non = split_llrs(llrs, labels)
    c_tar = np.logaddexp(0.0, -tar).mean() / LN2
    c_non = np.logaddexp(0.0, non).mean() / LN2
    return float(0.5 * (c_tar + c_non))


def split_llrs(llrs, labels):
    llrs = np.asarray(llrs, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if llrs.shape != labels.shape:
        raise PreconditionError("one label per LLR is required")
    if np.any(np.isnan(llrs)):
        raise PreconditionError("LLRs must not be NaN")
    tar, non = llrs[labels], llrs[~labels]
    if len(tar) == 0 or len(non) == 0:
        raise PreconditionError("need at least one target and one non-target LLR")
    return tar, non


@dataclass
class PavWarp:
    """Monotone step function: scores ``>= knots[i]`` map to ``values[i]``."""

    knots: np.ndarray
    values: np.ndarray

    def __call__(self, scores):
        scores = np.asarray(scores, dtype=float)
        idx = np.searchsorted(self.knots, scores, side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]


def _pav(targets, totals):
    """Pool-adjacent-violators on ordered groups; returns block (targets, totals, sizes)."""
    bt, bn, size = [], [], []
    for t, n in zip(targets, totals):
        bt.append(float(t))
        bn.append(float(n))
        size.append(1)
        while len(bt) > 1 and bt[-2] * bn[-1] >= bt[-1] * bn[-2]:
            t2, n2, s2 = bt.pop(), bn.pop(), size.pop()
            bt[-1] += t2
            bn[-1] += n2
            size[-1] += s2
    return np.array(bt), np.array(bn), np.array(size)


def fit_pav(scores, labels, laplace=False):
    """Optimal monotone score -> LLR warp under the trial-set prior.

    Tied scores form one initial group. With ``laplace`` a virtual target
    below and a virtual non-target above all scores keep LLRs finite.
    """
    tar, non = split_scores(scores, labels)
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    uniq, inv = np.unique(scores, return_inverse=True)
    tcount = np.bincount(inv, weights=labels.astype(float), minlength=len(uniq))
    ncount = np.bincount(inv, minlength=len(uniq)).astype(float)
    n_tar, n_non = float(len(tar)), float(len(non))
    if laplace:
        tcount = np.concatenate([[1.0], tcount, [0.0]])
        ncount = np.concatenate([[1.0], ncount, [1.0]])
        n_tar += 1.0
        n_non += 1.0
    bt, bn, size = _pav(tcount, ncount)
    with np.errstate(divide="ignore"):
        block_llr = (np.log(bt) - np.log(bn - bt)) - (math.log(n_tar) - math.log(n_non))
    group_llr = np.repeat(block_llr, size)
    if laplace:
        group_llr = group_llr[1:-1]
    first = np.concatenate([[0], np.cumsum(size)[:-1]])
    knots_src = np.concatenate([[-np.inf], uniq, [np.inf]]) if laplace else uniq
    knots = knots_src[first]
    if laplace:
        knots[0] = -np.inf
    return PavWarp(knots, block_llr), group_llr[inv]


def pav_cllr_min(scores, labels, laplace=False):
    """``(cllr_min, warped_llrs)``: Cllr after the optimal monotone warp."""
    split_scores(scores, labels)
    _, warped = fit_pav(scores, labels, laplace)
    return compute_cllr(warped, labels), warped
