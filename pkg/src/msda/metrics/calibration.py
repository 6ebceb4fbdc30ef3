"""Affine score calibration ``s' = w0 + w1 * s`` by Cllr minimisation."""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .cllr import LN2
from .det import split_scores

MAX_SCALE = 1e3


class CalibrationWarning(UserWarning):
    pass


@dataclass
class CalibrationModel:
    w0: float
    w1: float
    converged: bool = True

    def apply(self, scores):
        return self.w0 + self.w1 * np.asarray(scores, dtype=float)


def _objective(params, z, y, wt):
    a, b = params
    L = a + b * z
    # Cllr: targets pay log2(1 + e^-L), non-targets log2(1 + e^L)
    cost = np.where(y, np.logaddexp(0.0, -L), np.logaddexp(0.0, L))
    value = float((wt * cost).sum())
    r = wt * (expit(L) - y)
    return value, np.array([r.sum(), (r * z).sum()])


def fit_linear_calibration(scores, labels, max_scale=MAX_SCALE, gtol=1e-8):
    """Minimise Cllr of ``w0 + w1 * s`` with ``0 <= w1 <= max_scale``.

    Scores are standardised first and the bound-constrained problem is
    solved by L-BFGS-B until the projected gradient inf-norm is below
    ``gtol``. Separable classes return ``w1 = max_scale`` with the
    threshold midway between the classes. ``w1`` at 0 (reversed scores) or
    at the cap triggers a :class:`CalibrationWarning`.
    """
    tar, non = split_scores(scores, labels)
    if tar.min() > non.max():
        # the cost keeps falling as w1 grows, so the optimum sits on the cap
        warnings.warn("classes are separable; calibration scale capped", CalibrationWarning)
        mid = 0.5 * (tar.min() + non.max())
        return CalibrationModel(float(-max_scale * mid), float(max_scale), False)
    s = np.concatenate([tar, non])
    y = np.concatenate([np.ones(len(tar)), np.zeros(len(non))])
    wt = np.where(y == 1, 0.5 / len(tar), 0.5 / len(non)) / LN2
    m = float(s.mean())
    sd = float(s.std()) or 1.0
    z = (s - m) / sd
    # start from the identity map s' = s, i.e. a = m, b = sd in standardised units
    x0 = np.array([m, sd])
    res = minimize(_objective, x0, args=(z, y == 1, wt), jac=True, method="L-BFGS-B",
                   bounds=[(None, None), (0.0, max_scale * sd)],
                   options={"gtol": gtol, "ftol": 0.0, "maxiter": 10000, "maxcor": 10})
    a, b = res.x
    w1 = b / sd
    w0 = a - b * m / sd
    if w1 <= 0.0:
        warnings.warn("calibration reversal: scores are anti-correlated with the labels",
                      CalibrationWarning)
    elif w1 >= max_scale * (1 - 1e-12):
        warnings.warn("calibration scale reached its cap", CalibrationWarning)
    return CalibrationModel(float(w0), float(w1), bool(res.success))
