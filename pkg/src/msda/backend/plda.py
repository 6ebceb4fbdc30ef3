"""Two-covariance PLDA: ``x = mu + v + e`` with ``v ~ N(0, B)`` and ``e ~ N(0, W)``.

Scoring and likelihoods are evaluated in the basis that whitens ``W`` and
diagonalises ``B``, where every speaker-set marginal factorises per
dimension and stays finite when ``B`` is singular.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..exceptions import FitError, PreconditionError, StructuralError

MIN_W_EIG = 1e-10


@dataclass
class PldaModel:
    mu: np.ndarray
    B: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        d = self.mu.shape[0]
        if self.B.shape != (d, d) or self.W.shape != (d, d):
            raise StructuralError("mu, B and W dimensions disagree")
        self._basis = None

    @property
    def dim(self):
        return self.mu.shape[0]

    def basis(self):
        """``(T, phi)`` with ``T W T' = I`` and ``T B T' = diag(phi)``."""
        if self._basis is None:
            W = 0.5 * (self.W + self.W.T)
            if np.linalg.eigvalsh(W)[0] <= MIN_W_EIG:
                raise FitError("within-class covariance is not positive definite")
            L = cholesky(W, lower=True)
            Linv = solve_triangular(L, np.eye(self.dim), lower=True)
            Bw = Linv @ (0.5 * (self.B + self.B.T)) @ Linv.T
            phi, U = eigh(0.5 * (Bw + Bw.T))
            self._basis = (U.T @ Linv, np.maximum(phi, 0.0), np.log(np.diag(L)).sum())
        return self._basis[:2]

    def log_det_w(self):
        self.basis()
        return 2.0 * self._basis[2]


def _set_term(phi, n, s):
    """``log p(set) - sum_j log N(x_j; mu, W)`` for a set of ``n`` samples with
    transformed sum ``s``; vectorised over rows of ``s`` when ``n`` is an array."""
    n = np.asarray(n, dtype=float)[..., None]
    denom = 1.0 + n * phi
    return -0.5 * np.log(denom).sum(-1) + 0.5 * (s * s * phi / denom).sum(-1)


def _check_dim(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise StructuralError(f"embedding dim {X.shape[1]} != PLDA dim {model.dim}")
    return X


def plda_llr(model, enroll, test):
    """Natural-log likelihood ratio of same vs different speaker.

    ``enroll`` is one embedding or an ``(n, D)`` set sharing one speaker
    variable; ``test`` is one embedding.
    """
    E = _check_dim(model, enroll)
    t = _check_dim(model, test)
    if t.shape[0] != 1:
        raise StructuralError("test must be a single embedding")
    T, phi = model.basis()
    se = ((E - model.mu) @ T.T).sum(0)
    st = ((t - model.mu) @ T.T)[0]
    n = E.shape[0]
    return float(_set_term(phi, n + 1, se + st) - _set_term(phi, n, se) - _set_term(phi, 1, st))


def plda_llr_matrix(model, enroll_sets, tests):
    """LLR of every enrollment set against every test row: ``(len(enroll_sets), len(tests))``."""
    T, phi = model.basis()
    tests = _check_dim(model, tests)
    st = (tests - model.mu) @ T.T
    out = np.empty((len(enroll_sets), len(tests)))
    base_t = _set_term(phi, np.ones(len(tests)), st)
    for k, E in enumerate(enroll_sets):
        E = _check_dim(model, E)
        se = ((E - model.mu) @ T.T).sum(0)
        n = E.shape[0]
        out[k] = _set_term(phi, np.full(len(tests), n + 1), se + st) - _set_term(phi, n, se) - base_t
    return out


def _gaussian_loglik(model, Y):
    """``sum_j log N(y_j; 0, W)`` for centred rows ``Y``."""
    T, _ = model.basis()
    z = Y @ T.T
    n, d = Y.shape
    return -0.5 * (z * z).sum() - 0.5 * n * (d * math.log(2.0 * math.pi) + model.log_det_w())


def _group(X, labels):
    order = np.argsort(labels, kind="stable")
    labels_sorted = labels[order]
    uniq, starts, counts = np.unique(labels_sorted, return_index=True, return_counts=True)
    return order, uniq, starts, counts


def log_likelihood(model, X, labels):
    """Total log marginal likelihood of the labelled data under ``model``."""
    X = _check_dim(model, X)
    labels = np.asarray(labels)
    order, _, starts, counts = _group(X, labels)
    Y = X[order] - model.mu
    T, phi = model.basis()
    sums = np.add.reduceat(Y @ T.T, starts, axis=0)
    return float(_gaussian_loglik(model, Y) + _set_term(phi, counts, sums).sum())


@dataclass
class PldaFitResult:
    model: PldaModel
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _initial_model(X, labels):
    order, _, starts, counts = _group(X, labels)
    Xs = X[order]
    mu = X.mean(0)
    means = np.add.reduceat(Xs, starts, axis=0) / counts[:, None]
    resid = Xs - np.repeat(means, counts, axis=0)
    d = X.shape[1]
    W = resid.T @ resid / max(len(X) - len(counts), 1)
    if np.linalg.eigvalsh(W)[0] <= MIN_W_EIG:
        W = W + 1e-6 * max(np.trace(W) / d, 1.0) * np.eye(d)
    Bc = np.cov(means.T, bias=True).reshape(d, d)
    return PldaModel(mu, Bc + 1e-6 * np.eye(d), W)


def em_step(model, X, labels):
    """One exact EM update of ``(mu, B, W)``."""
    order, _, starts, counts = _group(X, labels)
    Xs = X[order]
    Y = Xs - model.mu
    T, phi = model.basis()
    Tinv = np.linalg.inv(T)
    sums = np.add.reduceat(Y @ T.T, starts, axis=0)
    n = counts[:, None].astype(float)
    post_mean_t = sums * phi / (1.0 + n * phi)
    post_var_t = phi / (1.0 + n * phi)
    m = post_mean_t @ Tinv.T
    K, N = len(counts), len(X)
    cov_b = (Tinv * post_var_t.mean(0)) @ Tinv.T
    B = m.T @ m / K + cov_b
    m_rows = np.repeat(m, counts, axis=0)
    mu = (Xs - m_rows).mean(0)
    R = Xs - mu - m_rows
    cov_w = (Tinv * (post_var_t * n).sum(0) / N) @ Tinv.T
    W = R.T @ R / N + cov_w
    return PldaModel(mu, 0.5 * (B + B.T), 0.5 * (W + W.T))


def fit_plda(X, labels, iters=20, tol=1e-7, init=None):
    """EM estimate of the two-covariance model; the log-likelihood is asserted monotone.

    Returns a :class:`PldaFitResult` whose ``log_likelihoods`` has one entry
    per visited model (initial plus one per iteration).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise StructuralError("one label per embedding is required")
    _, counts = np.unique(labels, return_counts=True)
    if len(counts) < 2:
        raise PreconditionError("PLDA needs at least 2 speakers")
    if counts.max() < 2:
        raise FitError("every speaker has a single utterance; B and W are not identifiable")
    if counts.min() < 2:
        warnings.warn(f"{int((counts < 2).sum())} speaker(s) with a single utterance",
                      RuntimeWarning)
    model = init if init is not None else _initial_model(X, labels)
    lls = [log_likelihood(model, X, labels)]
    converged = False
    it = 0
    for it in range(1, iters + 1):
        model = em_step(model, X, labels)
        lls.append(log_likelihood(model, X, labels))
        gain = lls[-1] - lls[-2]
        if gain < -1e-9 * abs(lls[-2]):
            raise FitError(f"EM log-likelihood decreased at iteration {it}: {gain:.3e}")
        if abs(gain) < tol * abs(lls[-2]):
            converged = True
            break
    if np.linalg.eigvalsh(model.W)[0] <= MIN_W_EIG:
        raise FitError("estimated within-class covariance is not positive definite")
    return PldaFitResult(model, lls, converged, it)


class PLDA(BaseEstimator):
    """Estimator wrapper: ``fit(X, y)`` then ``score(enroll_sets, tests)``."""

    def __init__(self, n_iter=20, tol=1e-7):
        self.n_iter = n_iter
        self.tol = tol

    def fit(self, X, y):
        result = fit_plda(X, y, self.n_iter, self.tol)
        self.model_ = result.model
        self.log_likelihoods_ = result.log_likelihoods
        return self

    def score_matrix(self, enroll_sets, tests):
        check_is_fitted(self, "model_")
        return plda_llr_matrix(self.model_, enroll_sets, tests)


def posterior_odds(llr, prior_odds):
    """Posterior odds ``exp(llr) * prior_odds``."""
    if not prior_odds > 0:
        raise PreconditionError("prior odds must be > 0")
    return math.exp(llr) * prior_odds
