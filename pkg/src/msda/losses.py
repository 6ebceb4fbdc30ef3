"""Adaptation objectives: RBF-kernel MMD, DAT and classification losses,
classifier discrepancy and the progressive weighting schedule.

Losses are sums over samples. Each function returns the value together with
gradients with respect to its array inputs so trainers can chain them into
the network's backward pass.
"""
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial.distance import pdist

from .exceptions import (ConfigurationError, NormalizationError, NumericError,
                         PreconditionError, StructuralError)
from .nn.layers import log_softmax, softmax_cross_entropy

BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class KernelConfig:
    """RBF bandwidth: a positive number or ``"median"`` for the median heuristic."""

    bandwidth: object = "median"

    def __post_init__(self):
        if self.bandwidth != "median":
            if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
                raise ConfigurationError("bandwidth must be > 0 or 'median'")

    def resolve(self, *samples):
        if self.bandwidth == "median":
            return median_bandwidth(np.vstack([np.atleast_2d(s) for s in samples]))
        return float(self.bandwidth)

    def resolved(self, *samples):
        return KernelConfig(self.resolve(*samples))


def median_bandwidth(pooled):
    """Median pairwise Euclidean distance of the pooled rows, floored at 1e-6."""
    pooled = np.atleast_2d(np.asarray(pooled, dtype=float))
    if pooled.shape[0] < 2:
        return 1.0
    median = float(np.median(pdist(pooled)))
    if not np.isfinite(median):
        raise NumericError("median bandwidth is not finite")
    return max(median, BANDWIDTH_FLOOR)


@dataclass(frozen=True)
class ScheduleState:
    """Training progress ``p`` in [0, 1] and schedule sharpness ``theta``."""

    p: float
    theta: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise PreconditionError(f"progress p={self.p} outside [0, 1]")
        if self.theta <= 0:
            raise PreconditionError("theta must be > 0")


def mu_schedule(sched, theta=None):
    """Progressive weight ``2 / (1 + exp(-theta * p)) - 1`` rising from 0 towards 1."""
    if not isinstance(sched, ScheduleState):
        sched = ScheduleState(float(sched), 10.0 if theta is None else theta)
    return 2.0 / (1.0 + math.exp(-sched.theta * sched.p)) - 1.0


def total_loss(cls, mmd, sched):
    """Discrepancy-minimisation objective ``mu(p) * mmd + cls``."""
    return mu_schedule(sched) * mmd + cls


# -- kernel and MMD ------------------------------------------------------------

def rbf_kernel(a, b, cfg=KernelConfig(1.0)):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise StructuralError(f"kernel arguments differ in shape: {a.shape} vs {b.shape}")
    sigma = cfg.resolve(a, b) if isinstance(cfg, KernelConfig) else float(cfg)
    d2 = float(np.sum((a - b) ** 2))
    return math.exp(-d2 / (2.0 * sigma ** 2))


def _sq_dists(x, y):
    d2 = (x ** 2).sum(1)[:, None] + (y ** 2).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d2, 0.0)


def _gram(x, y, sigma):
    return np.exp(-_sq_dists(x, y) / (2.0 * sigma ** 2))


def mmd_squared(Xa, Xb, cfg=KernelConfig(), return_grad=False):
    """Biased (V-statistic) squared MMD between two sample sets.

    With ``return_grad`` also returns ``(dXa, dXb)``; the bandwidth is held
    fixed when differentiating, also when it comes from the median heuristic.
    """
    Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    if Xa.shape[0] < 1 or Xb.shape[0] < 1 or Xa.size == 0 or Xb.size == 0:
        raise PreconditionError("MMD needs at least one sample on each side")
    if Xa.shape[1] != Xb.shape[1]:
        raise StructuralError("sample sets differ in dimension")
    # canonical argument order makes the value bit-symmetric in (Xa, Xb)
    if (Xb.shape, Xb.tobytes()) < (Xa.shape, Xa.tobytes()):
        out = mmd_squared(Xb, Xa, cfg, return_grad)
        return out if not return_grad else (out[0], out[2], out[1])
    sigma = cfg.resolve(Xa, Xb)
    L, M = Xa.shape[0], Xb.shape[0]
    Kaa = _gram(Xa, Xa, sigma)
    Kbb = _gram(Xb, Xb, sigma)
    Kab = _gram(Xa, Xb, sigma)
    value = Kaa.sum() / L ** 2 - 2.0 * Kab.sum() / (L * M) + Kbb.sum() / M ** 2
    if not return_grad:
        return float(value)
    s2 = sigma ** 2
    # d k(x, y) / dx = -k(x, y) (x - y) / sigma^2
    gA = (-2.0 / (L ** 2 * s2)) * (Kaa.sum(1)[:, None] * Xa - Kaa @ Xa) \
        + (2.0 / (L * M * s2)) * (Kab.sum(1)[:, None] * Xa - Kab @ Xb)
    gB = (-2.0 / (M ** 2 * s2)) * (Kbb.sum(1)[:, None] * Xb - Kbb @ Xb) \
        + (2.0 / (L * M * s2)) * (Kab.sum(0)[:, None] * Xb - Kab.T @ Xa)
    return float(value), gA, gB


@dataclass
class PairwiseMMD:
    value: float
    terms: dict
    grads: dict
    bandwidths: dict


def pairwise_mmd_loss(samples, cfg=KernelConfig(), return_grad=True):
    """Average over unordered domain pairs of the summed per-level MMD².

    ``samples`` maps a level name (e.g. ``"F5"``, ``"fc1"``) to a list with
    one sample matrix per domain. The bandwidth of each level is resolved
    once from all domains pooled. ``grads[level][i]`` is the gradient for
    domain ``i``'s matrix.
    """
    levels = list(samples)
    if not levels:
        raise PreconditionError("no levels given")
    n = len(samples[levels[0]])
    if n < 2 or any(len(samples[lv]) != n for lv in levels):
        raise PreconditionError("pairwise MMD needs the same N >= 2 domains at every level")
    coef = 1.0 / math.comb(n, 2)
    terms, grads, bandwidths = {}, {}, {}
    total = 0.0
    for lv in levels:
        mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in samples[lv]]
        sigma = cfg.resolve(*mats)
        bandwidths[lv] = sigma
        fixed = KernelConfig(sigma)
        grads[lv] = [np.zeros_like(m) for m in mats]
        for i, j in combinations(range(n), 2):
            if return_grad:
                v, gi, gj = mmd_squared(mats[i], mats[j], fixed, return_grad=True)
                grads[lv][i] += coef * gi
                grads[lv][j] += coef * gj
            else:
                v = mmd_squared(mats[i], mats[j], fixed)
            terms[(lv, i, j)] = v
    # sum pair by pair over levels to mirror the written objective
    for i, j in combinations(range(n), 2):
        total += sum(terms[(lv, i, j)] for lv in levels)
    return PairwiseMMD(coef * total, terms, grads if return_grad else None, bandwidths)


# -- classification style losses ------------------------------------------------

@dataclass
class LossBreakdown:
    """Parts of one objective evaluation and their documented composite.

    ``kind`` selects the composite rule:

    * ``"dat"``: ``speaker - weight * domain``
    * ``"mmd"``: ``weight * mmd + sum(cls_per_domain)``
    * ``"cls"``: ``sum(cls_per_domain)``
    * ``"discrepancy"``: ``sum(cls_per_domain) - discrepancy`` (classifier step)
    * ``"generator"``: ``discrepancy`` (generator step)
    """

    kind: str
    composite: float = 0.0
    weight: float = 0.0
    speaker: float = 0.0
    domain: float = 0.0
    cls_per_domain: list = field(default_factory=list)
    mmd: float = 0.0
    mmd_terms: dict = field(default_factory=dict)
    discrepancy: float = 0.0

    def recompute(self):
        if self.kind == "dat":
            return self.speaker - self.weight * self.domain
        if self.kind == "mmd":
            return self.weight * self.mmd + sum(self.cls_per_domain)
        if self.kind == "cls":
            return sum(self.cls_per_domain)
        if self.kind == "discrepancy":
            return sum(self.cls_per_domain) - self.discrepancy
        if self.kind == "generator":
            return self.discrepancy
        raise ConfigurationError(f"unknown breakdown kind {self.kind!r}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "composite": self.composite,
            "weight": self.weight,
            "speaker": self.speaker,
            "domain": self.domain,
            "cls_per_domain": list(self.cls_per_domain),
            "mmd": self.mmd,
            "mmd_terms": {f"{lv}:{i}-{j}": v for (lv, i, j), v in self.mmd_terms.items()},
            "discrepancy": self.discrepancy,
        }


def head_loss(head, embeddings, labels, input_grad=True):
    """Summed cross-entropy of ``head`` on ``embeddings``.

    Returns ``(loss, param_grads, d_embeddings, activations)``.
    """
    acts = head.forward(embeddings)
    logits = acts[head.logits_layer]
    if logits.shape[1] != head.n_classes:
        raise StructuralError("head output does not match its class count")
    loss, dlogits = softmax_cross_entropy(logits, np.asarray(labels))
    grads, demb = head.backward(acts, {head.logits_layer: dlogits}, input_grad=input_grad)
    return loss, grads, demb, acts


def classification_loss(heads, embeddings_by_domain, labels_by_domain, input_grad=True):
    """Sum over domains of the summed cross-entropy of that domain's head.

    ``heads`` is indexable by domain; returns the total, per-domain losses,
    per-head gradients and per-domain embedding gradients.
    """
    n = len(embeddings_by_domain)
    if len(heads) < n or any(heads[i] is None for i in range(n)):
        raise ConfigurationError("every present domain needs its own classifier head")
    per_domain, head_grads, emb_grads = [], [], []
    for i in range(n):
        loss, g, de, _ = head_loss(heads[i], embeddings_by_domain[i], labels_by_domain[i],
                                   input_grad=input_grad)
        per_domain.append(loss)
        head_grads.append(g)
        emb_grads.append(de)
    return sum(per_domain), per_domain, head_grads, emb_grads


def dat_loss(speaker_head, domain_head, embeddings, speaker_labels, domain_labels, lam):
    """Domain-adversarial objective ``J_speaker - lam * J_domain``.

    The domain head starts with a reversal layer, so its own parameters get
    the gradient of ``J_domain`` (it minimises the domain loss) while the
    embedding gradient carries ``-lam * dJ_domain`` (the extractor maximises
    it). Returns ``(breakdown, speaker_grads, domain_grads, d_embeddings)``.
    """
    if lam < 0:
        raise PreconditionError("lambda must be >= 0")
    if domain_head.specs[0].kind != "grl":
        raise ConfigurationError("the domain head must begin with a gradient reversal layer")
    js, gs, de_s, _ = head_loss(speaker_head, embeddings, speaker_labels)
    acts = domain_head.forward(embeddings)
    jd, dlogits = softmax_cross_entropy(acts[domain_head.logits_layer], np.asarray(domain_labels))
    gd, de_d = domain_head.backward(acts, {domain_head.logits_layer: dlogits},
                                    grl_lambda=lam, input_grad=True)
    br = LossBreakdown("dat", weight=lam, speaker=js, domain=jd)
    br.composite = js - lam * jd
    return br, gs, gd, de_s + de_d


def check_probability_rows(p, tol=1e-6):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if np.any(p < -tol) or np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
        raise NormalizationError("rows must be probability vectors summing to 1")
    return p


def classifier_discrepancy(probs_i, probs_n, cfg=KernelConfig(), return_grad=False):
    """Squared MMD between two sets of classifier posterior rows."""
    a = check_probability_rows(probs_i)
    b = check_probability_rows(probs_n)
    return mmd_squared(a, b, cfg, return_grad=return_grad)


def softmax_backward(dprobs, probs):
    """Chain a gradient on softmax outputs back to the logits."""
    return probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))


def posteriors(head, embeddings):
    acts = head.forward(embeddings)
    return np.exp(log_softmax(acts[head.logits_layer])), acts
