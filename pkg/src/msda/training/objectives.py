"""Single-step objectives with gradients for every player.

Each function takes the extractor, its input ``x`` at layer index
``start`` (raw frames when ``start == 0``), the row ranges of each domain
inside the stacked batch and the heads involved. It returns a
:class:`~msda.losses.LossBreakdown` and a dict of parameter gradients keyed
``"extractor"``, ``"speaker"``, ``"domain"`` or ``"head<i>"``.
"""
import numpy as np

from ..exceptions import PreconditionError
from ..losses import (KernelConfig, LossBreakdown, classification_loss, classifier_discrepancy,
                      dat_loss, head_loss, pairwise_mmd_loss, posteriors, softmax_backward)
from ..nn.layers import softmax_cross_entropy


def _embed(net, x, start):
    acts = net.forward(x, start=start, stop=net.index(net.embedding_layer) + 1)
    return acts, acts[net.embedding_layer]


def _split(arr, offsets):
    return [arr[a:b] for a, b in offsets]


def speaker_objective(net, x, start, speaker_head, labels, domain_head=None, domain_labels=None,
                      lam=0.0):
    """Summed speaker cross-entropy, optionally with the reversed domain loss.

    Without ``domain_head`` this is the pretraining/fine-tuning loss.
    """
    acts, emb = _embed(net, x, start)
    grads = {}
    if domain_head is None:
        loss, gh, demb, _ = head_loss(speaker_head, emb, labels)
        br = LossBreakdown("cls", cls_per_domain=[loss])
        br.composite = loss
    else:
        br, gh, gd, demb = dat_loss(speaker_head, domain_head, emb, labels, domain_labels, lam)
        grads["domain"] = gd
    grads["speaker"] = gh
    grads["extractor"] = net.backward(acts, {net.embedding_layer: demb})[0]
    return br, grads


def frame_rows(rng, n_rows, max_rows):
    """Sorted random subset of at most ``max_rows`` frame rows."""
    if n_rows <= max_rows:
        return np.arange(n_rows)
    return np.sort(rng.choice(n_rows, size=max_rows, replace=False))


def mmd_objective(net, x, start, offsets, heads, labels, weight, cfg=KernelConfig(),
                  rows=None, include_mmd=True):
    """``weight * pairwise MMD(F5, fc1) + sum_i J_i`` with one head per domain.

    ``rows[i]`` selects the frame-level rows (flattened over segments and
    frames) of domain ``i`` entering the frame-level MMD; ``None`` uses all.
    With ``include_mmd=False`` only the multi-head classification loss is
    evaluated.
    """
    frame_layer = net.frame_layer
    acts, emb = _embed(net, x, start)
    embs = _split(emb, offsets)
    total, per_domain, head_grads, emb_grads = classification_loss(heads, embs, labels)
    d_emb = np.concatenate(emb_grads, axis=0)
    grads = {f"head{i}": g for i, g in enumerate(head_grads)}
    upstream = {net.embedding_layer: d_emb}
    if include_mmd:
        if any(b - a < 1 for a, b in offsets):
            raise PreconditionError("every domain needs at least one segment for the MMD term")
        frames = acts[frame_layer]
        dim = frames.shape[-1]
        flat = _split(frames, offsets)
        flat = [f.reshape(-1, dim) for f in flat]
        rows = rows or [np.arange(f.shape[0]) for f in flat]
        f5 = [f[r] for f, r in zip(flat, rows)]
        pw = pairwise_mmd_loss({frame_layer: f5, net.embedding_layer: embs}, cfg)
        upstream[net.embedding_layer] = d_emb + weight * np.concatenate(
            pw.grads[net.embedding_layer], axis=0)
        d_frames = np.zeros_like(frames)
        for (a, b), r, g in zip(offsets, rows, pw.grads[frame_layer]):
            block = np.zeros(((b - a) * frames.shape[1], dim))
            np.add.at(block, r, weight * g)
            d_frames[a:b] = block.reshape(b - a, frames.shape[1], dim)
        upstream[frame_layer] = d_frames
        br = LossBreakdown("mmd", weight=weight, cls_per_domain=per_domain, mmd=pw.value,
                           mmd_terms=pw.terms)
    else:
        br = LossBreakdown("cls", cls_per_domain=per_domain)
    br.composite = br.recompute()
    grads["extractor"] = net.backward(acts, upstream)[0]
    return br, grads


def _posterior_pairs(heads, embs, cfg):
    """Posteriors per domain plus discrepancy terms against the last domain."""
    n = len(embs)
    probs, head_acts = zip(*(posteriors(heads[i], embs[i]) for i in range(n)))
    terms, g_i, g_last = {}, [], []
    for i in range(n - 1):
        v, gi, gn = classifier_discrepancy(probs[i], probs[-1], cfg, return_grad=True)
        terms[("posterior", i, n - 1)] = v
        g_i.append(gi)
        g_last.append(gn)
    return list(probs), list(head_acts), terms, g_i, g_last


def classifier_step_objective(net, x, start, offsets, heads, labels, cfg=KernelConfig()):
    """Classifier update of the moment-matching schema (extractor fixed).

    Head ``i < N`` minimises ``J_i - D(C_i(X_i), C_N(X_N))`` and head ``N``
    minimises ``J_N - mean_j D(C_j(X_j), C_N(X_N))``; the breakdown's
    composite is the sum of the per-head objectives.
    """
    n = len(offsets)
    if n < 2:
        raise PreconditionError("the moment-matching schema needs N >= 2 domains")
    _, emb = _embed(net, x, start)
    embs = _split(emb, offsets)
    probs, head_acts, terms, g_i, g_last = _posterior_pairs(heads, embs, cfg)
    grads, per_domain = {}, []
    for i in range(n):
        logits = head_acts[i][heads[i].logits_layer]
        j, dlogits = softmax_cross_entropy(logits, np.asarray(labels[i]))
        per_domain.append(j)
        if i < n - 1:
            dprobs = -g_i[i]
        else:
            dprobs = -sum(g_last) / (n - 1)
        dlogits = dlogits + softmax_backward(dprobs, probs[i])
        grads[f"head{i}"] = heads[i].backward(head_acts[i], {heads[i].logits_layer: dlogits})[0]
    total_d = sum(terms.values())
    br = LossBreakdown("discrepancy", cls_per_domain=per_domain,
                       discrepancy=total_d + total_d / (n - 1), mmd_terms=terms)
    br.composite = br.recompute()
    return br, grads


def generator_objective(net, x, start, offsets, heads, cfg=KernelConfig()):
    """Generator update: ``sum_{i<N} D(C_i(G(X_i)), C_N(G(X_N)))`` with heads fixed."""
    n = len(offsets)
    if n < 2:
        raise PreconditionError("the moment-matching schema needs N >= 2 domains")
    acts, emb = _embed(net, x, start)
    embs = _split(emb, offsets)
    probs, head_acts, terms, g_i, g_last = _posterior_pairs(heads, embs, cfg)
    d_embs = []
    for i in range(n):
        dprobs = g_i[i] if i < n - 1 else sum(g_last)
        dlogits = softmax_backward(dprobs, probs[i])
        d_embs.append(heads[i].backward(head_acts[i], {heads[i].logits_layer: dlogits},
                                        input_grad=True)[1])
    br = LossBreakdown("generator", discrepancy=sum(terms.values()), mmd_terms=terms)
    br.composite = br.recompute()
    upstream = {net.embedding_layer: np.concatenate(d_embs, axis=0)}
    return br, {"extractor": net.backward(acts, upstream)[0]}
