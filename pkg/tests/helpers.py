"""Finite-difference utilities shared by the test modules."""
import numpy as np

from msda.nn.layers import LayerSpec
from msda.nn.network import ClassifierHead, EmbeddingNetwork

FD_EPS = 1e-6

# criterion number -> one-line verdict, printed at the end of the session
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def fd_grad(f, x, eps=FD_EPS, order=2):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place).

    ``order=4`` uses the five-point stencil, accurate to O(eps^4).
    """
    if order == 2:
        offsets, weights, denom = (1, -1), (1, -1), 2
    else:
        offsets, weights, denom = (-2, -1, 1, 2), (1, -8, 8, -1), 12
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        acc = 0.0
        for o, w in zip(offsets, weights):
            x[i] = old + o * eps
            acc += w * f()
        x[i] = old
        g[i] = acc / (denom * eps)
    return g


def rel_err(analytic, numeric):
    """Largest elementwise relative error.

    The denominator is floored at 1e-3 of the largest gradient entry so
    near-zero entries stay meaningful, and at 1e-5 so an all-zero gradient
    (e.g. a layer behind dead ReLUs) is not judged on round-off alone."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(1e-3 * scale, 1e-5))
    return float((np.abs(a - n) / denom).max())


def tiny_extractor(in_dim=3, seed=0, frame_dim=4, embed_dim=5, activation="relu"):
    specs = [
        LayerSpec("F1", "time_delay", frame_dim, context=3, dilation=1, activation=activation),
        LayerSpec("F2", "time_delay", frame_dim, context=3, dilation=2, activation=activation),
        LayerSpec("F5", "time_delay", frame_dim, context=1, dilation=1, activation=activation),
        LayerSpec("pool", "stats_pool"),
        LayerSpec("fc1", "dense", embed_dim, activation=activation),
    ]
    return EmbeddingNetwork(specs, in_dim, seed=seed)


def tiny_head(in_dim, n_classes, seed=0, hidden=4, grl=False):
    specs = [LayerSpec("grl", "grl")] if grl else []
    specs += [LayerSpec("h1", "dense", hidden), LayerSpec("logits", "dense", n_classes,
                                                          activation="none")]
    return ClassifierHead(specs, in_dim, seed=seed, head_kind="domain" if grl else "speaker")


def relu_margin(*nets_and_acts):
    """Smallest |pre-activation| over all ReLU layers of the given forward passes."""
    m = np.inf
    for net, acts in nets_and_acts:
        for spec in net.specs:
            if spec.has_params and spec.activation == "relu" and spec.name in acts.caches:
                m = min(m, float(np.abs(acts.caches[spec.name]["z"]).min()))
    return m


def all_param_arrays(net):
    for layer in net.trainable_layers:
        for key in ("W", "b"):
            yield layer, key, net.params[layer][key]


# -- gradient battery shared by the unit and acceptance suites ------------------

def layer_kind_error(kind, seed):
    """Max relative FD error for one layer kind (params and input)."""
    from msda.nn.network import Network

    rng = np.random.default_rng(seed)
    if kind in ("time_delay", "stats_pool"):
        specs = [LayerSpec("L", "time_delay", 3, context=3, dilation=2, activation="none"),
                 LayerSpec("pool", "stats_pool")]
        net = Network(specs, 2, seed=seed)
        x = rng.normal(size=(2, 11, 2))
        tap = "L" if kind == "time_delay" else "pool"
    else:
        specs = [LayerSpec("L", "dense", 3, activation="none")]
        if kind == "grl":
            specs = [LayerSpec("g", "grl")] + specs
        net = Network(specs, 4, seed=seed, frame_level_input=False)
        x = rng.normal(size=(3, 4))
        tap = "L"
    w = rng.normal(size=net.forward(x)[tap].shape)

    def loss():
        return float((net.forward(x)[tap] ** 2 * w).sum())

    acts = net.forward(x)
    grads, dx = net.backward(acts, {tap: 2 * acts[tap] * w}, grl_lambda=1.0, input_grad=True)
    errs = [rel_err(grads[layer][key], fd_grad(loss, arr))
            for layer, key, arr in all_param_arrays(net)]
    numeric_x = fd_grad(loss, x)
    errs.append(rel_err(dx, -numeric_x if kind == "grl" else numeric_x))
    return max(errs)


def softmax_ce_error(seed):
    from msda.nn.layers import softmax_cross_entropy

    z = np.random.default_rng(seed).normal(size=6) * 2
    _, g = softmax_cross_entropy(z, 2)
    return rel_err(g, fd_grad(lambda: softmax_cross_entropy(z, 2)[0], z))


def mmd_error(seed):
    from msda.losses import KernelConfig, mmd_squared

    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(7, 3)), rng.normal(size=(5, 3)) + 0.5
    cfg = KernelConfig(1.3)
    _, ga, gb = mmd_squared(a, b, cfg, return_grad=True)
    return max(rel_err(ga, fd_grad(lambda: mmd_squared(a, b, cfg), a)),
               rel_err(gb, fd_grad(lambda: mmd_squared(a, b, cfg), b)))


def pairwise_mmd_error(seed):
    from msda.losses import KernelConfig, pairwise_mmd_loss

    rng = np.random.default_rng(seed)
    f5 = [rng.normal(size=(6, 3)) + i for i in range(3)]
    emb = [rng.normal(size=(2, 4)) * (1 + i) for i in range(3)]
    cfg = KernelConfig(1.7)
    pw = pairwise_mmd_loss({"F5": f5, "fc1": emb}, cfg)
    errs = []
    for lv, mats in (("F5", f5), ("fc1", emb)):
        for i, m in enumerate(mats):
            num = fd_grad(lambda: pairwise_mmd_loss({"F5": f5, "fc1": emb}, cfg,
                                                    return_grad=False).value, m, 1e-5, 4)
            errs.append(rel_err(pw.grads[lv][i], num))
    return max(errs)


def objective_fixture(seed, n_domains=3, per_domain=2, n_classes=3, frames=16):
    """Tiny extractor, per-domain heads and a stacked batch with domain offsets."""
    rng = np.random.default_rng(seed)
    net = tiny_extractor(seed=seed)
    heads = [tiny_head(5, n_classes, seed=seed + 10 + i) for i in range(n_domains)]
    for n in [net] + heads:
        for layer in n.params:
            n.params[layer]["b"] = 0.1 * rng.normal(size=n.params[layer]["b"].shape)
    x = rng.normal(size=(n_domains * per_domain, frames, 3))
    x += np.repeat(np.arange(n_domains), per_domain)[:, None, None] * 0.3
    offsets = [(i * per_domain, (i + 1) * per_domain) for i in range(n_domains)]
    labels = [rng.integers(0, n_classes, size=per_domain) for _ in range(n_domains)]
    return net, heads, x, offsets, labels


def _param_errors(grads, net, loss):
    return [rel_err(grads[layer][key], fd_grad(loss, arr, eps=1e-5, order=4))
            for layer, key, arr in all_param_arrays(net)]


def dat_objective_error(seed):
    from msda.training.objectives import speaker_objective

    net, heads, x, offsets, labels = objective_fixture(seed)
    speaker = heads[0]
    domain = tiny_head(5, 3, seed=seed + 50, grl=True)
    y = np.concatenate(labels)
    d = np.repeat(np.arange(3), 2)
    lam = 0.6

    def value():
        return speaker_objective(net, x, 0, speaker, y, domain, d, lam)[0].composite

    _, grads = speaker_objective(net, x, 0, speaker, y, domain, d, lam)
    errs = _param_errors(grads["extractor"], net, value)
    errs += _param_errors(grads["speaker"], speaker, value)

    # the domain head minimises J_domain alone
    def domain_value():
        return speaker_objective(net, x, 0, speaker, y, domain, d, lam)[0].domain

    errs += [rel_err(grads["domain"][layer][key], fd_grad(domain_value, arr))
             for layer, key, arr in all_param_arrays(domain) if layer != "grl"]
    return max(errs)


def mmd_objective_error(seed, include_mmd=True):
    from msda.losses import KernelConfig
    from msda.training.objectives import mmd_objective

    net, heads, x, offsets, labels = objective_fixture(seed)
    cfg = KernelConfig(2.0)
    rows = [np.array([0, 3, 5, 11, 19]), np.arange(20), np.array([1, 2, 18])]

    def value():
        return mmd_objective(net, x, 0, offsets, heads, labels, 0.8, cfg, rows,
                             include_mmd)[0].composite

    _, grads = mmd_objective(net, x, 0, offsets, heads, labels, 0.8, cfg, rows, include_mmd)
    errs = _param_errors(grads["extractor"], net, value)
    for i, h in enumerate(heads):
        errs += _param_errors(grads[f"head{i}"], h, value)
    return max(errs)


def classifier_step_error(seed):
    from msda.losses import KernelConfig, classifier_discrepancy, posteriors
    from msda.nn.layers import softmax_cross_entropy
    from msda.training.objectives import classifier_step_objective

    net, heads, x, offsets, labels = objective_fixture(seed)
    cfg = KernelConfig(0.5)
    n = len(heads)
    emb = net.forward(x)["fc1"]
    embs = [emb[a:b] for a, b in offsets]

    def own_objective(i):
        probs = [posteriors(heads[k], embs[k])[0] for k in range(n)]
        logits = heads[i].forward(embs[i])["logits"]
        j = softmax_cross_entropy(logits, labels[i])[0]
        if i < n - 1:
            return j - classifier_discrepancy(probs[i], probs[-1], cfg)
        return j - sum(classifier_discrepancy(probs[k], probs[-1], cfg)
                       for k in range(n - 1)) / (n - 1)

    _, grads = classifier_step_objective(net, x, 0, offsets, heads, labels, cfg)
    errs = []
    for i, h in enumerate(heads):
        errs += _param_errors(grads[f"head{i}"], h, lambda i=i: own_objective(i))
    return max(errs)


def generator_error(seed):
    from msda.losses import KernelConfig
    from msda.training.objectives import generator_objective

    net, heads, x, offsets, _ = objective_fixture(seed)
    cfg = KernelConfig(0.5)

    def value():
        return generator_objective(net, x, 0, offsets, heads, cfg)[0].composite

    _, grads = generator_objective(net, x, 0, offsets, heads, cfg)
    return max(_param_errors(grads["extractor"], net, value))


GRADIENT_CHECKS = {
    "time_delay": lambda s: layer_kind_error("time_delay", s),
    "stats_pool": lambda s: layer_kind_error("stats_pool", s),
    "dense": lambda s: layer_kind_error("dense", s),
    "grl": lambda s: layer_kind_error("grl", s),
    "softmax_ce": softmax_ce_error,
    "mmd_squared": mmd_error,
    "pairwise_mmd": pairwise_mmd_error,
    "dat": dat_objective_error,
    "classification": lambda s: mmd_objective_error(s, include_mmd=False),
    "mmd_total": mmd_objective_error,
    "classifier_step": classifier_step_error,
    "generator_step": generator_error,
}
