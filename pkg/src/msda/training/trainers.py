"""Pretraining, fine-tuning, DAT, discrepancy minimisation and moment matching."""
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ConfigurationError, NumericError, PreconditionError
from ..losses import KernelConfig, LossBreakdown, mu_schedule
from ..nn.checkpoint import save_bundle
from ..nn.network import ClassifierHead
from .config import MethodConfig, TrainRunConfig
from .objectives import (classifier_step_objective, frame_rows, generator_objective,
                         mmd_objective, speaker_objective)
from .optim import Adam, OptimizerConfig, learning_rates
from .sampling import sample_minibatch

MAX_CACHE_BYTES = 1_500_000_000


@dataclass
class TrainReport:
    """Per-epoch loss history and run metadata of one training procedure."""

    method: str
    seed: int
    history: list = field(default_factory=list)
    wall_seconds: float = 0.0
    checkpoint: str = None
    steps: int = 0
    final_p: float = 0.0
    counters: dict = field(default_factory=dict)

    @property
    def epochs(self):
        return len(self.history)

    def losses(self, key="composite"):
        return [h["breakdown"][key] for h in self.history]

    def to_dict(self):
        return asdict(self)

    def to_json(self, deterministic=False):
        data = self.to_dict()
        if deterministic:
            data["wall_seconds"] = 0.0
        return json.dumps(data, indent=2, sort_keys=True)

    def save(self, path, deterministic=False):
        with open(path, "w") as fh:
            fh.write(self.to_json(deterministic) + "\n")


def average_breakdowns(items):
    """Mean of every part; the composite is re-derived from the averaged parts."""
    first = items[0]
    n = len(items)
    avg = LossBreakdown(first.kind)
    for name in ("weight", "speaker", "domain", "mmd", "discrepancy"):
        setattr(avg, name, sum(getattr(b, name) for b in items) / n)
    avg.cls_per_domain = [sum(vals) / n for vals in zip(*(b.cls_per_domain for b in items))]
    avg.mmd_terms = {k: sum(b.mmd_terms[k] for b in items) / n for k in first.mmd_terms}
    avg.composite = avg.recompute()
    return avg


def _epoch_entry(epoch, phase, items, lr, p, extra=None):
    avg = average_breakdowns(items)
    entry = {"epoch": epoch, "phase": phase, "breakdown": avg.to_dict(),
             "objective": sum(b.composite for b in items) / len(items), "lr": lr, "p": p,
             "steps": len(items)}
    if extra:
        entry.update(extra)
    return entry


class SegmentEncoder:
    """Feeds batches to the extractor, reusing outputs of its frozen prefix.

    Layers before the first trainable one (and before any frame-level tap)
    are run once per utterance; training steps slice those outputs.
    Caching is skipped when the estimate exceeds ``max_bytes``.
    """

    def __init__(self, net, corpus, need_frame_layer=False, cache=True, max_bytes=MAX_CACHE_BYTES):
        self.net = net
        start = net.first_trainable_index()
        pool = [s.kind for s in net.specs].index("stats_pool")
        start = min(start, pool)
        if need_frame_layer:
            start = min(start, net.index(net.frame_layer))
        self.start = 0
        self.cache = None
        if cache and start > 0:
            span = net.frame_span_before(start)
            dim = net.dims[start][0]
            size = sum(max(u.n_frames - span, 0) for u in corpus.utterances) * dim * 8
            if size <= max_bytes:
                last = net.specs[start - 1].name
                self.cache = [net.forward(u.frames, stop=start)[last][0] for u in corpus.utterances]
                self.start = start
        self.span = net.frame_span_before(self.start)

    def inputs(self, batch):
        if self.cache is None:
            return batch.stacked()
        length = batch.segment_len - self.span
        rows = [self.cache[i][s:s + length]
                for utts, starts in zip(batch.utterances, batch.starts)
                for i, s in zip(utts, starts)]
        return np.stack(rows)


def _fingerprint(net, layers):
    h = hashlib.sha256()
    for name in layers:
        for key in ("W", "b"):
            h.update(np.ascontiguousarray(net.params[name][key]).tobytes())
    return h.hexdigest()


class _FrozenGuard:
    """Hashes parameters that must not move and re-checks them on demand."""

    def __init__(self, nets, enabled=True):
        self.enabled = enabled
        self.refs = {}
        if enabled:
            for key, net in nets.items():
                frozen = [s.name for s in net.specs if s.has_params and not s.trainable]
                self.refs[key] = (net, frozen, _fingerprint(net, frozen))

    def check(self):
        for key, (net, frozen, digest) in self.refs.items():
            if _fingerprint(net, frozen) != digest:
                raise RuntimeError(f"frozen parameters of {key!r} changed during training")


def _check_corpus(corpus, min_domains=1):
    if corpus is None or len(corpus) == 0:
        raise PreconditionError("training corpus is empty")
    present = sum(1 for ix in corpus.domain_indices() if ix)
    if present < min_domains:
        raise PreconditionError(f"this procedure needs N >= {min_domains} domains, got {present}")


def _check_head(head, corpus):
    if head.n_classes != len(corpus.speakers):
        raise PreconditionError(
            f"speaker head has {head.n_classes} classes but the corpus has "
            f"{len(corpus.speakers)} speakers")


def _steps_per_epoch(corpus, run):
    return run.steps_per_epoch or math.ceil(len(corpus) / run.batch_size)


def _segment_len(run, rng):
    if run.segment_len_max is None:
        return run.segment_len
    return int(rng.integers(run.segment_len, run.segment_len_max + 1))


def _finite(br, step):
    if not np.isfinite(br.composite):
        raise NumericError(f"non-finite loss at step {step}")


def _save(path, nets):
    if path:
        save_bundle(nets, path)
    return str(path) if path else None


def _labels(batch):
    return np.concatenate(batch.speakers)


def _kernel(method):
    return KernelConfig(method.bandwidth)


def _weight(method, p):
    if method.fixed_weight is not None:
        return float(method.fixed_weight)
    return mu_schedule(p, method.theta)


# -- classification-style loops ---------------------------------------------------

def _speaker_loop(net, speaker_head, corpus, opt, run, method_name, domain_head=None,
                  method=None, checkpoint_path=None, observer=None):
    method = method or MethodConfig(name=method_name)
    t0 = time.perf_counter()
    rng = np.random.default_rng(run.seed)
    adam = Adam(opt)
    encoder = SegmentEncoder(net, corpus, cache=run.cache_prefix)
    guard = _FrozenGuard({"extractor": net, "speaker": speaker_head}, run.verify_frozen)
    spe = _steps_per_epoch(corpus, run)
    total = run.epochs * spe
    report = TrainReport(method_name, run.seed)
    step = 0
    p = lr = 0.0
    for epoch in range(run.epochs):
        items = []
        for _ in range(spe):
            step += 1
            p = step / total
            batch = sample_minibatch(corpus, run.batch_size, _segment_len(run, rng), rng)
            x = encoder.inputs(batch)
            labels = _labels(batch)
            if domain_head is None:
                br, grads = speaker_objective(net, x, encoder.start, speaker_head, labels)
            else:
                lam = _weight(method, p)
                br, grads = speaker_objective(net, x, encoder.start, speaker_head, labels,
                                              domain_head, np.concatenate(batch.domains), lam)
            _finite(br, step)
            lr, lr_head = learning_rates(opt, p, step)
            if net.trainable_layers:
                adam.step("extractor", net, grads["extractor"], lr)
            adam.step("speaker", speaker_head, grads["speaker"], lr_head)
            if domain_head is not None:
                adam.step("domain", domain_head, grads["domain"], lr_head)
            if observer:
                observer("step", step, {"extractor": net, "speaker": speaker_head})
            items.append(br)
        guard.check()
        report.history.append(_epoch_entry(epoch, "train", items, lr, p))
    report.steps = step
    report.final_p = p
    nets = {"extractor": net, "speaker": speaker_head}
    if domain_head is not None:
        nets["domain"] = domain_head
    report.checkpoint = _save(checkpoint_path, nets)
    report.wall_seconds = time.perf_counter() - t0
    return report


def pretrain(net, head, corpus, opt=None, run=None, checkpoint_path=None, observer=None):
    """Train every extractor layer and ``head`` by speaker cross-entropy."""
    _check_corpus(corpus)
    _check_head(head, corpus)
    opt = opt or OptimizerConfig.pretraining()
    run = run or TrainRunConfig(segment_len=200, segment_len_max=400)
    net.set_trainable([s.name for s in net.specs if s.has_params])
    head.set_trainable([s.name for s in head.specs if s.has_params])
    return _speaker_loop(net, head, corpus, opt, run, "pretrain",
                         checkpoint_path=checkpoint_path, observer=observer)


def truncate_head(head, n_classes, seed=0):
    """Copy ``head`` with its output layer replaced for ``n_classes`` classes."""
    specs = [dict(vars(s)) for s in head.specs]
    specs[-1]["out_dim"] = n_classes
    new = ClassifierHead(specs, head.in_dim, seed=seed, head_kind=head.head_kind)
    for s in head.specs[:-1]:
        if s.has_params:
            new.params[s.name] = {k: v.copy() for k, v in head.params[s.name].items()}
    return new


def apply_layer_selection(net, head, selection):
    """Unfreeze ``selection`` across extractor and head; the output layer always trains."""
    selection = set(selection)
    net_layers = {s.name for s in net.specs if s.has_params}
    head_layers = {s.name for s in head.specs if s.has_params}
    unknown = selection - net_layers - (head_layers - {head.logits_layer})
    if unknown:
        raise ConfigurationError(f"unknown layer(s) in layer_selection: {sorted(unknown)}")
    net.set_trainable(selection & net_layers)
    head.set_trainable((selection & head_layers) | {head.logits_layer})


def fine_tune(net, new_head, corpus, opt=None, run=None, checkpoint_path=None, observer=None):
    """Update only ``run.layer_selection`` plus the (new) output layer of ``new_head``."""
    _check_corpus(corpus)
    _check_head(new_head, corpus)
    opt = opt or OptimizerConfig()
    run = run or TrainRunConfig()
    apply_layer_selection(net, new_head, run.layer_selection)
    return _speaker_loop(net, new_head, corpus, opt, run, "finetune",
                         checkpoint_path=checkpoint_path, observer=observer)


def train_dat(net, speaker_head, domain_head, corpus, opt=None, run=None, method=None,
              checkpoint_path=None, observer=None):
    """Domain-adversarial training: minimise ``J_s - lambda(p) * J_d`` via the reversal layer.

    The speaker head follows ``run.layer_selection`` like :func:`fine_tune`;
    the domain head trains fully.
    """
    _check_corpus(corpus, min_domains=2)
    _check_head(speaker_head, corpus)
    if domain_head.specs[0].kind != "grl":
        raise ConfigurationError("the domain head must begin with a gradient reversal layer")
    if domain_head.n_classes != corpus.n_domains:
        raise PreconditionError("domain head output size differs from the number of domains")
    opt = opt or OptimizerConfig()
    run = run or TrainRunConfig()
    method = method or MethodConfig(name="dat")
    apply_layer_selection(net, speaker_head, run.layer_selection)
    domain_head.set_trainable([s.name for s in domain_head.specs if s.has_params])
    return _speaker_loop(net, speaker_head, corpus, opt, run, "dat", domain_head=domain_head,
                         method=method, checkpoint_path=checkpoint_path, observer=observer)


# -- multi-head loops ---------------------------------------------------------------

def _check_domain_heads(heads, corpus):
    if len(heads) != corpus.n_domains:
        raise PreconditionError("one classifier subnet per domain is required")
    for h in heads:
        _check_head(h, corpus)
        h.set_trainable([s.name for s in h.specs if s.has_params])


class _MultiHeadState:
    def __init__(self, net, heads, corpus, opt, run, method, need_frames):
        if run.batch_size < corpus.n_domains:
            raise ConfigurationError("batch_size must be >= the number of domains")
        net.set_trainable(run.layer_selection)
        self.net, self.heads, self.corpus = net, heads, corpus
        self.opt, self.run, self.method = opt, run, method
        self.rng = np.random.default_rng(run.seed)
        self.frame_rng = np.random.default_rng([run.seed, 1])
        self.adam = Adam(opt)
        self.encoder = SegmentEncoder(net, corpus, need_frame_layer=need_frames,
                                      cache=run.cache_prefix)
        self.cfg = _kernel(method)
        self.spe = _steps_per_epoch(corpus, run)
        self.step = 0

    def nets(self):
        out = {"extractor": self.net}
        out.update({f"head{i}": h for i, h in enumerate(self.heads)})
        return out

    def batch(self):
        batch = sample_minibatch(self.corpus, self.run.batch_size,
                                 _segment_len(self.run, self.rng), self.rng)
        return batch, self.encoder.inputs(batch), batch.offsets()

    def update_heads(self, grads, lr):
        for i, h in enumerate(self.heads):
            self.adam.step(f"head{i}", h, grads[f"head{i}"], lr)

    def mmd_step(self, p, include_mmd=True):
        batch, x, offsets = self.batch()
        rows = None
        if include_mmd:
            t_frames = batch.segment_len - self.net.receptive_field + 1
            rows = [frame_rows(self.frame_rng, (b - a) * t_frames, self.method.mmd_max_frames)
                    for a, b in offsets]
        weight = self.method.mmd_weight * _weight(self.method, p)
        br, grads = mmd_objective(self.net, x, self.encoder.start, offsets, self.heads,
                                  batch.speakers, weight, self.cfg, rows, include_mmd)
        _finite(br, self.step)
        lr, lr_head = learning_rates(self.opt, p, self.step)
        if self.net.trainable_layers:
            self.adam.step("extractor", self.net, grads["extractor"], lr)
        self.update_heads(grads, lr_head)
        return br, lr


def _multihead_loop(net, heads, corpus, opt, run, method, name, include_mmd, checkpoint_path,
                    observer):
    _check_corpus(corpus, min_domains=2)
    _check_domain_heads(heads, corpus)
    t0 = time.perf_counter()
    st = _MultiHeadState(net, heads, corpus, opt, run, method, need_frames=include_mmd)
    guard = _FrozenGuard({"extractor": net}, run.verify_frozen)
    total = run.epochs * st.spe
    report = TrainReport(name, run.seed)
    p = lr = 0.0
    for epoch in range(run.epochs):
        items = []
        for _ in range(st.spe):
            st.step += 1
            p = st.step / total
            br, lr = st.mmd_step(p, include_mmd)
            if observer:
                observer("step1", st.step, st.nets())
            items.append(br)
        guard.check()
        report.history.append(_epoch_entry(epoch, "step1", items, lr, p))
    report.steps, report.final_p = st.step, p
    report.checkpoint = _save(checkpoint_path, st.nets())
    report.wall_seconds = time.perf_counter() - t0
    return report


def train_multihead(net, heads, corpus, opt=None, run=None, checkpoint_path=None, observer=None):
    """Per-domain classification heads without any alignment term."""
    return _multihead_loop(net, heads, corpus, opt or OptimizerConfig(), run or TrainRunConfig(),
                           MethodConfig(name="mmd"), "multihead", False, checkpoint_path, observer)


def train_discrepancy_min(net, domain_heads, corpus, opt=None, run=None, method=None,
                          checkpoint_path=None, observer=None):
    """Minimise ``mu(p) * MMD(F5, fc1) + sum_i J_i`` with one classifier subnet per domain."""
    method = method or MethodConfig(name="mmd")
    return _multihead_loop(net, domain_heads, corpus, opt or OptimizerConfig(),
                           run or TrainRunConfig(), method, "mmd", True, checkpoint_path, observer)


def train_moment_matching(net, domain_heads, corpus, opt=None, run=None, method=None,
                          checkpoint_path=None, observer=None):
    """Three-step moment-matching schema; the last domain is the noisy target.

    ``run.epochs`` (T1) epochs of the joint MMD + classification update are
    followed by ``run.epochs2`` (T2) epochs where each step makes one
    classifier update maximising the posterior discrepancy against the last
    domain's classifier, then ``run.inner_generator_steps`` extractor
    updates minimising it on the same batch. Progress ``p`` runs across
    T1 + T2 outer steps.
    """
    _check_corpus(corpus, min_domains=2)
    _check_domain_heads(domain_heads, corpus)
    opt = opt or OptimizerConfig()
    run = run or TrainRunConfig(epochs2=10)
    method = method or MethodConfig(name="moment_matching")
    t0 = time.perf_counter()
    st = _MultiHeadState(net, domain_heads, corpus, opt, run, method, need_frames=True)
    guard = _FrozenGuard({"extractor": net}, run.verify_frozen)
    total = (run.epochs + run.epochs2) * st.spe
    report = TrainReport("moment_matching", run.seed,
                         counters={"step1_updates": 0, "classifier_updates": 0,
                                   "generator_updates": 0})
    p = lr = 0.0
    for epoch in range(run.epochs):
        items = []
        for _ in range(st.spe):
            st.step += 1
            p = st.step / total
            br, lr = st.mmd_step(p)
            report.counters["step1_updates"] += 1
            if observer:
                observer("step1", st.step, st.nets())
            items.append(br)
        guard.check()
        report.history.append(_epoch_entry(epoch, "step1", items, lr, p))
    for epoch in range(run.epochs2):
        cls_items, gen_items = [], []
        for _ in range(st.spe):
            st.step += 1
            p = st.step / total
            lr, lr_head = learning_rates(opt, p, st.step)
            batch, x, offsets = st.batch()
            br, grads = classifier_step_objective(net, x, st.encoder.start, offsets, domain_heads,
                                                  batch.speakers, st.cfg)
            _finite(br, st.step)
            st.update_heads(grads, lr_head)
            report.counters["classifier_updates"] += 1
            cls_items.append(br)
            if observer:
                observer("step2", st.step, st.nets())
            inner = 0
            for _ in range(run.inner_generator_steps):
                gbr, ggrads = generator_objective(net, x, st.encoder.start, offsets, domain_heads,
                                                  st.cfg)
                _finite(gbr, st.step)
                if net.trainable_layers:
                    st.adam.step("extractor", net, ggrads["extractor"], lr)
                inner += 1
                gen_items.append(gbr)
                if observer:
                    observer("step3", st.step, st.nets())
            if inner != run.inner_generator_steps:
                raise RuntimeError("generator inner loop ran an unexpected number of updates")
            report.counters["generator_updates"] += inner
        guard.check()
        gen_avg = average_breakdowns(gen_items)
        report.history.append(_epoch_entry(run.epochs + epoch, "step2-3", cls_items, lr, p,
                                           {"generator": gen_avg.to_dict()}))
    report.steps, report.final_p = st.step, p
    report.checkpoint = _save(checkpoint_path, st.nets())
    report.wall_seconds = time.perf_counter() - t0
    return report
