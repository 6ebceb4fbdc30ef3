"""Pipeline stages over one output directory.

Every stage reads its inputs from files written by earlier stages and is
guarded by a stamp: a hash of its settings and input files. A stage whose
stamp matches and whose outputs are intact is skipped. A failing stage
removes everything it wrote before re-raising.
"""
import hashlib
import json
import os
import shutil
from pathlib import Path

import numpy as np

from ..backend import (EmbeddingSet, PldaBackend, load_backend, load_embeddings, save_backend,
                       save_embeddings)
from ..backend.snorm import CohortSet
from ..corpus import Corpus, generate_corpus, load_features, make_trials, pretraining_spec
from ..corpus import Protocol, save_features, write_manifest
from ..exceptions import DataError, MSDAError
from ..metrics import (compute_cllr, compute_det, compute_eer, fit_linear_calibration,
                       pav_cllr_min, read_scores, read_trials, write_det_csv, write_scores,
                       write_trials, zoo_stats)
from ..metrics.io import align_scores
from ..nn.checkpoint import load_bundle, save_bundle
from ..nn.network import build_domain_head, build_extractor, build_speaker_head
from ..training import (fine_tune, pretrain, train_dat, train_discrepancy_min,
                        train_moment_matching, truncate_head)
from .report import SCHEMA_VERSION, export_report, fmt

OUTPUT_ENV = "MSDA_OUTPUT_DIR"


class StageError(MSDAError):
    """A stage failed; ``cause`` keeps the original exception."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def output_root(cfg):
    return Path(os.environ.get(OUTPUT_ENV) or cfg.experiment.output_dir)


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(data, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# -- shared loaders -----------------------------------------------------------------

def load_corpus(root, name):
    meta = read_json(root / "data" / "corpus.json")
    utts, dim = load_features(root / "data" / f"{name}.fea")
    info = meta["pretrain"] if name == "pretrain" else meta["target"]
    return Corpus(utts, info["n_domains"], dim, tuple(info["domain_names"]))


def read_enrollments(path):
    enrollments, domain, speaker = {}, {}, {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{ln}: expected model<TAB>speaker<TAB>domain<TAB>utts")
            enrollments[parts[0]] = parts[3].split(",")
            speaker[parts[0]] = int(parts[1])
            domain[parts[0]] = int(parts[2])
    return enrollments, domain, speaker


def domain_names(root):
    return read_json(root / "data" / "corpus.json")["target"]["domain_names"]


def trial_domains(root):
    """Trials and the domain index of each one."""
    trials = read_trials(root / "data" / "trials.txt")
    _, model_domain, _ = read_enrollments(root / "data" / "enrollments.tsv")
    return trials, np.array([model_domain[e] for e in trials.enroll])


def embed_all(net, utterances):
    vecs = np.vstack([net.embed(u.frames) for u in utterances])
    return EmbeddingSet([u.utterance_id for u in utterances], [u.speaker_id for u in utterances],
                        [u.domain_id for u in utterances], vecs)


def loaded_backend(root, cfg):
    lda, plda, length_norm = load_backend(root / "models" / "backend.mpld")
    be = PldaBackend(cfg.backend.lda_dim, cfg.backend.plda_iters, length_norm,
                     cfg.backend.snorm_top_k or None)
    be.lda_, be.plda_ = lda, plda
    if be.snorm_top_k:
        train = load_embeddings(root / "embeddings" / "train.emb")
        Y = be.preprocess(train.vectors)
        means = np.stack([Y[train.speakers == s].mean(0) for s in np.unique(train.speakers)])
        be.cohort_ = CohortSet(means, be.snorm_top_k)
    return be


# -- stages -----------------------------------------------------------------------------

def gen_data(cfg, root):
    spec = cfg.corpus_spec()
    split = generate_corpus(spec)
    pre_spec = pretraining_spec(spec, cfg.pretrain.n_speakers, cfg.pretrain.utts_per_speaker)
    pre = generate_corpus(pre_spec).train
    data = root / "data"
    save_features(split.train.utterances, spec.feature_dim, data / "train.fea")
    save_features(split.eval.utterances, spec.feature_dim, data / "eval.fea")
    save_features(pre.utterances, spec.feature_dim, data / "pretrain.fea")
    write_manifest(split.train.utterances + split.eval.utterances, data / "manifest.tsv")
    prot = make_trials(split.eval, Protocol(n_enroll=cfg.corpus.n_enroll, seed=spec.seed))
    write_trials(prot.trials, data / "trials.txt")
    with open(data / "enrollments.tsv", "w") as fh:
        for mid in sorted(prot.enrollments):
            fh.write(f"{mid}\t{prot.model_speaker[mid]}\t{prot.model_domain[mid]}\t"
                     f"{','.join(prot.enrollments[mid])}\n")
    write_json({"target": {"n_domains": spec.n_domains,
                           "domain_names": list(split.train.domain_names),
                           "train_speakers": len(split.train.speakers),
                           "eval_speakers": len(split.eval.speakers)},
                "pretrain": {"n_domains": pre_spec.n_domains,
                             "domain_names": list(pre.domain_names),
                             "train_speakers": len(pre.speakers)}},
               data / "corpus.json")


def run_pretrain(cfg, root):
    corpus = load_corpus(root, "pretrain")
    seed = cfg.experiment.seed
    net = build_extractor(corpus.feature_dim, cfg.network.frame_dim, cfg.network.embed_dim,
                          seed=seed)
    head = build_speaker_head(cfg.network.embed_dim, len(corpus.speakers),
                              hidden=cfg.network.head_hidden, seed=seed + 1)
    report = pretrain(net, head, corpus, cfg.pretrain.optimizer(), cfg.pretrain.run(seed))
    save_bundle({"extractor": net, "speaker": head}, root / "models" / "pretrained.bin")
    report.save(root / "reports" / "pretrain_history.json", deterministic=True)


def run_adapt(cfg, root):
    nets = load_bundle(root / "models" / "pretrained.bin")
    net, head = nets["extractor"], nets["speaker"]
    method = cfg.experiment.method
    seed = cfg.experiment.seed
    if method == "baseline":
        save_bundle({"extractor": net}, root / "models" / "adapted.bin")
        write_json({"method": "baseline", "history": []}, root / "reports" / "adapt_history.json")
        return
    corpus = load_corpus(root, "train")
    n_spk = len(corpus.speakers)
    run, mcfg, opt = cfg.adapt_run(), cfg.trainer_method(), cfg.optimizer
    saved = {"extractor": net}
    if method == "finetune":
        new_head = truncate_head(head, n_spk, seed=seed)
        report = fine_tune(net, new_head, corpus, opt, run)
        saved["speaker"] = new_head
    elif method == "dat":
        new_head = truncate_head(head, n_spk, seed=seed)
        dom = build_domain_head(cfg.network.embed_dim, corpus.n_domains,
                                hidden=mcfg.domain_hidden, seed=seed + 7)
        report = train_dat(net, new_head, dom, corpus, opt, run, mcfg)
        saved.update(speaker=new_head, domain=dom)
    else:
        heads = [truncate_head(head, n_spk, seed=seed + i) for i in range(corpus.n_domains)]
        trainer = train_discrepancy_min if method == "mmd" else train_moment_matching
        report = trainer(net, heads, corpus, opt, run, mcfg)
        saved.update({f"head{i}": h for i, h in enumerate(heads)})
    save_bundle(saved, root / "models" / "adapted.bin")
    report.save(root / "reports" / "adapt_history.json", deterministic=True)


def run_extract(cfg, root):
    net = load_bundle(root / "models" / "adapted.bin")["extractor"]
    for name in ("train", "eval"):
        utts, _ = load_features(root / "data" / f"{name}.fea")
        save_embeddings(embed_all(net, utts), root / "embeddings" / f"{name}.emb")


def run_backend_train(cfg, root):
    train = load_embeddings(root / "embeddings" / "train.emb")
    be = PldaBackend(cfg.backend.lda_dim, cfg.backend.plda_iters, cfg.backend.length_norm)
    be.fit(train.vectors, train.speakers)
    save_backend(be.lda_, be.plda_, root / "models" / "backend.mpld", cfg.backend.length_norm)


def run_score(cfg, root):
    be = loaded_backend(root, cfg)
    ev = load_embeddings(root / "embeddings" / "eval.emb")
    index = ev.index()
    enrollments, _, _ = read_enrollments(root / "data" / "enrollments.tsv")
    trials = read_trials(root / "data" / "trials.txt")
    models = sorted(enrollments)
    tests = sorted(set(trials.test))
    try:
        enroll_sets = [ev.vectors[[index[u] for u in enrollments[m]]] for m in models]
        test_vecs = ev.vectors[[index[t] for t in tests]]
    except KeyError as exc:
        raise DataError(f"utterance {exc.args[0]} has no embedding") from None
    S = be.score(enroll_sets, test_vecs)
    mi = {m: i for i, m in enumerate(models)}
    ti = {t: i for i, t in enumerate(tests)}
    scores = [S[mi[e], ti[t]] for e, t in zip(trials.enroll, trials.test)]
    write_scores(trials.enroll, trials.test, scores, root / "scores" / "scores.txt")


def _domain_scores(root):
    trials, dom = trial_domains(root)
    scores = align_scores(trials, read_scores(root / "scores" / "scores.txt"))
    return trials, dom, scores


def run_evaluate(cfg, root):
    trials, dom, scores = _domain_scores(root)
    names = domain_names(root)
    _, _, model_speaker = read_enrollments(root / "data" / "enrollments.tsv")
    rows = {}
    zoo_lines = ["domain,speaker,mean_target,mean_nontarget,target_quartile,"
                 "nontarget_quartile,category"]
    for d, name in enumerate(names):
        m = dom == d
        if not m.any():
            continue
        s, y = scores[m], trials.target[m]
        det = compute_det(s, y).check()
        write_det_csv(det, root / "reports" / f"det_{name}.csv")
        rows[name] = {"eer": compute_eer(s, y), "cllr": compute_cllr(s, y),
                      "cllr_min": pav_cllr_min(s, y)[0],
                      "n_target": int(y.sum()), "n_nontarget": int((~y).sum())}
        spk = [model_speaker[e] for e, keep in zip(trials.enroll, m) if keep]
        for z in zoo_stats(spk, s, y):
            zoo_lines.append(f"{name},{z.speaker},{fmt(z.mean_target)},{fmt(z.mean_nontarget)},"
                             f"{z.target_quartile},{z.nontarget_quartile},{z.category}")
    write_json(rows, root / "reports" / "metrics_raw.json")
    with open(root / "reports" / "zoo.csv", "w") as fh:
        fh.write("\n".join(zoo_lines) + "\n")


def run_calibrate(cfg, root):
    trials, dom, scores = _domain_scores(root)
    names = domain_names(root)
    models = {}
    calibrated = np.zeros_like(scores)
    for d, name in enumerate(names):
        m = dom == d
        if not m.any():
            continue
        cal = fit_linear_calibration(scores[m], trials.target[m])
        models[name] = {"w0": cal.w0, "w1": cal.w1, "converged": cal.converged}
        calibrated[m] = cal.apply(scores[m])
    write_json(models, root / "models" / "calibration.json")
    write_scores(trials.enroll, trials.test, calibrated, root / "scores" / "calibrated.txt")


def run_report(cfg, root):
    trials, dom, scores = _domain_scores(root)
    cal = align_scores(trials, read_scores(root / "scores" / "calibrated.txt"))
    raw = read_json(root / "reports" / "metrics_raw.json")
    names = domain_names(root)
    domains = []
    for d, name in enumerate(names):
        if name not in raw:
            continue
        m = dom == d
        entry = {"domain": name, **raw[name]}
        entry["cllr_cal"] = compute_cllr(cal[m], trials.target[m])
        domains.append(entry)
    results = {"schema_version": SCHEMA_VERSION, "method": cfg.experiment.method,
               "seed": cfg.experiment.seed, "domains": domains}
    export_report(results, root / "reports")
    _probe_listing(root, trials, dom, scores, len(names) - 1)
    _embedding_csv(root)


def _probe_listing(root, trials, dom, scores, domain):
    """LLRs of one probe recording of ``domain`` against every enrolled speaker."""
    mask = dom == domain
    probe = sorted(set(np.asarray(trials.test)[mask]))[0]
    rows = sorted((e, s, y) for e, t, s, y in zip(trials.enroll, trials.test, scores,
                                                   trials.target) if t == probe)
    with open(root / "reports" / "probe_llrs.csv", "w") as fh:
        fh.write("probe,model,llr,target\n")
        for e, s, y in rows:
            fh.write(f"{probe},{e},{fmt(s)},{int(y)}\n")


def _embedding_csv(root):
    ev = load_embeddings(root / "embeddings" / "eval.emb")
    with open(root / "reports" / "eval_embeddings.csv", "w") as fh:
        fh.write("utterance,speaker,domain," + ",".join(f"e{i}" for i in range(ev.dim)) + "\n")
        for uid, spk, d, vec in zip(ev.ids, ev.speakers, ev.domains, ev.vectors):
            fh.write(f"{uid},{spk},{d}," + ",".join(fmt(v) for v in vec) + "\n")


def _report_outputs(cfg, root):
    return [f"reports/{n}" for n in ("summary.json", "summary.csv", "probe_llrs.csv",
                                     "eval_embeddings.csv")]


def _evaluate_outputs(cfg, root):
    names = _names_or_default(cfg, root)
    return (["reports/metrics_raw.json", "reports/zoo.csv"]
            + [f"reports/det_{n}.csv" for n in names])


def _names_or_default(cfg, root):
    try:
        return domain_names(root)
    except OSError:
        return []


DATA_FILES = ["data/train.fea", "data/eval.fea", "data/pretrain.fea", "data/manifest.tsv",
              "data/trials.txt", "data/enrollments.tsv", "data/corpus.json"]

# name -> (function, setting sections, inputs, outputs)
STAGES = {
    "gen-data": (gen_data, ("experiment.seed", "corpus", "pretrain.n_speakers",
                            "pretrain.utts_per_speaker"), [], DATA_FILES),
    "pretrain": (run_pretrain, ("experiment.seed", "network", "pretrain"),
                 ["data/pretrain.fea", "data/corpus.json"],
                 ["models/pretrained.bin", "reports/pretrain_history.json"]),
    "adapt": (run_adapt, ("experiment.method", "experiment.seed", "network", "optimizer", "run", "method"),
              ["models/pretrained.bin", "data/train.fea", "data/corpus.json"],
              ["models/adapted.bin", "reports/adapt_history.json"]),
    "extract": (run_extract, (), ["models/adapted.bin", "data/train.fea", "data/eval.fea"],
                ["embeddings/train.emb", "embeddings/eval.emb"]),
    "backend-train": (run_backend_train, ("backend",), ["embeddings/train.emb"],
                      ["models/backend.mpld"]),
    "score": (run_score, ("backend",),
              ["models/backend.mpld", "embeddings/train.emb", "embeddings/eval.emb",
               "data/trials.txt", "data/enrollments.tsv"], ["scores/scores.txt"]),
    "evaluate": (run_evaluate, (), ["scores/scores.txt", "data/trials.txt",
                                    "data/enrollments.tsv", "data/corpus.json"],
                 _evaluate_outputs),
    "calibrate": (run_calibrate, (), ["scores/scores.txt", "data/trials.txt",
                                      "data/enrollments.tsv", "data/corpus.json"],
                  ["models/calibration.json", "scores/calibrated.txt"]),
    "report": (run_report, ("experiment.method", "experiment.seed"),
               ["scores/scores.txt", "scores/calibrated.txt", "reports/metrics_raw.json",
                "data/trials.txt", "data/enrollments.tsv", "embeddings/eval.emb"],
               _report_outputs),
}
ORDER = list(STAGES)


def _settings(cfg, keys):
    out = {}
    data = cfg.to_dict()
    for key in keys:
        section, _, name = key.partition(".")
        out[key] = data[section][name] if name else data[section]
    return out


def _outputs(outputs, cfg, root):
    return outputs(cfg, root) if callable(outputs) else outputs


def stage_key(name, cfg, root):
    _, keys, inputs, _ = STAGES[name]
    h = hashlib.sha256(name.encode())
    h.update(json.dumps(_settings(cfg, keys), sort_keys=True, default=str).encode())
    for rel in inputs:
        path = root / rel
        if not path.exists():
            raise DataError(f"stage {name!r} needs {rel}; run the earlier stages first")
        h.update(rel.encode() + file_hash(path).encode())
    return h.hexdigest()


def _stamp_path(root, name):
    return root / "stamps" / f"{name}.json"


def is_current(name, cfg, root):
    stamp = _stamp_path(root, name)
    if not stamp.exists():
        return False
    data = read_json(stamp)
    if data.get("key") != stage_key(name, cfg, root):
        return False
    return all((root / rel).exists() and file_hash(root / rel) == digest
               for rel, digest in data.get("outputs", {}).items())


def run_stage(name, cfg, force=False):
    """Run one stage unless its stamp is current; returns ``"ran"`` or ``"skipped"``."""
    if name not in STAGES:
        raise KeyError(name)
    root = output_root(cfg)
    func, _, _, outputs = STAGES[name]
    try:
        if not force and is_current(name, cfg, root):
            return "skipped"
        key = stage_key(name, cfg, root)
        for sub in ("data", "models", "reports", "embeddings", "scores", "stamps"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        func(cfg, root)
        written = _outputs(outputs, cfg, root)
        write_json({"stage": name, "key": key,
                    "outputs": {rel: file_hash(root / rel) for rel in written}},
                   _stamp_path(root, name))
    except Exception as exc:
        _cleanup(name, cfg, root)
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    return "ran"


def _cleanup(name, cfg, root):
    _, _, _, outputs = STAGES[name]
    try:
        written = _outputs(outputs, cfg, root)
    except Exception:
        written = []
    for rel in list(written) + [f"stamps/{name}.json"]:
        path = root / rel
        if path.is_file():
            path.unlink()
    if name == "evaluate":
        for p in (root / "reports").glob("det_*.csv"):
            p.unlink()


def run_experiment(cfg, stages=None, force=False):
    """Run ``stages`` (default: all) in pipeline order; returns ``{stage: status}``."""
    stages = ORDER if stages is None else stages
    return {name: run_stage(name, cfg, force) for name in stages}


def clean(cfg):
    root = output_root(cfg)
    if root.exists():
        shutil.rmtree(root)
