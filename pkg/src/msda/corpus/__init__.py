"""Synthetic multi-domain speaker corpus and trial protocol."""
from .generator import (DOMAIN_NAMES, Corpus, CorpusSpec, DomainParams, SpeakerModel, SplitCorpus,
                        clean_frames, default_domain_params, domain_transform, generate_corpus,
                        identity_domains, pretraining_spec, speaker_model)
from .io import load_features, read_manifest, save_features, write_manifest
from .protocol import Protocol, TrialProtocol, make_trials, model_id

__all__ = [
    "Corpus", "CorpusSpec", "DOMAIN_NAMES", "DomainParams", "Protocol", "SpeakerModel",
    "SplitCorpus", "TrialProtocol", "clean_frames", "default_domain_params", "domain_transform",
    "generate_corpus", "identity_domains", "load_features", "make_trials", "model_id",
    "pretraining_spec", "read_manifest", "save_features", "speaker_model", "write_manifest",
]
