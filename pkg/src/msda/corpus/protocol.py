"""Open-set enrollment/test trial construction."""
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ProtocolError
from ..metrics.io import TrialList


@dataclass
class Protocol:
    n_enroll: int = 6
    seed: int = 0
    domains: tuple = None


@dataclass
class TrialProtocol:
    """Trials plus the enrollment utterances behind every model id."""

    trials: TrialList
    enrollments: dict = field(default_factory=dict)
    model_domain: dict = field(default_factory=dict)
    model_speaker: dict = field(default_factory=dict)

    def domain_mask(self, domain):
        return np.array([self.model_domain[e] == domain for e in self.trials.enroll])


def model_id(speaker, domain):
    return f"spk{speaker:04d}-d{domain}"


def make_trials(eval_split, protocol=None):
    """Per domain: ``n_enroll`` seeded-order enrollment utterances per speaker, the
    rest are tests; every model is crossed with every test of its domain."""
    protocol = protocol or Protocol()
    domains = protocol.domains
    if domains is None:
        domains = sorted({u.domain_id for u in eval_split.utterances})
    enroll, test, target = [], [], []
    enrollments, model_domain, model_speaker = {}, {}, {}
    for d in domains:
        by_spk = {}
        for u in eval_split.utterances:
            if u.domain_id == d:
                by_spk.setdefault(u.speaker_id, []).append(u.utterance_id)
        if len(by_spk) < 2:
            raise ProtocolError(f"domain {d} needs at least 2 evaluation speakers")
        tests = []
        for spk in sorted(by_spk):
            utts = sorted(by_spk[spk])
            if len(utts) < protocol.n_enroll + 1:
                raise ProtocolError(
                    f"speaker {spk} in domain {d} has {len(utts)} utterances; "
                    f"{protocol.n_enroll} enrollment + 1 test are required")
            order = np.random.default_rng([protocol.seed, spk, d]).permutation(len(utts))
            utts = [utts[i] for i in order]
            mid = model_id(spk, d)
            enrollments[mid] = utts[:protocol.n_enroll]
            model_domain[mid] = d
            model_speaker[mid] = spk
            tests.extend((spk, u) for u in utts[protocol.n_enroll:])
        for spk in sorted(by_spk):
            mid = model_id(spk, d)
            for test_spk, utt in tests:
                enroll.append(mid)
                test.append(utt)
                target.append(test_spk == spk)
    return TrialProtocol(TrialList(enroll, test, target), enrollments, model_domain, model_speaker)
