"""Domain-stratified mini-batches of random fixed-length segments."""
from dataclasses import dataclass

import numpy as np

from ..exceptions import PreconditionError, SamplingError


@dataclass
class DomainBatch:
    """One mini-batch; every list is indexed by domain.

    ``utterances[d]`` holds corpus indices and ``starts[d]`` the first frame
    of each window, so frozen-prefix caches can be sliced instead of rerun.
    """

    segments: list
    speakers: list
    domains: list
    utterances: list
    starts: list
    segment_len: int

    @property
    def n_domains(self):
        return len(self.segments)

    @property
    def sizes(self):
        return [len(u) for u in self.utterances]

    def stacked(self):
        present = [s for s in self.segments if len(s)]
        return np.concatenate(present, axis=0)

    def offsets(self):
        """Row ranges of each domain inside :meth:`stacked`."""
        edges = np.concatenate([[0], np.cumsum(self.sizes)])
        return [(int(edges[i]), int(edges[i + 1])) for i in range(self.n_domains)]


def domain_counts(batch_size, n_domains, rng):
    """``floor`` or ``ceil`` of ``batch_size / n_domains`` per domain; extras go to random domains."""
    base, extra = divmod(batch_size, n_domains)
    counts = np.full(n_domains, base)
    if extra:
        counts[rng.choice(n_domains, size=extra, replace=False)] += 1
    return counts


def sample_minibatch(corpus, batch_size, segment_len, rng, speaker_index=None):
    """Sample a domain-stratified batch of contiguous windows.

    Utterances are drawn uniformly with replacement inside each domain.
    Speaker labels are mapped through ``speaker_index`` (defaults to the
    corpus' contiguous labelling).
    """
    if batch_size < 1:
        raise PreconditionError("batch_size must be >= 1")
    if segment_len < 1:
        raise PreconditionError("segment_len must be >= 1")
    by_domain = corpus.domain_indices()
    if any(len(ix) == 0 for ix in by_domain):
        raise PreconditionError("every domain needs at least one utterance")
    speaker_index = speaker_index or corpus.speaker_index()
    counts = domain_counts(batch_size, len(by_domain), rng)
    segments, speakers, domains, utts, starts = [], [], [], [], []
    for d, (pool, n) in enumerate(zip(by_domain, counts)):
        chosen = np.asarray(pool)[rng.integers(len(pool), size=n)] if n else np.zeros(0, int)
        segs, firsts = [], []
        for idx in chosen:
            u = corpus.utterances[idx]
            if u.n_frames < segment_len:
                raise SamplingError(
                    f"utterance {u.utterance_id!r} has {u.n_frames} frames < segment_len {segment_len}")
            s = int(rng.integers(u.n_frames - segment_len + 1))
            segs.append(u.frames[s:s + segment_len])
            firsts.append(s)
        dim = corpus.feature_dim
        segments.append(np.stack(segs) if segs else np.zeros((0, segment_len, dim)))
        speakers.append(np.array([speaker_index[corpus.utterances[i].speaker_id] for i in chosen],
                                 dtype=int))
        domains.append(np.full(n, d, dtype=int))
        utts.append(chosen.astype(int))
        starts.append(np.asarray(firsts, dtype=int))
    return DomainBatch(segments, speakers, domains, utts, starts, int(segment_len))
