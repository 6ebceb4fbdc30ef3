"""Deterministic multi-domain speaker corpus.

Clean frames follow a small "phonetic" model: a shared inventory of phone
means plus a phone-specific projection of the speaker's latent identity,
a per-utterance session offset and white frame noise::

    x_t = m[p_t] + identity_scale * R[p_t] @ z_speaker + u_utt + frame_noise * e_t

Each domain then applies temporal smoothing, an affine channel and additive
white noise at a target SNR.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from ..exceptions import SpecError
from ..nn.network import FrameSequence

DOMAIN_NAMES = ("clean", "far_field", "booth", "field")


@dataclass
class DomainParams:
    """Channel/distance/noise condition of one acoustic domain."""

    A: np.ndarray
    b: np.ndarray
    snr_db: float = math.inf
    smoothing: float = 0.0
    name: str = ""

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        d = self.A.shape[0]
        if self.A.shape != (d, d) or self.b.shape != (d,):
            raise SpecError("channel matrix must be DxD and bias a D-vector")
        if not 0.0 <= self.smoothing < 1.0:
            raise SpecError("smoothing must lie in [0, 1)")
        if np.linalg.cond(self.A) >= 1e6:
            raise SpecError(f"channel matrix of domain {self.name!r} is near-singular")

    @property
    def is_identity(self):
        return (self.smoothing == 0.0 and math.isinf(self.snr_db) and self.snr_db > 0
                and np.array_equal(self.A, np.eye(self.A.shape[0])) and not self.b.any())


@dataclass
class SpeakerModel:
    identity: np.ndarray
    variability: float


def random_channel(rng, dim, strength, bias_scale):
    A = np.eye(dim) + strength * rng.normal(size=(dim, dim)) / np.sqrt(dim)
    return A, bias_scale * rng.normal(size=dim)


def default_domain_params(dim, seed=0, channel_strength=0.4, bias_scale=0.5):
    """Clean, far-field, booth-channel and noisy field presets (in that order).

    clean: identity, no noise; far-field: smoothing 0.6, 15 dB; booth:
    random channel, 30 dB; field: smoothing 0.6, random channel, 5 dB.
    """
    rng = np.random.default_rng([seed, 7919])
    eye, zero = np.eye(dim), np.zeros(dim)
    a_booth, b_booth = random_channel(rng, dim, channel_strength, bias_scale)
    a_field, b_field = random_channel(rng, dim, channel_strength, bias_scale)
    return [
        DomainParams(eye, zero, math.inf, 0.0, "clean"),
        DomainParams(eye, zero, 15.0, 0.6, "far_field"),
        DomainParams(a_booth, b_booth, 30.0, 0.0, "booth"),
        DomainParams(a_field, b_field, 5.0, 0.6, "field"),
    ]


def identity_domains(dim, n_domains=4):
    return [DomainParams(np.eye(dim), np.zeros(dim), math.inf, 0.0, f"copy{i}")
            for i in range(n_domains)]


@dataclass
class CorpusSpec:
    """Sizes, seeds and generative constants of one synthetic corpus.

    ``domain_params=None`` selects :func:`default_domain_params`. The
    phone inventory is drawn from ``language_seed`` so corpora with
    different ``seed`` (e.g. a pretraining corpus) share it.
    """

    n_speakers: int = 75
    utts_per_speaker_per_domain: int = 8
    feature_dim: int = 20
    frames_range: tuple = (800, 1200)
    n_domains: int = 4
    domain_params: list = None
    seed: int = 0
    holdout_speakers: int = 16
    eval_utts_per_speaker_per_domain: int = None
    min_frames: int = 0
    n_phones: int = 12
    phone_duration: tuple = (2, 6)
    phone_spread: float = 2.0
    identity_scale: float = 1.0
    session_scale: float = 1.0
    variability_spread: float = 0.3
    frame_noise: float = 0.7
    language_seed: int = 0

    def __post_init__(self):
        self.frames_range = tuple(int(v) for v in self.frames_range)
        self.phone_duration = tuple(int(v) for v in self.phone_duration)
        if self.domain_params is None:
            self.domain_params = default_domain_params(self.feature_dim, self.seed)[:self.n_domains]
        self.validate()

    def validate(self):
        lo, hi = self.frames_range
        if self.n_speakers < 1 or self.utts_per_speaker_per_domain < 1 or self.feature_dim < 1:
            raise SpecError("sizes must be positive")
        if not 1 <= lo <= hi:
            raise SpecError("frames_range must satisfy 1 <= min <= max")
        if lo < self.min_frames:
            raise SpecError(
                f"frames_range min {lo} is below receptive field + segment length ({self.min_frames})")
        if not 0 <= self.holdout_speakers < self.n_speakers:
            raise SpecError("holdout_speakers must be in [0, n_speakers)")
        if len(self.domain_params) != self.n_domains:
            raise SpecError("one DomainParams per domain is required")
        for dp in self.domain_params:
            if dp.A.shape[0] != self.feature_dim:
                raise SpecError("domain channel dimension differs from feature_dim")
        if self.n_phones < 1 or not 1 <= self.phone_duration[0] <= self.phone_duration[1]:
            raise SpecError("invalid phone model")

    @property
    def eval_utts(self):
        return self.eval_utts_per_speaker_per_domain or self.utts_per_speaker_per_domain


@dataclass
class Corpus:
    """Utterances of one split plus bookkeeping."""

    utterances: list
    n_domains: int
    feature_dim: int
    domain_names: tuple = ()
    speakers: list = field(default_factory=list)

    def __post_init__(self):
        if not self.speakers:
            self.speakers = sorted({u.speaker_id for u in self.utterances})

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def by_domain(self, d):
        return [u for u in self.utterances if u.domain_id == d]

    def domain_indices(self):
        out = [[] for _ in range(self.n_domains)]
        for i, u in enumerate(self.utterances):
            out[u.domain_id].append(i)
        return out

    def speaker_index(self):
        """Map speaker id -> contiguous class label."""
        return {s: i for i, s in enumerate(self.speakers)}

    def subset(self, domains):
        keep = set(domains)
        return Corpus([u for u in self.utterances if u.domain_id in keep], self.n_domains,
                      self.feature_dim, self.domain_names)


@dataclass
class SplitCorpus:
    train: Corpus
    eval: Corpus
    spec: CorpusSpec


class _Language:
    def __init__(self, spec):
        rng = np.random.default_rng([spec.language_seed, 104729, spec.feature_dim, spec.n_phones])
        d = spec.feature_dim
        self.means = spec.phone_spread * rng.normal(size=(spec.n_phones, d))
        self.maps = rng.normal(size=(spec.n_phones, d, d)) / np.sqrt(d)


def speaker_model(spec, speaker):
    rng = np.random.default_rng([spec.seed, 1, speaker])
    identity = rng.normal(size=spec.feature_dim)
    variability = spec.session_scale * math.exp(spec.variability_spread * rng.normal())
    return SpeakerModel(identity, variability)


def utterance_rng(spec, speaker, domain, index):
    return np.random.default_rng([spec.seed, 2, speaker, domain, index])


def clean_frames(spec, speaker, domain, index, language=None, model=None):
    """Clean (pre-domain) frames of one utterance; deterministic in its indices."""
    language = language or _Language(spec)
    model = model or speaker_model(spec, speaker)
    rng = utterance_rng(spec, speaker, domain, index)
    lo, hi = spec.frames_range
    n = int(rng.integers(lo, hi + 1))
    dmin, dmax = spec.phone_duration
    phones = []
    while len(phones) < n:
        p = int(rng.integers(spec.n_phones))
        phones.extend([p] * int(rng.integers(dmin, dmax + 1)))
    phones = np.asarray(phones[:n])
    offsets = spec.identity_scale * np.einsum("pij,j->pi", language.maps, model.identity)
    session = model.variability * rng.normal(size=spec.feature_dim)
    noise = spec.frame_noise * rng.normal(size=(n, spec.feature_dim))
    return language.means[phones] + offsets[phones] + session + noise, rng


def domain_transform(clean, params, rng):
    """Smooth, apply the affine channel, then add white noise at ``params.snr_db``.

    Smoothing is the first-order recursion ``y_t = (1-c) x_t + c y_{t-1}``
    with zero initial state; SNR is the ratio of the per-utterance signal
    variance (averaged over dimensions) to the noise variance.
    """
    frames = clean.frames if isinstance(clean, FrameSequence) else np.asarray(clean, dtype=float)
    out = frames
    if params.smoothing > 0.0:
        c = params.smoothing
        out = lfilter([1.0 - c], [1.0, -c], out, axis=0)
    if not (np.array_equal(params.A, np.eye(params.A.shape[0])) and not params.b.any()):
        out = out @ params.A.T + params.b
    if not math.isinf(params.snr_db):
        signal_var = float(out.var(axis=0).mean())
        noise_var = signal_var / 10.0 ** (params.snr_db / 10.0)
        out = out + math.sqrt(noise_var) * rng.normal(size=out.shape)
    if isinstance(clean, FrameSequence):
        return FrameSequence(out, clean.utterance_id, clean.speaker_id, clean.domain_id)
    return out


def utterance_id(speaker, domain, index):
    return f"spk{speaker:04d}-d{domain}-u{index:03d}"


def generate_corpus(spec):
    """Build the speaker-disjoint train/eval split described by ``spec``.

    The last ``holdout_speakers`` speaker ids form the evaluation split.
    Frames are rounded to float32 precision so files reproduce them exactly.
    """
    spec.validate()
    language = _Language(spec)
    n_train = spec.n_speakers - spec.holdout_speakers
    train, evaluation = [], []
    for s in range(spec.n_speakers):
        model = speaker_model(spec, s)
        held_out = s >= n_train
        n_utts = spec.eval_utts if held_out else spec.utts_per_speaker_per_domain
        for d, params in enumerate(spec.domain_params):
            for k in range(n_utts):
                frames, rng = clean_frames(spec, s, d, k, language, model)
                frames = domain_transform(frames, params, rng)
                frames = frames.astype(np.float32).astype(np.float64)
                seq = FrameSequence(frames, utterance_id(s, d, k), s, d)
                (evaluation if held_out else train).append(seq)
    names = tuple(dp.name or DOMAIN_NAMES[i] for i, dp in enumerate(spec.domain_params))
    return SplitCorpus(
        Corpus(train, spec.n_domains, spec.feature_dim, names),
        Corpus(evaluation, spec.n_domains, spec.feature_dim, names),
        spec,
    )


def pretraining_spec(target, n_speakers=200, utts_per_speaker=8, seed_offset=1000):
    """Out-of-domain source corpus: clean plus a mildly noisy copy.

    Shares the phone inventory of ``target`` but uses disjoint speakers, no
    channel and no smoothing.
    """
    dim = target.feature_dim
    eye, zero = np.eye(dim), np.zeros(dim)
    domains = [DomainParams(eye, zero, math.inf, 0.0, "source_clean"),
               DomainParams(eye, zero, 15.0, 0.0, "source_noisy")]
    return replace(target, n_speakers=n_speakers, utts_per_speaker_per_domain=utts_per_speaker,
                   n_domains=2, domain_params=domains, seed=target.seed + seed_offset,
                   holdout_speakers=0, eval_utts_per_speaker_per_domain=None)
