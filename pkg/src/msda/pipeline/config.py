"""Experiment configuration: one TOML document with a section per stage."""
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from ..corpus import CorpusSpec, identity_domains
from ..exceptions import ConfigurationError
from ..training import MethodConfig, OptimizerConfig, TrainRunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHODS = ("baseline", "finetune", "dat", "mmd", "m3sda")
TRAINER_METHOD = {"baseline": "finetune", "finetune": "finetune", "dat": "dat", "mmd": "mmd",
                  "m3sda": "moment_matching"}


@dataclass
class ExperimentSection:
    method: str = "m3sda"
    seed: int = 0
    output_dir: str = "msda-out"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")


@dataclass
class CorpusSection:
    """Target corpus sizes; ``domains`` is ``"default"`` or ``"identity"``."""

    n_speakers: int = 75
    utts_per_speaker_per_domain: int = 8
    eval_utts_per_speaker_per_domain: int = 26
    holdout_speakers: int = 16
    frames_min: int = 300
    frames_max: int = 400
    feature_dim: int = 20
    domains: str = "default"
    n_enroll: int = 6

    def __post_init__(self):
        if self.domains not in ("default", "identity"):
            raise ConfigurationError("corpus.domains must be 'default' or 'identity'")

    def spec(self, seed):
        kw = dict(n_speakers=self.n_speakers,
                  utts_per_speaker_per_domain=self.utts_per_speaker_per_domain,
                  eval_utts_per_speaker_per_domain=self.eval_utts_per_speaker_per_domain,
                  holdout_speakers=self.holdout_speakers,
                  frames_range=(self.frames_min, self.frames_max),
                  feature_dim=self.feature_dim, seed=seed)
        if self.domains == "identity":
            kw["domain_params"] = identity_domains(self.feature_dim)
        return CorpusSpec(**kw)


@dataclass
class NetworkSection:
    frame_dim: int = 64
    embed_dim: int = 64
    head_hidden: int = 64


@dataclass
class PretrainSection:
    """Out-of-domain source corpus and its training schedule."""

    n_speakers: int = 200
    utts_per_speaker: int = 8
    epochs: int = 12
    batch_size: int = 32
    segment_min: int = 100
    segment_max: int = 150
    base_lr: float = 1e-3
    warmup_steps: int = 100

    def optimizer(self):
        return OptimizerConfig.pretraining(base_lr=self.base_lr, warmup_steps=self.warmup_steps)

    def run(self, seed):
        return TrainRunConfig(epochs=self.epochs, batch_size=self.batch_size,
                              segment_len=self.segment_min, segment_len_max=self.segment_max,
                              seed=seed)


@dataclass
class BackendSection:
    lda_dim: int = 200
    plda_iters: int = 20
    length_norm: bool = True
    snorm_top_k: int = 0


def _adapt_run_default():
    return TrainRunConfig(epochs=30, epochs2=10, batch_size=64, segment_len=100,
                          segment_len_max=150, layer_selection=("F4", "F5", "fc1"))


def _adapt_optimizer_default():
    return OptimizerConfig(base_lr=1e-3)


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    optimizer: OptimizerConfig = field(default_factory=_adapt_optimizer_default)
    run: TrainRunConfig = field(default_factory=_adapt_run_default)
    method: MethodConfig = field(default_factory=MethodConfig)
    backend: BackendSection = field(default_factory=BackendSection)

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def trainer_method(self):
        """Method settings with the name the trainers expect."""
        return replace(self.method, name=TRAINER_METHOD[self.experiment.method])

    def corpus_spec(self):
        return self.corpus.spec(self.experiment.seed)

    def adapt_run(self):
        run = replace(self.run, seed=self.experiment.seed)
        if self.experiment.method != "m3sda":
            run = replace(run, epochs2=0)
        return run


SECTIONS = {
    "experiment": ExperimentSection, "corpus": CorpusSection, "network": NetworkSection,
    "pretrain": PretrainSection, "optimizer": OptimizerConfig, "run": TrainRunConfig,
    "method": MethodConfig, "backend": BackendSection,
}


def section_fields(name):
    return {f.name: f for f in fields(SECTIONS[name])}


def build_config(data):
    """Config from a nested mapping; missing keys keep their defaults, unknown keys fail."""
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown section(s): {', '.join(sorted(unknown))}")
    base = ExperimentConfig()
    sections = {}
    for name, cls in SECTIONS.items():
        values = data.get(name, {})
        if not isinstance(values, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        bad = set(values) - set(section_fields(name))
        if bad:
            raise ConfigurationError(f"unknown key(s) in [{name}]: {', '.join(sorted(bad))}")
        merged = dict(asdict(getattr(base, name)))
        merged.update(values)
        try:
            sections[name] = cls(**merged)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"[{name}]: {exc}") from None
    return ExperimentConfig(**sections)


def merge(*layers):
    """Deep-merge section mappings left to right."""
    out = {}
    for layer in layers:
        for section, values in layer.items():
            out.setdefault(section, {}).update(values)
    return out


def read_config_file(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def load_config(path):
    return build_config(read_config_file(path))
