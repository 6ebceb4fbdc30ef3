"""Run/method settings and the TOML training-config loader."""
import sys
from dataclasses import asdict, dataclass, fields

from ..exceptions import ConfigurationError
from .optim import OptimizerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHODS = ("pretrain", "finetune", "dat", "mmd", "moment_matching")


@dataclass
class TrainRunConfig:
    """Epoch counts, batching and the layers unfrozen during adaptation.

    ``epochs`` is T1 and ``epochs2`` is T2 of the moment-matching schema.
    When ``segment_len_max`` is set every step draws its segment length
    uniformly from ``[segment_len, segment_len_max]``.
    """

    epochs: int = 40
    epochs2: int = 0
    batch_size: int = 64
    segment_len: int = 400
    segment_len_max: int = None
    inner_generator_steps: int = 4
    seed: int = 0
    layer_selection: tuple = ("F5", "fc1")
    steps_per_epoch: int = None
    cache_prefix: bool = True
    verify_frozen: bool = True

    def __post_init__(self):
        self.layer_selection = tuple(self.layer_selection)
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.inner_generator_steps < 1:
            raise ConfigurationError("inner_generator_steps must be >= 1")
        if self.epochs < 0 or self.epochs2 < 0:
            raise ConfigurationError("epoch counts must be >= 0")
        if self.segment_len < 1:
            raise ConfigurationError("segment_len must be >= 1")
        if self.segment_len_max is not None and self.segment_len_max < self.segment_len:
            raise ConfigurationError("segment_len_max must be >= segment_len")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigurationError("steps_per_epoch must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")


@dataclass
class MethodConfig:
    """Objective-specific knobs.

    ``fixed_weight`` pins the adaptation weight (lambda or mu) instead of
    the progressive schedule; ``mmd_weight`` multiplies the MMD term.
    """

    name: str = "mmd"
    theta: float = 10.0
    fixed_weight: float = None
    mmd_weight: float = 1.0
    bandwidth: object = "median"
    mmd_max_frames: int = 64
    domain_hidden: int = 32
    head_hidden: int = 64

    def __post_init__(self):
        if self.name not in METHODS:
            raise ConfigurationError(f"unknown method {self.name!r}; expected one of {METHODS}")
        if self.theta <= 0:
            raise ConfigurationError("theta must be > 0")
        if self.fixed_weight is not None and self.fixed_weight < 0:
            raise ConfigurationError("fixed_weight must be >= 0")
        if self.mmd_weight < 0:
            raise ConfigurationError("mmd_weight must be >= 0")
        if self.bandwidth != "median" and not (isinstance(self.bandwidth, (int, float))
                                               and self.bandwidth > 0):
            raise ConfigurationError("bandwidth must be 'median' or a positive number")
        if self.mmd_max_frames < 1:
            raise ConfigurationError("mmd_max_frames must be >= 1")


@dataclass
class TrainingConfig:
    optimizer: OptimizerConfig
    run: TrainRunConfig
    method: MethodConfig

    def to_dict(self):
        return {"optimizer": asdict(self.optimizer), "run": asdict(self.run),
                "method": asdict(self.method)}


_SECTIONS = {"optimizer": OptimizerConfig, "run": TrainRunConfig, "method": MethodConfig}


def build_section(cls, values, section):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(f"[{section}]: {exc}") from None


def parse_training_config(data):
    """Build a :class:`TrainingConfig` from a parsed mapping."""
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown section(s): {', '.join(sorted(unknown))}")
    return TrainingConfig(**{name: build_section(cls, data.get(name, {}), name)
                             for name, cls in _SECTIONS.items()})


def load_training_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return parse_training_config(data)
