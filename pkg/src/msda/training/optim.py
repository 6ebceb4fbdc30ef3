"""Adam optimiser with per-module learning rates and the polynomial LR decay."""
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError, PreconditionError


@dataclass
class OptimizerConfig:
    """Adaptive-moment optimiser settings.

    The extractor follows ``base_lr / (1 + lr_decay * p) ** lr_exponent``;
    classifier heads use ``head_lr`` (``None`` means ``base_lr``) with the
    same decay factor. ``warmup_steps`` ramps the rate linearly from zero.
    """

    method: str = "adam"
    base_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    lr_decay: float = 10.0
    lr_exponent: float = 0.75
    warmup_steps: int = 0
    head_lr: float = 1e-3
    eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method != "adam":
            raise ConfigurationError(f"unsupported optimiser {self.method!r}")
        if not self.base_lr > 0:
            raise ConfigurationError("base_lr must be > 0")
        if self.head_lr is not None and not self.head_lr > 0:
            raise ConfigurationError("head_lr must be > 0")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if self.lr_decay < 0 or self.lr_exponent < 0:
            raise ConfigurationError("lr_decay and lr_exponent must be >= 0")
        if int(self.warmup_steps) != self.warmup_steps or self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be a non-negative integer")

    @classmethod
    def pretraining(cls, **kw):
        """Flat 1e-3 with warm-up, as used for source-domain pretraining."""
        base = dict(base_lr=1e-3, lr_decay=0.0, warmup_steps=500, head_lr=None)
        base.update(kw)
        return cls(**base)


def lr_schedule(cfg, p):
    """``base_lr / (1 + lr_decay * p) ** lr_exponent`` for progress ``p`` in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise PreconditionError(f"progress p={p} outside [0, 1]")
    return cfg.base_lr / (1.0 + cfg.lr_decay * p) ** cfg.lr_exponent


def warmup_factor(cfg, step):
    """Linear ramp ``min(1, step / warmup_steps)`` for the 1-based ``step``."""
    if cfg.warmup_steps <= 0:
        return 1.0
    return min(1.0, step / cfg.warmup_steps)


def learning_rates(cfg, p, step):
    """``(extractor_lr, head_lr)`` at progress ``p`` and 1-based ``step``."""
    scale = warmup_factor(cfg, step) / (1.0 + cfg.lr_decay * p) ** cfg.lr_exponent
    head = cfg.base_lr if cfg.head_lr is None else cfg.head_lr
    return lr_schedule(cfg, p) * warmup_factor(cfg, step), head * scale


class Adam:
    """Adam over the trainable layers of several named networks.

    Moments are keyed by ``(module, layer, parameter)``; each key keeps its
    own step count so modules updated at different rates stay consistent.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.m, self.v, self.t = {}, {}, {}

    def step(self, module, net, grads, lr, layers=None):
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        names = net.trainable_layers if layers is None else layers
        for layer in names:
            for pname, value in net.params[layer].items():
                g = grads[layer][pname]
                key = (module, layer, pname)
                if key not in self.m:
                    self.m[key] = np.zeros_like(value)
                    self.v[key] = np.zeros_like(value)
                    self.t[key] = 0
                self.t[key] += 1
                t = self.t[key]
                self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
                self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
                m_hat = self.m[key] / (1.0 - b1 ** t)
                v_hat = self.v[key] / (1.0 - b2 ** t)
                value -= lr * m_hat / (np.sqrt(v_hat) + eps)
