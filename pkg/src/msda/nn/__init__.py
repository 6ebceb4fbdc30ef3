"""Differentiable building blocks of the x-vector style embedding network."""
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .features import sliding_cmn
from .layers import (LayerSpec, grad_reversal_backward, log_softmax, softmax,
                     softmax_cross_entropy)
from .network import (ClassifierHead, EmbeddingNetwork, FrameSequence, LayerActivations,
                      Network, backward, build_domain_head, build_extractor,
                      build_speaker_head, default_extractor_specs, forward)

__all__ = [
    "ClassifierHead", "EmbeddingNetwork", "FrameSequence", "LayerActivations", "LayerSpec",
    "Network", "backward", "build_domain_head", "build_extractor", "build_speaker_head",
    "default_extractor_specs", "forward", "grad_reversal_backward", "load_checkpoint",
    "log_softmax", "save_checkpoint", "sliding_cmn", "softmax", "softmax_cross_entropy",
]
