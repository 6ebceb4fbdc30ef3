"""Optimiser, sampling and the training procedures."""
from .config import (MethodConfig, TrainingConfig, TrainRunConfig, load_training_config,
                     parse_training_config)
from .objectives import (classifier_step_objective, generator_objective, mmd_objective,
                         speaker_objective)
from .optim import Adam, OptimizerConfig, learning_rates, lr_schedule, warmup_factor
from .sampling import DomainBatch, sample_minibatch
from .trainers import (SegmentEncoder, TrainReport, apply_layer_selection, fine_tune, pretrain,
                       train_dat, train_discrepancy_min, train_moment_matching, train_multihead,
                       truncate_head)

__all__ = [
    "Adam", "DomainBatch", "MethodConfig", "OptimizerConfig", "SegmentEncoder", "TrainReport",
    "TrainRunConfig", "TrainingConfig", "apply_layer_selection", "classifier_step_objective",
    "fine_tune", "generator_objective", "learning_rates", "load_training_config", "lr_schedule",
    "mmd_objective", "parse_training_config", "pretrain", "sample_minibatch", "speaker_objective",
    "train_dat", "train_discrepancy_min", "train_moment_matching", "train_multihead",
    "truncate_head", "warmup_factor",
]
