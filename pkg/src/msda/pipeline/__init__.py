"""Experiment configuration, stage orchestration, reports and the command line."""
from .config import ExperimentConfig, build_config, load_config
from .report import SCHEMA_VERSION, export_report, read_report
from .stages import ORDER, OUTPUT_ENV, StageError, run_experiment, run_stage

__all__ = [
    "ExperimentConfig", "ORDER", "OUTPUT_ENV", "SCHEMA_VERSION", "StageError", "build_config",
    "export_report", "load_config", "read_report", "run_experiment", "run_stage",
]
