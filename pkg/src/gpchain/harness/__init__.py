"""Configuration, experiment pipelines, reports and file I/O for the command line."""

from .config import ExperimentConfig, load_config, validate
from .experiments import (ChainRun, MonotonicityReport, StabilityReport, TransferReport, momentum_transfer,
                          monotonicity_report, run_chain, run_experiment, stability_report)

__all__ = ["ExperimentConfig", "load_config", "validate", "ChainRun", "MonotonicityReport",
           "StabilityReport", "TransferReport", "momentum_transfer", "monotonicity_report",
           "run_chain", "run_experiment", "stability_report"]
