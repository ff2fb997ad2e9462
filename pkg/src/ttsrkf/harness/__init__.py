"""Experiment harness: data, metrics, configuration, runner and outputs."""

from .config import ExperimentConfig, load_config, parse_ranks
from .data import (
    Dataset,
    gen_synthetic_gp,
    gen_volterra,
    load_cascaded_tanks,
    read_dataset_csv,
    read_tanks_csv,
    simulate_tanks,
    write_dataset_csv,
    write_tanks_csv,
)
from .metrics import MetricsRow, compute_metrics
from .outputs import emit_outputs
from .runner import ExperimentResult, run_experiment

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "MetricsRow",
    "compute_metrics",
    "emit_outputs",
    "gen_synthetic_gp",
    "gen_volterra",
    "load_cascaded_tanks",
    "load_config",
    "parse_ranks",
    "read_dataset_csv",
    "read_tanks_csv",
    "run_experiment",
    "simulate_tanks",
    "write_dataset_csv",
    "write_tanks_csv",
]
