"""Experiment runner: configuration, initial data, persistence and the CLI."""

from .config import ExperimentConfig, load_config, parse_config
from .experiments import run_experiment
from .perturb import make_perturbed_metric
from .snapshot import snapshot_read, snapshot_write
