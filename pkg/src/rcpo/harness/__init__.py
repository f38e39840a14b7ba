"""Experiment configuration, seeded runs, evaluation and plots."""

from ..rollout import EvalResult, evaluate_policy
from .config import ConfigError, EnvConfig, ExperimentConfig, dump_config, parse_config, read_config
from .plotting import emit_plots
from .runner import RunArtifacts, build_env, run_experiment, run_seed
