"""Monte Carlo experiment harness: scenario configs, runners, output and CLI."""

from .config import ConfigError, ScenarioConfig, build_config, load_config
from .experiments import (ConsensusRecord, DistRecord, MetricRecord, consensus_study, dist,
                          estimation_error_surface, mse_trace, pd_vs_snr, roc_auc, roc_sweep,
                          run_trial, run_trials)
from .io import emit_results, read_results, render_results

__all__ = [
    "ConfigError", "ScenarioConfig", "build_config", "load_config", "ConsensusRecord", "DistRecord",
    "MetricRecord", "consensus_study", "dist", "estimation_error_surface", "mse_trace", "pd_vs_snr",
    "roc_auc", "roc_sweep", "run_trial", "run_trials", "emit_results", "read_results", "render_results",
]
