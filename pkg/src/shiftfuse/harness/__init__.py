"""Synthetic data, seam metrics, experiment orchestration and the CLI."""
from .experiment import ExperimentConfig, compare_strategies, run_experiment, sweep_alpha
from .metrics import SeamReport, seam_metric
from .synthetic import gen_synthetic, gen_tracks

__all__ = ["ExperimentConfig", "compare_strategies", "run_experiment", "sweep_alpha",
           "SeamReport", "seam_metric", "gen_synthetic", "gen_tracks"]
