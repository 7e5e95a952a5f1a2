"""Benchmark harness: scenario files, Monte-Carlo studies, exports and the CLI."""

from .scenario import Scenario, ScenarioError, bundled_scenario, load_scenario, resolve_scenario
from .studies import (
    MseReport,
    Study,
    StudyRecord,
    normalized_mse,
    run_ablation,
    run_mse_comparison,
    run_regularization_grid,
    run_success_study,
)

__all__ = [
    "MseReport", "Scenario", "ScenarioError", "Study", "StudyRecord", "bundled_scenario",
    "load_scenario", "normalized_mse", "resolve_scenario", "run_ablation", "run_mse_comparison",
    "run_regularization_grid", "run_success_study",
]
