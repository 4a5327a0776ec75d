"""Experiment runner: specs, artifact workspace, reports and the CLI."""

from .experiments import expected_cells, run
from .report import FIGURES, emit_plot_data, plot_series, write_report
from .spec import EXPERIMENTS, ConfigError, ExperimentSpec, InvariantViolation, MissingArtifactError, load_spec

__all__ = [
    "EXPERIMENTS", "FIGURES", "ConfigError", "ExperimentSpec", "InvariantViolation", "MissingArtifactError",
    "emit_plot_data", "expected_cells", "load_spec", "plot_series", "run", "write_report",
]
