"""Sweep harness: configuration, runs, exports and the command line."""

from .config import DEFAULTS, Config, ConfigError, load_config, resolve
from .export import export_plots, noise_fits
from .runner import Cell, RunRecord, cell_seed, read_records, run_single, run_sweep, sweep_cells

__all__ = [
    "DEFAULTS", "Config", "ConfigError", "load_config", "resolve", "export_plots", "noise_fits",
    "Cell", "RunRecord", "cell_seed", "read_records", "run_single", "run_sweep", "sweep_cells",
]
