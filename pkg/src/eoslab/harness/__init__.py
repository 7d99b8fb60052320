"""Data generation, experiment runner, trace I/O and acceptance checks."""

from .data import gen_example3d, gen_linreg, gen_matcom, init_near_minimizer
from .detect import detect_eos_entry, detect_period2
from .experiments import ExperimentConfig, run_experiment
from .trace import TraceRow, read_csv, write_csv

__all__ = [
    "gen_linreg",
    "gen_matcom",
    "gen_example3d",
    "init_near_minimizer",
    "detect_eos_entry",
    "detect_period2",
    "ExperimentConfig",
    "run_experiment",
    "TraceRow",
    "read_csv",
    "write_csv",
]
