"""Discrete-event evaluation of scheduling strategies."""

from .engine import EVENT_KINDS, SimulationResult, Simulator, Strategy, run_simulation
from .metrics import COLUMNS, compare_results, ed2p, edp, rows_to_csv, rows_to_markdown
from .workloads import MolDesignWorkload, StaticWorkload, gen_moldesign_workload, gen_synthetic_workload

__all__ = [
    "COLUMNS",
    "EVENT_KINDS",
    "MolDesignWorkload",
    "SimulationResult",
    "Simulator",
    "StaticWorkload",
    "Strategy",
    "compare_results",
    "ed2p",
    "edp",
    "gen_moldesign_workload",
    "gen_synthetic_workload",
    "rows_to_csv",
    "rows_to_markdown",
    "run_simulation",
]
