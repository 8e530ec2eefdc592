"""Energy-minimal partial offloading and resource allocation for OFDMA mobile edge computing."""
from .config import ExperimentConfig, Params
from .driver import SolveReport, SolverOptions, solve, solve_epa_variant, solve_fr, solve_lc, solve_pa
from .model import Allocation, Scenario, UserTask, check_feasibility, system_energy
from .scenario import gen_scenario

__all__ = [
    "Allocation", "ExperimentConfig", "Params", "Scenario", "SolveReport", "SolverOptions", "UserTask",
    "check_feasibility", "gen_scenario", "solve", "solve_epa_variant", "solve_fr", "solve_lc", "solve_pa",
    "system_energy",
]
__version__ = "0.1.0"
