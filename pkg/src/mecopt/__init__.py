"""Energy-minimal partial offloading over an uplink MIMO-NOMA channel.

Multi-antenna users split a computation task between local execution and an
edge server; the library jointly tunes per-user CPU frequency, offloading
ratio, and transmit covariance to minimize total energy under per-user
deadlines, and ships a seeded Monte-Carlo harness around the solvers.
"""

from .closed_form import (RatioCoefficients, beta_floor, optimal_frequency,
                          optimal_ratio, ratio_objective)
from .convex_core import (bisect_p61, min_power_for_rate, p81_feasible,
                          solve_surrogate, waterfill_max_rate, waterfill_rate)
from .errors import (ConfigError, DeadlineUnreachableError,
                     FrequencyCapExceededError, FrequencyZeroError,
                     InstanceInfeasibleError, MecoptError,
                     NumericalFailureError, OffloadRateZeroError,
                     RateConstraintInfeasibleError, SurrogateInfeasibleError)
from .harness import (ExperimentConfig, TrialRecord, child_seed,
                      generate_channels, load_config, run, splitmix64)
from .model import (ChannelSet, EnergyBreakdown, FeasibilityReport,
                    ModelAssumptionWarning, OffloadDecision, PrecoderSet,
                    SystemParams, TaskSpec, achievable_rate,
                    check_constraints, evaluate, interference_covariance)
from .optimizer import (Scenario, Solution, SolverKnobs, solve_fdma,
                        solve_full_offload, solve_joint, solve_local)
from .oracles import GridResult, grid_rate_feasible, oracle_grid
from .precoding import offload_requirements, solve_p5, solve_p51, solve_p52
from .report import render_report

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model
    "SystemParams", "TaskSpec", "ChannelSet", "PrecoderSet", "OffloadDecision",
    "EnergyBreakdown", "FeasibilityReport", "ModelAssumptionWarning",
    "evaluate", "check_constraints", "achievable_rate",
    "interference_covariance",
    # closed-form per-user updates
    "RatioCoefficients", "ratio_objective", "optimal_ratio",
    "optimal_frequency", "beta_floor",
    # covariance subproblems
    "waterfill_max_rate", "waterfill_rate", "min_power_for_rate",
    "p81_feasible", "bisect_p61", "solve_surrogate",
    "offload_requirements", "solve_p51", "solve_p52", "solve_p5",
    # joint solvers
    "Scenario", "Solution", "SolverKnobs", "solve_joint", "solve_local",
    "solve_full_offload", "solve_fdma",
    # harness
    "ExperimentConfig", "TrialRecord", "load_config", "run",
    "generate_channels", "child_seed", "splitmix64",
    "GridResult", "oracle_grid", "grid_rate_feasible", "render_report",
    # errors
    "MecoptError", "ConfigError", "OffloadRateZeroError", "FrequencyZeroError",
    "FrequencyCapExceededError", "InstanceInfeasibleError",
    "RateConstraintInfeasibleError", "SurrogateInfeasibleError",
    "DeadlineUnreachableError", "NumericalFailureError",
]
