"""Lower bounds on quantum annealing times, checked against simulated dynamics."""

__version__ = "0.1.0"

from .bounds import (
    BoundReport,
    bound_report,
    check_hierarchy,
    coherence_excitation_floor,
    control_bound,
    ideal_tau3,
    min_controls_estimate,
    adiabatic_diagnostics,
)
from .dynamics import StepPolicy, Trajectory, propagate, simulate, simulate_with_controls
from .errors import AnnealError
from .optimize import Family, OptimizationResult, minimal_time_search, optimize_fixed_tf, sweep
from .problems import (
    AnnealProblem,
    build_hamming_spike,
    build_pspin,
    build_random_klocal,
    build_search,
)
from .schedules import ControlSchedule, Schedule

__all__ = [
    "AnnealError", "AnnealProblem", "BoundReport", "ControlSchedule", "Family",
    "OptimizationResult", "Schedule", "StepPolicy", "Trajectory", "adiabatic_diagnostics",
    "bound_report", "build_hamming_spike", "build_pspin", "build_random_klocal", "build_search",
    "check_hierarchy", "coherence_excitation_floor", "control_bound", "ideal_tau3",
    "min_controls_estimate", "minimal_time_search", "optimize_fixed_tf", "propagate", "simulate",
    "simulate_with_controls", "sweep",
]
