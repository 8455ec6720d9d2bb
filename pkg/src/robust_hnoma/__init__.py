"""Worst-case robust uplink power minimization for BackCom-assisted hybrid NOMA."""

__version__ = "0.1.0"

from .evaluation import EvalConfig, EvalReport, pf_montecarlo, robust_rate_check, sweep  # noqa: E402
from .optimizer import (  # noqa: E402
    RobustDesign,
    SolveParams,
    penalized_mm,
    run_method,
    solve_nominal,
    solve_oma,
    solve_robust,
)
from .scenario import ConfigError, GenConfig, Scenario, generate_scenario, load_scenario, save_scenario  # noqa: E402

__all__ = [
    "ConfigError", "EvalConfig", "EvalReport", "GenConfig", "RobustDesign", "Scenario", "SolveParams",
    "generate_scenario", "load_scenario", "penalized_mm", "pf_montecarlo", "robust_rate_check", "run_method",
    "save_scenario", "solve_nominal", "solve_oma", "solve_robust", "sweep",
]
