"""Online feedback optimization with heterogeneous step sizes.

Projected gradient and primal-dual iterations with per-coordinate step
sizes, the switching rule that keeps their fixed points optimal, gradient
proxies from plant measurements, an adaptive step-size rule, and exact
reference solutions for checking tracking behaviour.
"""

from .adaptive import AdaptiveConfig, GroupRule, adapt_all, cosine_similarity, standard_config
from .comparison import AdaptiveVsFixed, RunMetrics, adaptive_vs_fixed, run_metrics
from .estimators import ExplorationSignal, MeasurementChannel, exploration_gamma, two_point_estimate
from .operators import (StepSizeGroups, min_regularization, monotonicity_matrix, saddle_data,
                        verify_strong_monotonicity)
from .oracle import (fixed_point_residual, reference_trajectory, solve_saddle_point,
                     tracking_report)
from .projection import Ball, Box, DualBox, Halfspace, Intersection, project
from .qp_model import FeedbackProblem, LinearPlant, QuadraticProgram, RegularizationParams
from .scenario import ScenarioTimeline, default_vpp_step_scenario, load_scenario
from .solvers import (SolverConfig, bisect_alpha, gamma_switch, primal_dual_step,
                      projected_gradient_step, run_online)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig", "AdaptiveVsFixed", "Ball", "Box", "DualBox", "ExplorationSignal",
    "FeedbackProblem", "GroupRule", "Halfspace", "Intersection", "LinearPlant",
    "MeasurementChannel", "QuadraticProgram", "RegularizationParams", "RunMetrics",
    "ScenarioTimeline", "SolverConfig", "StepSizeGroups", "adapt_all", "adaptive_vs_fixed",
    "bisect_alpha", "cosine_similarity", "default_vpp_step_scenario", "exploration_gamma",
    "fixed_point_residual", "gamma_switch", "load_scenario", "min_regularization",
    "monotonicity_matrix", "standard_config", "primal_dual_step", "project", "projected_gradient_step",
    "reference_trajectory", "run_metrics", "run_online", "saddle_data", "solve_saddle_point",
    "tracking_report", "two_point_estimate", "verify_strong_monotonicity",
]
