"""Adjoint-based sensor placement."""
from .cost import (AdjointSolution, ConfigError, CostBreakdown, PenaltyParams, PlanningProblem,
                   WeightingConfig, adjoint_residual, backward_sweep, cost_and_gradient,
                   evaluate_cost, excluded_cells, gradient, penalty, solve_adjoint, weighting_field)
from .descent import DescentConfig, DescentResult, clamp_path, descend, initial_positions, local_maxima
from .horizon import (DEFAULT_HORIZONS, PlanResult, WaypointLog, plan_receding_horizon,
                      read_waypoints)
