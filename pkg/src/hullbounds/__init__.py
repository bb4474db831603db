"""Sharp bounds on E[g(X)] under moment constraints and a support restriction."""

from .closed_forms import (JensenBounds, ThreePointParam, jarzynski_bound, jensen_gap_bounds,
                           markov_bound, mgf_bounds, mgf_interval_bounds, power_mean_bounds,
                           three_point_atoms, three_point_extremize, variance_range)
from .config import Config, ConfigError, load_config, parse_config
from .dual import (BOUNDARY, FEASIBLE, INFEASIBLE, BoundResult, DualCertificate,
                   FeasibilityReport, ProblemError, SolverParams, StageRecord, check_feasibility,
                   extrapolate_limit, loose_bound, solve_dual)
from .expr import (DomainError, Expr, ExprError, ExprSyntaxError, eval_expr, eval_many,
                   format_expr, parse_expr)
from .inner import InnerOptimizer, InnerResult, evaluate_inner, subgradient_from
from .model import (Box, DiscreteMeasure, Exclusion, FinitePoints, IntervalUnion, ProblemSpec,
                    TruncationSchedule, close_defined_endpoints, measure_expectation,
                    stage_count, truncation_stage, validate_problem)
from .oracle import OracleInfeasible, enumerate_bound, lp_bound, lp_bound_points, simplex_solve
from .recovery import (CertificateCheck, RecoveryError, Unmatchable, active_points,
                       caratheodory_reduce, match_moments, polish_atoms, verify_certificate)

__all__ = [
    "parse_expr", "eval_expr", "eval_many", "format_expr", "Expr", "ExprError",
    "ExprSyntaxError", "DomainError",
    "Box", "IntervalUnion", "FinitePoints", "Exclusion", "TruncationSchedule", "ProblemSpec",
    "DiscreteMeasure", "validate_problem", "measure_expectation", "truncation_stage",
    "stage_count", "close_defined_endpoints",
    "InnerOptimizer", "InnerResult", "evaluate_inner", "subgradient_from",
    "SolverParams", "FeasibilityReport", "DualCertificate", "StageRecord", "BoundResult",
    "ProblemError", "check_feasibility", "solve_dual", "loose_bound", "extrapolate_limit",
    "FEASIBLE", "INFEASIBLE", "BOUNDARY",
    "OracleInfeasible", "simplex_solve", "lp_bound", "lp_bound_points", "enumerate_bound",
    "RecoveryError", "Unmatchable", "CertificateCheck", "active_points", "caratheodory_reduce",
    "match_moments", "polish_atoms", "verify_certificate",
    "JensenBounds", "ThreePointParam", "variance_range", "jensen_gap_bounds", "mgf_bounds",
    "mgf_interval_bounds", "power_mean_bounds", "three_point_atoms", "three_point_extremize",
    "markov_bound", "jarzynski_bound",
    "Config", "ConfigError", "load_config", "parse_config",
]
